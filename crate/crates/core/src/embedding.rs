//! Skip-gram label embedding with negative sampling.
//!
//! For every position in a sentence and every other position within the
//! window, the context label's input vector is trained to predict the
//! center label's output vector, against `negatives` noise labels drawn
//! from the unigram distribution raised to 3/4. The window is an unordered
//! set: no positional weighting and no random shrinking.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::format::FormatError;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary is empty after min-count filtering")]
    EmptyVocabulary,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("vector file {0}")]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub alpha: f64,
    pub min_alpha: f64,
    pub min_count: u64,
    pub seed: u64,
    /// 1 trains sequentially and deterministically; more workers update
    /// shared vectors concurrently without synchronization.
    pub workers: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dim: 64,
            window: 1,
            epochs: 5,
            negatives: 5,
            alpha: 0.025,
            min_alpha: 1e-4,
            min_count: 1,
            seed: 1,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    dim: usize,
    vocab: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    input: Vec<f64>,
    output: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative derivative of the pair loss with respect to the dot product.
#[inline]
fn pair_coefficient(dot: f64, is_negative: bool) -> f64 {
    let target = if is_negative { 0.0 } else { 1.0 };
    target - sigmoid(dot)
}

/// Loss and gradients of one (center, context) or (noise, context) pair.
///
/// The loss is `-ln σ(±u·v)` with `u` the output vector of the predicted
/// label and `v` the input vector of the context label; the sign is negative
/// for noise pairs. Returns `(loss, ∂/∂v, ∂/∂u)`.
pub fn pair_objective_gradient(
    center_out: &[f64],
    context_in: &[f64],
    is_negative: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    assert_eq!(center_out.len(), context_in.len(), "vector lengths differ");
    let dot: f64 = center_out.iter().zip(context_in).map(|(a, b)| a * b).sum();
    let sign = if is_negative { -1.0 } else { 1.0 };
    let loss = softplus(-sign * dot);
    let coef = pair_coefficient(dot, is_negative);
    let grad_in = center_out.iter().map(|u| -coef * u).collect();
    let grad_out = context_in.iter().map(|v| -coef * v).collect();
    (loss, grad_in, grad_out)
}

struct SharedVectors {
    data: Vec<AtomicU64>,
}

impl SharedVectors {
    fn from_slice(values: &[f64]) -> Self {
        SharedVectors {
            data: values.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.data[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, i: usize, delta: f64) {
        self.data[i].store((self.get(i) + delta).to_bits(), Ordering::Relaxed);
    }

    fn into_vec(self) -> Vec<f64> {
        self.data
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect()
    }
}

struct Trainer<'a> {
    dim: usize,
    params: TrainParams,
    input: SharedVectors,
    output: SharedVectors,
    noise: WeightedIndex<f64>,
    sentences: &'a [Vec<usize>],
    total: f64,
    processed: AtomicU64,
}

impl Trainer<'_> {
    fn learning_rate(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total;
        let p = self.params;
        (p.alpha - (p.alpha - p.min_alpha) * done).max(p.min_alpha)
    }

    fn train_pair(
        &self,
        center: usize,
        context: usize,
        lr: f64,
        neu: &mut [f64],
        rng: &mut ChaCha8Rng,
    ) {
        let d = self.dim;
        let ctx = context * d;
        neu.iter_mut().for_each(|x| *x = 0.0);
        for n in 0..=self.params.negatives {
            let (target, is_negative) = if n == 0 {
                (center, false)
            } else {
                let t = self.noise.sample(rng);
                if t == center {
                    continue;
                }
                (t, true)
            };
            let out = target * d;
            let dot: f64 = (0..d)
                .map(|k| self.input.get(ctx + k) * self.output.get(out + k))
                .sum();
            let g = lr * pair_coefficient(dot, is_negative);
            for (k, n) in neu.iter_mut().enumerate() {
                *n += g * self.output.get(out + k);
                self.output.add(out + k, g * self.input.get(ctx + k));
            }
        }
        for (k, delta) in neu.iter().enumerate() {
            self.input.add(ctx + k, *delta);
        }
    }

    fn run_worker(&self, worker: usize, workers: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.params.seed ^ (worker as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED,
        );
        let mut neu = vec![0.0; self.dim];
        let w = self.params.window;
        for _ in 0..self.params.epochs {
            for sentence in self.sentences.iter().skip(worker).step_by(workers) {
                for (i, &center) in sentence.iter().enumerate() {
                    let lr = self.learning_rate();
                    let lo = i.saturating_sub(w);
                    let hi = (i + w).min(sentence.len() - 1);
                    for (j, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                        if j != i {
                            self.train_pair(center, context, lr, &mut neu, &mut rng);
                        }
                    }
                    self.processed.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}

/// Train an embedding on sentences of rendered labels.
pub fn train(sentences: &[Vec<String>], params: TrainParams) -> Result<Embedding, EmbeddingError> {
    if params.dim == 0 {
        return Err(EmbeddingError::InvalidParameter(
            "dimension must be at least 1".into(),
        ));
    }
    if params.window == 0 {
        return Err(EmbeddingError::InvalidParameter(
            "window must be at least 1".into(),
        ));
    }
    if params.workers == 0 {
        return Err(EmbeddingError::InvalidParameter(
            "workers must be at least 1".into(),
        ));
    }
    if sentences.iter().all(|s| s.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }

    let mut freq: HashMap<&str, u64> = HashMap::new();
    for token in sentences.iter().flatten() {
        *freq.entry(token.as_str()).or_default() += 1;
    }
    let mut vocab: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|&(_, c)| c >= params.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyVocabulary);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let d = params.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(params.seed);
    let input: Vec<f64> = (0..vocab.len() * d)
        .map(|_| (init_rng.gen::<f64>() - 0.5) / d as f64)
        .collect();
    let mut embedding = Embedding {
        dim: d,
        index: vocab
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.to_string(), i))
            .collect(),
        vocab: vocab.iter().map(|(w, _)| w.to_string()).collect(),
        counts: vocab.iter().map(|&(_, c)| c).collect(),
        output: vec![0.0; vocab.len() * d],
        input,
    };

    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|t| embedding.index.get(t).copied())
                .collect()
        })
        .collect();
    let tokens: usize = encoded.iter().map(Vec::len).sum();
    let weights: Vec<f64> = embedding
        .counts
        .iter()
        .map(|&c| (c as f64).powf(0.75))
        .collect();

    let trainer = Trainer {
        dim: d,
        params,
        input: SharedVectors::from_slice(&embedding.input),
        output: SharedVectors::from_slice(&embedding.output),
        noise: WeightedIndex::new(&weights).expect("positive weights"),
        sentences: &encoded,
        total: (tokens * params.epochs).max(1) as f64,
        processed: AtomicU64::new(0),
    };
    if params.workers == 1 {
        trainer.run_worker(0, 1);
    } else {
        std::thread::scope(|scope| {
            for w in 0..params.workers {
                let t = &trainer;
                scope.spawn(move || t.run_worker(w, params.workers));
            }
        });
    }
    embedding.input = trainer.input.into_vec();
    embedding.output = trainer.output.into_vec();
    Ok(embedding)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

impl Embedding {
    /// Build directly from vectors; output vectors start at zero.
    pub fn from_vectors(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        let mut e = Embedding {
            dim,
            vocab: Vec::with_capacity(rows.len()),
            counts: vec![0; rows.len()],
            index: HashMap::new(),
            input: Vec::with_capacity(rows.len() * dim),
            output: vec![0.0; rows.len() * dim],
        };
        for (label, v) in rows {
            if v.len() != dim {
                return Err(EmbeddingError::InvalidParameter(format!(
                    "vector for `{label}` has length {}, expected {dim}",
                    v.len()
                )));
            }
            if e.index.insert(label.clone(), e.vocab.len()).is_some() {
                return Err(EmbeddingError::InvalidParameter(format!(
                    "duplicate label `{label}`"
                )));
            }
            e.vocab.push(label);
            e.input.extend(v);
        }
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn count(&self, label: &str) -> Option<u64> {
        self.index.get(label).map(|&i| self.counts[i])
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn vector(&self, label: &str) -> Option<&[f64]> {
        self.index
            .get(label)
            .map(|&i| &self.input[i * self.dim..(i + 1) * self.dim])
    }

    pub fn output_vector(&self, label: &str) -> Option<&[f64]> {
        self.index
            .get(label)
            .map(|&i| &self.output[i * self.dim..(i + 1) * self.dim])
    }

    fn require(&self, label: &str) -> Result<&[f64], EmbeddingError> {
        self.vector(label)
            .ok_or_else(|| EmbeddingError::UnknownLabel(label.to_string()))
    }

    fn rank(&self, target: &[f64], exclude: &[&str], n: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = self
            .vocab
            .iter()
            .filter(|l| !exclude.contains(&l.as_str()))
            .map(|l| (l.clone(), cosine(target, self.vector(l).unwrap())))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(n);
        scored
    }

    /// Top `n` labels by cosine similarity to `query`, excluding it.
    pub fn nearest(&self, query: &str, n: usize) -> Result<Vec<(String, f64)>, EmbeddingError> {
        let q = self.require(query)?.to_vec();
        Ok(self.rank(&q, &[query], n))
    }

    /// Answer `a : b :: c : ?` by cosine to `b - a + c`.
    pub fn analogy(
        &self,
        a: &str,
        b: &str,
        c: &str,
        n: usize,
    ) -> Result<Vec<(String, f64)>, EmbeddingError> {
        let (va, vb, vc) = (self.require(a)?, self.require(b)?, self.require(c)?);
        let target: Vec<f64> = (0..self.dim).map(|k| vb[k] - va[k] + vc[k]).collect();
        Ok(self.rank(&target, &[a, b, c], n))
    }

    /// `V d` header, then one `label v1 ... vd` line per vocabulary entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.vocab.len(), self.dim).unwrap();
        for (i, label) in self.vocab.iter().enumerate() {
            out.push_str(label);
            for v in &self.input[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EmbeddingError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| FormatError::new(1, "missing `V d` header"))?;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        let (count, dim) = match (
            parse_usize(parts.next()),
            parse_usize(parts.next()),
            parts.next(),
        ) {
            (Some(v), Some(d), None) => (v, d),
            _ => return Err(FormatError::new(1, "header must be `V d`").into()),
        };
        let mut rows = Vec::with_capacity(count);
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let label = fields.next().unwrap().to_string();
            let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| FormatError::new(i + 1, format!("bad number: {e}")))?;
            if values.len() != dim {
                return Err(FormatError::new(
                    i + 1,
                    format!("expected {dim} values, found {}", values.len()),
                )
                .into());
            }
            rows.push((label, values));
        }
        if rows.len() != count {
            return Err(FormatError::new(
                1,
                format!("header declares {count} vectors, found {}", rows.len()),
            )
            .into());
        }
        Embedding::from_vectors(dim, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_corpus() -> Vec<Vec<String>> {
        let mut s = Vec::new();
        for _ in 0..500 {
            s.push(vec!["A".to_string(), "B".to_string()]);
            s.push(vec!["C".to_string(), "D".to_string()]);
        }
        s
    }

    #[test]
    fn zero_dot_gradients() {
        let u = [1.0, 0.0, 2.0];
        let v = [0.0, 3.0, 0.0];
        let (loss, gin, _) = pair_objective_gradient(&u, &v, false);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(gin, vec![-0.5, 0.0, -1.0]);
        let (loss, gin, _) = pair_objective_gradient(&u, &v, true);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(gin, vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn co_occurring_pairs_score_high() {
        for seed in 0..5 {
            let params = TrainParams {
                dim: 8,
                seed,
                ..TrainParams::default()
            };
            let e = train(&pairs_corpus(), params).unwrap();
            let a = e.vector("A").unwrap();
            let ab = dot(a, e.output_vector("B").unwrap());
            let ad = dot(a, e.output_vector("D").unwrap());
            assert!(sigmoid(ab) > 0.9 && ab > ad, "seed {seed}: {ab} vs {ad}");
        }
    }

    #[test]
    fn shared_context_labels_are_neighbors() {
        let mut s = Vec::new();
        for _ in 0..250 {
            for (a, b) in [("A", "X"), ("B", "X"), ("C", "Y"), ("D", "Y")] {
                s.push(vec![a.to_string(), b.to_string()]);
            }
        }
        for seed in 0..5 {
            let params = TrainParams {
                dim: 8,
                seed,
                ..TrainParams::default()
            };
            let e = train(&s, params).unwrap();
            let ranked = e.nearest("A", 5).unwrap();
            assert_eq!(ranked[0].0, "B", "seed {seed}");
            let b = ranked[0].1;
            assert!(ranked[1..].iter().all(|(_, c)| *c < b - 0.3));
        }
    }

    #[test]
    fn singleton_sentence_leaves_initialization() {
        let params = TrainParams {
            dim: 4,
            seed: 9,
            ..TrainParams::default()
        };
        let e = train(&[vec!["X".to_string()]], params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let expected: Vec<f64> = (0..4).map(|_| (rng.gen::<f64>() - 0.5) / 4.0).collect();
        assert_eq!(e.vector("X").unwrap(), expected.as_slice());
        assert!(e.output_vector("X").unwrap().iter().all(|&x| x == 0.0));
        for v in e.vector("X").unwrap() {
            assert!(v.abs() <= 0.5 / 4.0);
        }
    }

    #[test]
    fn deterministic_single_worker() {
        let params = TrainParams {
            dim: 6,
            seed: 5,
            ..TrainParams::default()
        };
        let a = train(&pairs_corpus(), params).unwrap();
        let b = train(&pairs_corpus(), params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_mode_trains() {
        let params = TrainParams {
            dim: 8,
            seed: 3,
            workers: 4,
            ..TrainParams::default()
        };
        let e = train(&pairs_corpus(), params).unwrap();
        assert_eq!(e.vocab().len(), 4);
    }

    #[test]
    fn min_count_filters_vocabulary() {
        let s = vec![vec!["a".to_string(), "b".to_string(), "a".to_string()]];
        let params = TrainParams {
            dim: 2,
            min_count: 2,
            ..TrainParams::default()
        };
        let e = train(&s, params).unwrap();
        assert_eq!(e.vocab(), ["a"]);
        let params = TrainParams {
            min_count: 3,
            ..params
        };
        assert!(matches!(
            train(&s, params),
            Err(EmbeddingError::EmptyVocabulary)
        ));
        assert!(matches!(
            train(&[], params),
            Err(EmbeddingError::EmptyCorpus)
        ));
    }

    #[test]
    fn exact_copy_is_nearest_at_one() {
        let e = Embedding::from_vectors(
            2,
            vec![
                ("q".into(), vec![0.3, -0.7]),
                ("copy".into(), vec![0.3, -0.7]),
                ("other".into(), vec![1.0, 0.2]),
            ],
        )
        .unwrap();
        let n = e.nearest("q", 1).unwrap();
        assert_eq!(n[0].0, "copy");
        assert!((n[0].1 - 1.0).abs() < 1e-12);
        let all = e.nearest("q", 10).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|(l, _)| l != "q"));
        assert!(matches!(
            e.nearest("zzz", 1),
            Err(EmbeddingError::UnknownLabel(_))
        ));
    }

    #[test]
    fn ties_break_lexicographically() {
        let e = Embedding::from_vectors(
            2,
            vec![
                ("q".into(), vec![1.0, 0.0]),
                ("b".into(), vec![0.0, 1.0]),
                ("a".into(), vec![0.0, 2.0]),
            ],
        )
        .unwrap();
        let n = e.nearest("q", 2).unwrap();
        assert_eq!(n[0].0, "a");
        assert_eq!(n[1].0, "b");
    }

    #[test]
    fn analogy_with_equal_terms_reduces_to_nearest() {
        let e = Embedding::from_vectors(
            2,
            vec![
                ("a".into(), vec![1.0, 0.0]),
                ("c".into(), vec![0.2, 1.0]),
                ("x".into(), vec![0.25, 1.0]),
                ("y".into(), vec![-1.0, 0.1]),
            ],
        )
        .unwrap();
        let got = e.analogy("a", "a", "c", 2).unwrap();
        let mut want = e.nearest("c", 3).unwrap();
        want.retain(|(l, _)| l != "a");
        assert_eq!(got[0].0, want[0].0);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn vector_file_round_trip_is_bit_exact() {
        let params = TrainParams {
            dim: 5,
            seed: 1,
            ..TrainParams::default()
        };
        let e = train(&pairs_corpus(), params).unwrap();
        let back = Embedding::from_text(&e.to_text()).unwrap();
        for l in e.vocab() {
            let a: Vec<u64> = e.vector(l).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back
                .vector(l)
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(a, b);
        }
        assert_eq!(back.vocab(), e.vocab());
    }

    #[test]
    fn malformed_vector_file() {
        assert!(Embedding::from_text("2 2\na 1 2\n").is_err());
        assert!(Embedding::from_text("1 2\na 1\n").is_err());
        assert!(Embedding::from_text("1 2\na 1 x\n").is_err());
    }
}
