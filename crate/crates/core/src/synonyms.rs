//! Spherical k-means over function vectors, the partition function built
//! from a clustering, and evaluation against a gold standard.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::Embedding;
use crate::format::FormatError;

#[derive(Debug, Error)]
pub enum SynonymError {
    #[error("no function labels to cluster")]
    NoFunctions,
    #[error("K = {k} is out of range for {n} function labels")]
    InvalidK { k: usize, n: usize },
    #[error("gold standard is inconsistent: `{0}` and `{1}` are both must- and mustnot-related")]
    InconsistentGold(String, String),
    #[error("{0}")]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Independent k-means++ restarts; the lowest objective wins.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 20,
            max_iters: 100,
            seed: 1,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    /// Unit-length centroids; empty when read back from a clusters file.
    pub centroids: Vec<Vec<f64>>,
    /// Objective after each assignment step of the winning run.
    pub objective_history: Vec<f64>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest id.
fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| nearest_centroid(p, centroids).0)
        .collect()
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids).1)
            .collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // Every point coincides with a centroid already.
            Err(_) => rng.gen_range(0..points.len()),
        };
        centroids.push(points[next].clone());
    }
    centroids
}

/// Move the farthest point of a multi-member cluster into each empty one.
fn reseed_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assignment[i]]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        match far {
            Some((i, _)) => assignment[i] = empty,
            None => return,
        }
    }
}

fn update(points: &[Vec<f64>], assignment: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; previous.len()];
    for (p, &a) in points.iter().zip(assignment) {
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(previous)
        .map(|(s, prev)| {
            if s.iter().all(|&x| x == 0.0) {
                prev.clone()
            } else {
                normalized(&s)
            }
        })
        .collect()
}

struct Run {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    history: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Run {
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignment = assign(points, &centroids);
    let mut history = vec![objective(points, &centroids, &assignment)];
    for _ in 0..max_iters {
        reseed_empty(points, &centroids, &mut assignment, k);
        centroids = update(points, &assignment, &centroids);
        let next = assign(points, &centroids);
        history.push(objective(points, &centroids, &next));
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }
    Run {
        assignment,
        centroids,
        history,
    }
}

/// Cluster the vectors of `candidates` (those present in `e`) into `k`
/// groups on the unit sphere.
pub fn kmeans(
    e: &Embedding,
    candidates: &BTreeSet<String>,
    params: KMeansParams,
) -> Result<Clustering, SynonymError> {
    let labels: Vec<&String> = candidates.iter().filter(|l| e.contains(l)).collect();
    if labels.is_empty() {
        return Err(SynonymError::NoFunctions);
    }
    if params.k == 0 || params.k > labels.len() {
        return Err(SynonymError::InvalidK {
            k: params.k,
            n: labels.len(),
        });
    }
    let points: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| normalized(e.vector(l).unwrap()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Run> = None;
    for _ in 0..params.restarts.max(1) {
        let run = lloyd(&points, params.k, params.max_iters, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => run.history.last() < b.history.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.unwrap();
    Ok(Clustering {
        k: params.k,
        assignments: labels
            .iter()
            .zip(&best.assignment)
            .map(|(l, &a)| (l.to_string(), a))
            .collect(),
        centroids: best.centroids,
        objective_history: best.history,
    })
}

impl Clustering {
    /// Members of each cluster, indexed by id.
    pub fn clusters(&self) -> Vec<BTreeSet<String>> {
        let mut out = vec![BTreeSet::new(); self.k];
        for (f, &c) in &self.assignments {
            out[c].insert(f.clone());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<(usize, &String)> =
            self.assignments.iter().map(|(f, &c)| (c, f)).collect();
        rows.sort();
        let mut out = String::new();
        for (c, f) in rows {
            writeln!(out, "{c}\t{f}").unwrap();
        }
        out
    }

    /// Read a clusters file; K is one more than the largest id.
    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut assignments = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, f) = line
                .split_once('\t')
                .ok_or_else(|| FormatError::new(i + 1, "expected `cluster_id<TAB>function`"))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| FormatError::new(i + 1, format!("bad cluster id `{id}`")))?;
            let f = f.trim();
            if f.is_empty() {
                return Err(FormatError::new(i + 1, "missing function name"));
            }
            if assignments.insert(f.to_string(), id).is_some() {
                return Err(FormatError::new(i + 1, format!("`{f}` assigned twice")));
            }
        }
        Ok(Clustering {
            k: assignments.values().max().map_or(0, |m| m + 1),
            assignments,
            centroids: Vec::new(),
            objective_history: Vec::new(),
        })
    }
}

/// Maps each function to the representative of its synonym class; functions
/// it does not mention map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    map: BTreeMap<String, String>,
}

impl Partition {
    pub fn identity() -> Self {
        Partition::default()
    }

    /// Representative = lexicographically least member of each cluster.
    pub fn from_clustering(c: &Clustering) -> Self {
        let mut map = BTreeMap::new();
        for members in c.clusters() {
            if let Some(rep) = members.first() {
                for f in &members {
                    map.insert(f.clone(), rep.clone());
                }
            }
        }
        Partition { map }
    }

    /// From explicit classes; each class maps to its least member.
    pub fn from_classes<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = String>,
    {
        let mut map = BTreeMap::new();
        for class in classes {
            let members: BTreeSet<String> = class.into_iter().collect();
            if let Some(rep) = members.first() {
                for f in &members {
                    map.insert(f.clone(), rep.clone());
                }
            }
        }
        Partition { map }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().all(|(f, r)| f == r)
    }

    pub fn rep<'a>(&'a self, f: &'a str) -> &'a str {
        self.map.get(f).map_or(f, String::as_str)
    }

    pub fn apply_set<'a, I: IntoIterator<Item = &'a String>>(&self, set: I) -> BTreeSet<String> {
        set.into_iter().map(|f| self.rep(f).to_string()).collect()
    }

    /// All functions that map to `rep`, or just `rep` if none is recorded.
    pub fn members(&self, rep: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .map
            .iter()
            .filter(|(_, r)| r.as_str() == rep)
            .map(|(f, _)| f.clone())
            .collect();
        if out.is_empty() {
            out.insert(rep.to_string());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (f, r) in &self.map {
            writeln!(out, "{f}\t{r}").unwrap();
        }
        out
    }

    /// Read a partition file. Every representative must map to itself.
    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (f, r) = line
                .split_once('\t')
                .ok_or_else(|| FormatError::new(i + 1, "expected `function<TAB>representative`"))?;
            let (f, r) = (f.trim(), r.trim());
            if f.is_empty() || r.is_empty() {
                return Err(FormatError::new(i + 1, "empty name"));
            }
            if map.insert(f.to_string(), r.to_string()).is_some() {
                return Err(FormatError::new(i + 1, format!("`{f}` mapped twice")));
            }
        }
        for (f, r) in &map {
            if map.get(r).is_some_and(|rr| rr != r) {
                return Err(FormatError::new(
                    0,
                    format!("representative `{r}` of `{f}` does not map to itself"),
                ));
            }
        }
        Ok(Partition { map })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Must,
    MustNot,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldStandard {
    pub relations: Vec<(Relation, String, String)>,
}

impl GoldStandard {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut relations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let rel = match parts.first() {
                Some(&"must") => Relation::Must,
                Some(&"mustnot") => Relation::MustNot,
                _ => return Err(FormatError::new(i + 1, "expected `must` or `mustnot`")),
            };
            if parts.len() != 3 {
                return Err(FormatError::new(i + 1, "expected two function names"));
            }
            relations.push((rel, parts[1].to_string(), parts[2].to_string()));
        }
        Ok(GoldStandard { relations })
    }

    /// Every function the gold standard mentions.
    pub fn functions(&self) -> BTreeSet<String> {
        self.relations
            .iter()
            .flat_map(|(_, a, b)| [a.clone(), b.clone()])
            .collect()
    }

    /// Connected components of the `must` relation over all mentioned
    /// functions, ordered by least member.
    pub fn classes(&self) -> Vec<BTreeSet<String>> {
        let names: Vec<String> = self.functions().into_iter().collect();
        let idx: BTreeMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut parent: Vec<usize> = (0..names.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (rel, a, b) in &self.relations {
            if *rel == Relation::Must {
                let (ra, rb) = (
                    find(&mut parent, idx[a.as_str()]),
                    find(&mut parent, idx[b.as_str()]),
                );
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().insert(name.clone());
        }
        let mut classes: Vec<BTreeSet<String>> = groups.into_values().collect();
        classes.sort_by(|a, b| a.first().cmp(&b.first()));
        classes
    }

    /// A `mustnot` pair may not fall into one `must` class.
    pub fn check_consistency(&self) -> Result<(), SynonymError> {
        let classes = self.classes();
        let class_of = |f: &str| classes.iter().position(|c| c.contains(f));
        for (rel, a, b) in &self.relations {
            if *rel == Relation::MustNot && (a == b || class_of(a) == class_of(b)) {
                return Err(SynonymError::InconsistentGold(a.clone(), b.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub members: Vec<String>,
    /// Cluster achieving the best F; `None` when no cluster overlaps.
    pub best_cluster: Option<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldMetrics {
    pub classes: Vec<ClassMetrics>,
    pub total: usize,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f: f64,
}

/// Precision, recall and F of cluster `c` against gold class `l`.
pub fn prf(c: &BTreeSet<String>, l: &BTreeSet<String>) -> (f64, f64, f64) {
    let common = c.intersection(l).count() as f64;
    let p = if c.is_empty() {
        0.0
    } else {
        common / c.len() as f64
    };
    let r = if l.is_empty() {
        0.0
    } else {
        common / l.len() as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub fn evaluate_gold(c: &Clustering, g: &GoldStandard) -> Result<GoldMetrics, SynonymError> {
    g.check_consistency()?;
    let clusters = c.clusters();
    let gold = g.classes();
    let total: usize = gold.iter().map(BTreeSet::len).sum();
    let mut classes = Vec::with_capacity(gold.len());
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for l in &gold {
        let mut best = ClassMetrics {
            members: l.iter().cloned().collect(),
            best_cluster: None,
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        };
        for (i, ci) in clusters.iter().enumerate() {
            let (p, r, f) = prf(ci, l);
            if f > best.f {
                best.best_cluster = Some(i);
                best.precision = p;
                best.recall = r;
                best.f = f;
            }
        }
        let w = l.len() as f64 / total as f64;
        wp += w * best.precision;
        wr += w * best.recall;
        wf += w * best.f;
        classes.push(best);
    }
    Ok(GoldMetrics {
        classes,
        total,
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f: wf,
    })
}

impl GoldMetrics {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<6} {:<8} {:>9} {:>9} {:>9}  members",
            "class", "cluster", "precision", "recall", "f"
        )
        .unwrap();
        for (j, c) in self.classes.iter().enumerate() {
            let cluster = c.best_cluster.map_or("-".to_string(), |i| i.to_string());
            writeln!(
                out,
                "{:<6} {:<8} {:>9.4} {:>9.4} {:>9.4}  {}",
                j,
                cluster,
                c.precision,
                c.recall,
                c.f,
                c.members.join(",")
            )
            .unwrap();
        }
        writeln!(out, "weighted precision {:.4}", self.weighted_precision).unwrap();
        writeln!(out, "weighted recall    {:.4}", self.weighted_recall).unwrap();
        writeln!(out, "weighted f         {:.4}", self.weighted_f).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Strategy};

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn clustering(groups: &[&[&str]]) -> Clustering {
        let mut assignments = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            for f in *g {
                assignments.insert(f.to_string(), i);
            }
        }
        Clustering {
            k: groups.len(),
            assignments,
            centroids: Vec::new(),
            objective_history: Vec::new(),
        }
    }

    fn planted() -> (Embedding, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        for g in 0..2 {
            for i in 0..5 {
                let base = if g == 0 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 1.0]
                };
                let v: Vec<f64> = base.iter().map(|b| b + rng.gen_range(-0.2..0.2)).collect();
                rows.push((format!("g{g}_{i}"), v));
            }
        }
        let names = rows.iter().map(|(n, _)| n.clone()).collect();
        (Embedding::from_vectors(3, rows).unwrap(), names)
    }

    #[test]
    fn planted_groups_match_brute_force_optimum() {
        let (e, names) = planted();
        let cands: BTreeSet<String> = names.iter().cloned().collect();
        let c = kmeans(
            &e,
            &cands,
            KMeansParams {
                k: 2,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let points: Vec<Vec<f64>> = names
            .iter()
            .map(|n| normalized(e.vector(n).unwrap()))
            .collect();
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << names.len()) - 1 {
            let assignment: Vec<usize> =
                (0..names.len()).map(|i| (mask >> i & 1) as usize).collect();
            let cents = update(&points, &assignment, &[vec![0.0; 3], vec![0.0; 3]]);
            let obj = objective(&points, &cents, &assignment);
            if obj < best.0 {
                best = (obj, mask);
            }
        }
        let same = |a: &str, b: &str| c.assignments[a] == c.assignments[b];
        for i in 0..names.len() {
            for j in 0..names.len() {
                let brute = (best.1 >> i & 1) == (best.1 >> j & 1);
                assert_eq!(same(&names[i], &names[j]), brute);
                assert_eq!(brute, names[i][..2] == names[j][..2]);
            }
        }
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let (e, names) = planted();
        let cands: BTreeSet<String> = names.iter().cloned().collect();
        let c = kmeans(
            &e,
            &cands,
            KMeansParams {
                k: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(c.clusters().iter().all(|m| m.len() == 1));
        assert!(c.objective_history.last().unwrap().abs() < 1e-12);
    }

    #[test]
    fn k_one_centroid_is_normalized_mean() {
        let (e, names) = planted();
        let cands: BTreeSet<String> = names.iter().cloned().collect();
        let c = kmeans(
            &e,
            &cands,
            KMeansParams {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(c.assignments.values().all(|&a| a == 0));
        let mut mean = vec![0.0; 3];
        for n in &names {
            for (m, x) in mean.iter_mut().zip(normalized(e.vector(n).unwrap())) {
                *m += x;
            }
        }
        let mean = normalized(&mean);
        for (a, b) in c.centroids[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn k_out_of_range() {
        let (e, names) = planted();
        let cands: BTreeSet<String> = names.iter().cloned().collect();
        assert!(matches!(
            kmeans(
                &e,
                &cands,
                KMeansParams {
                    k: 11,
                    ..Default::default()
                }
            ),
            Err(SynonymError::InvalidK { .. })
        ));
        assert!(matches!(
            kmeans(&e, &BTreeSet::new(), KMeansParams::default()),
            Err(SynonymError::NoFunctions)
        ));
    }

    #[test]
    fn partition_picks_least_member() {
        let c = clustering(&[&["snd_intel8x0_free", "snd_atiixp_free"], &["f"]]);
        let p = Partition::from_clustering(&c);
        assert_eq!(p.rep("snd_intel8x0_free"), "snd_atiixp_free");
        assert_eq!(p.rep("snd_atiixp_free"), "snd_atiixp_free");
        assert_eq!(p.rep("f"), "f");
        assert_eq!(p.rep("unknown"), "unknown");
        assert_eq!(
            p.apply_set(&set(&["snd_intel8x0_free", "snd_atiixp_free"])),
            set(&["snd_atiixp_free"])
        );
        assert_eq!(p.members("snd_atiixp_free").len(), 2);
        assert_eq!(Partition::from_text(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn partition_file_requires_fixed_representatives() {
        assert!(Partition::from_text("a\tb\nb\tc\n").is_err());
        assert!(Partition::from_text("a\tb\n").is_ok());
        assert!(Partition::from_text("a b\n").is_err());
    }

    #[test]
    fn clusters_file_round_trip() {
        let c = clustering(&[&["a", "b"], &["c"]]);
        let back = Clustering::from_text(&c.to_text()).unwrap();
        assert_eq!(back.assignments, c.assignments);
        assert_eq!(back.k, 2);
        assert_eq!(c.to_text(), "0\ta\n0\tb\n1\tc\n");
    }

    #[test]
    fn gold_arithmetic() {
        let (p, r, f) = prf(&set(&["a", "b", "c", "d"]), &set(&["a", "b"]));
        assert_eq!((p, r), (0.5, 1.0));
        assert_eq!(f, 2.0 / 3.0);
        let g = GoldStandard::parse("must a b\nmust c d\nmustnot a c\n").unwrap();
        let m = evaluate_gold(&clustering(&[&["a", "b"], &["c", "d"]]), &g).unwrap();
        assert_eq!(m.weighted_f, 1.0);
        assert_eq!(m.total, 4);
    }

    #[test]
    fn absent_functions_cost_recall() {
        let g = GoldStandard::parse("must a b\n").unwrap();
        let m = evaluate_gold(&clustering(&[&["a"]]), &g).unwrap();
        assert_eq!(m.classes[0].recall, 0.5);
        assert_eq!(m.classes[0].precision, 1.0);
    }

    #[test]
    fn gold_consistency() {
        let g = GoldStandard::parse("must a b\nmust b c\nmustnot a c\n").unwrap();
        assert!(matches!(
            g.check_consistency(),
            Err(SynonymError::InconsistentGold(..))
        ));
        assert!(GoldStandard::parse("maybe a b\n").is_err());
        assert!(GoldStandard::parse("must a\n").is_err());
    }

    #[test]
    fn f_ties_go_to_lower_cluster() {
        let g = GoldStandard::parse("must a b\n").unwrap();
        let m = evaluate_gold(&clustering(&[&["a"], &["b"]]), &g).unwrap();
        assert_eq!(m.classes[0].best_cluster, Some(0));
    }

    fn arb_clustering() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..5, 1usize..5).prop_flat_map(|(k, g)| {
            (
                proptest::collection::vec(0..k, 12),
                proptest::collection::vec(0..g, 12),
            )
        })
    }

    proptest! {
        #[test]
        fn kmeans_invariants(seed in 0u64..1000, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<(String, Vec<f64>)> = (0..12)
                .map(|i| (format!("f{i:02}"), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let cands: BTreeSet<String> = rows.iter().map(|r| r.0.clone()).collect();
            let e = Embedding::from_vectors(4, rows).unwrap();
            let c = kmeans(&e, &cands, KMeansParams { k, seed, max_iters: 200, restarts: 2 }).unwrap();
            for w in c.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert_eq!(c.assignments.len(), 12);
            for (f, &a) in &c.assignments {
                prop_assert!(a < k);
                let p = normalized(e.vector(f).unwrap());
                let best = nearest_centroid(&p, &c.centroids);
                prop_assert!(sq_dist(&p, &c.centroids[a]) <= best.1 + 1e-12);
            }
            let again = kmeans(&e, &cands, KMeansParams { k, seed, max_iters: 200, restarts: 2 }).unwrap();
            prop_assert_eq!(again, c.clone());
            let part = Partition::from_clustering(&c);
            for f in c.assignments.keys() {
                let r = part.rep(f);
                prop_assert_eq!(part.rep(r), r);
                for g in c.assignments.keys() {
                    prop_assert_eq!(part.rep(f) == part.rep(g), c.assignments[f] == c.assignments[g]);
                }
            }
        }

        #[test]
        fn gold_metrics_bounded((assign, gold) in arb_clustering()) {
            let names: Vec<String> = (0..12).map(|i| format!("f{i}")).collect();
            let k = assign.iter().max().unwrap() + 1;
            let c = Clustering {
                k,
                assignments: names.iter().cloned().zip(assign.iter().copied()).collect(),
                centroids: Vec::new(),
                objective_history: Vec::new(),
            };
            let mut text = String::new();
            for i in 0..12 {
                for j in (i + 1)..12 {
                    if gold[i] == gold[j] {
                        text.push_str(&format!("must {} {}\n", names[i], names[j]));
                    }
                }
                text.push_str(&format!("must {} {}\n", names[i], names[i]));
            }
            let g = GoldStandard::parse(&text).unwrap();
            let m = evaluate_gold(&c, &g).unwrap();
            for v in [m.weighted_f, m.weighted_precision, m.weighted_recall] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            for cm in &m.classes {
                prop_assert!((0.0..=1.0).contains(&cm.f));
            }

            // Merge the best clusters of the first two gold classes.
            if m.classes.len() >= 2 {
                if let (Some(a), Some(b)) = (m.classes[0].best_cluster, m.classes[1].best_cluster) {
                    let merged = Clustering {
                        assignments: c.assignments.iter().map(|(f, &x)| (f.clone(), if x == b { a } else { x })).collect(),
                        ..c.clone()
                    };
                    let clusters = merged.clusters();
                    for j in 0..2 {
                        let l: BTreeSet<String> = m.classes[j].members.iter().cloned().collect();
                        let best_p = clusters.iter().map(|ci| prf(ci, &l).0).fold(0.0, f64::max);
                        let before = c.clusters().iter().map(|ci| prf(ci, &l).0).fold(0.0, f64::max);
                        prop_assert!(prf(&clusters[a], &l).0 <= before + 1e-12);
                        prop_assert!(best_p <= before + 1e-12);
                    }
                }
            }
        }
    }
}
