//! Random walks over a labeled pushdown system and the walk corpus.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ir::Program;
use crate::lpds::{Configuration, Label, LabelId, LabelKind, Lpds, RuleId};

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("label `{0}` does not occur in any rule")]
    NoOccurrence(String),
    #[error("walks per label must be at least 1")]
    ZeroGamma,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub labels: Vec<LabelId>,
    pub start_label: LabelId,
    pub seed: u64,
    /// Fired rules; the first is the start rule.
    pub trace: Vec<RuleId>,
}

/// One walk with an explicit generator: pick a rule carrying `start`, then
/// take at most `k` uniformly chosen steps. Stops early when the stack
/// empties or no rule matches its top.
pub fn walk_with<R: Rng + ?Sized>(
    lpds: &Lpds,
    start: LabelId,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<LabelId>, Vec<RuleId>), WalkError> {
    let candidates = lpds.rules_with_label(start);
    if candidates.is_empty() {
        return Err(WalkError::NoOccurrence(lpds.render(start).to_string()));
    }
    let first = candidates[rng.gen_range(0..candidates.len())];
    let r = lpds.rule(first);
    let mut config = Configuration {
        stack: r.rhs.iter().rev().copied().collect(),
        emitted: r.labels.clone(),
    };
    let mut trace = vec![first];
    for _ in 0..k {
        let enabled = lpds.enabled(&config);
        if enabled.is_empty() {
            break;
        }
        let rule = enabled[rng.gen_range(0..enabled.len())];
        lpds.apply(rule, &mut config);
        trace.push(rule);
    }
    Ok((config.emitted, trace))
}

/// Resolve a start label, failing if no rule carries it.
pub fn start_label(lpds: &Lpds, label: &Label) -> Result<LabelId, WalkError> {
    lpds.label_id(label)
        .filter(|&id| !lpds.rules_with_label(id).is_empty())
        .ok_or_else(|| WalkError::NoOccurrence(label.name.clone()))
}

/// One walk from a 64-bit seed.
pub fn random_walk(lpds: &Lpds, start: LabelId, k: usize, seed: u64) -> Result<Walk, WalkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels, trace) = walk_with(lpds, start, k, &mut rng)?;
    Ok(Walk {
        labels,
        start_label: start,
        seed,
        trace,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for walk `index` of `label`, independent of generation order.
pub fn walk_seed(master: u64, label: &str, index: usize) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(label)) ^ index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusParams {
    pub gamma: usize,
    pub walk_length: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub walks: Vec<Walk>,
    pub params: CorpusParams,
}

/// `gamma` walks for every label that occurs in some rule, labels in
/// rendered order. Output does not depend on `workers`.
pub fn generate_corpus(
    lpds: &Lpds,
    params: CorpusParams,
    workers: usize,
) -> Result<Corpus, WalkError> {
    if params.gamma == 0 {
        return Err(WalkError::ZeroGamma);
    }
    let jobs: Vec<(LabelId, usize)> = lpds
        .labels_sorted()
        .into_iter()
        .filter(|&l| !lpds.rules_with_label(l).is_empty())
        .flat_map(|l| (0..params.gamma).map(move |i| (l, i)))
        .collect();
    let run = |&(label, index): &(LabelId, usize)| {
        let seed = walk_seed(params.seed, lpds.render(label), index);
        random_walk(lpds, label, params.walk_length, seed)
    };
    let walks: Result<Vec<Walk>, WalkError> = if workers <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    Ok(Corpus {
        walks: walks?,
        params,
    })
}

/// Declared labels (record types, error codes, functions) that no rule
/// carries; these get no walks.
pub fn unused_labels(p: &Program, lpds: &Lpds) -> Vec<String> {
    let declared = p
        .record_types
        .iter()
        .map(|n| Label::new(LabelKind::RecordType, n.clone()))
        .chain(
            p.error_codes
                .keys()
                .map(|n| Label::new(LabelKind::ErrorCode, n.clone())),
        )
        .chain(p.function_names().into_iter().map(Label::function));
    declared
        .filter(|l| lpds.label_id(l).is_none())
        .map(|l| l.name)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

impl Corpus {
    /// Walks as sentences of rendered labels.
    pub fn sentences(&self, lpds: &Lpds) -> Vec<Vec<String>> {
        self.walks
            .iter()
            .map(|w| {
                w.labels
                    .iter()
                    .map(|&l| lpds.render(l).to_string())
                    .collect()
            })
            .collect()
    }

    pub fn to_text(&self, lpds: &Lpds) -> String {
        let mut out = String::new();
        let p = self.params;
        writeln!(
            out,
            "# gamma={} k={} seed={}",
            p.gamma, p.walk_length, p.seed
        )
        .unwrap();
        for w in &self.walks {
            out.push_str(&lpds.render_all(&w.labels).join(" "));
            out.push('\n');
        }
        out
    }
}

/// Read a corpus file: `#` lines are comments, every other non-empty line is
/// one sentence of whitespace-separated tokens.
pub fn parse_corpus(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.starts_with('#'))
        .map(|line| line.split_whitespace().map(str::to_string).collect())
        .collect()
}
