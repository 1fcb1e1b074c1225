//! Closed frequent itemset mining over handler transactions, specification
//! ranking, cross-implementation expansion and violation checking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::FormatError;
use crate::handlers::ErrorHandler;
use crate::synonyms::Partition;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("minimum support must be at least 1")]
    ZeroSupport,
    #[error("transactions file {0}")]
    Format(#[from] FormatError),
    #[error("specs file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "CTX")]
    Ctx,
    #[serde(rename = "RSP")]
    Rsp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Item {
    pub side: Side,
    pub name: String,
}

impl Item {
    pub fn ctx(name: impl Into<String>) -> Self {
        Item {
            side: Side::Ctx,
            name: name.into(),
        }
    }

    pub fn rsp(name: impl Into<String>) -> Self {
        Item {
            side: Side::Rsp,
            name: name.into(),
        }
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.side {
            Side::Ctx => "CTX",
            Side::Rsp => "RSP",
        };
        write!(f, "{tag}:{}", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub id: String,
    pub items: BTreeSet<Item>,
}

/// One transaction per handler, items normalized through `partition`, in
/// handler-id order.
pub fn build_transactions(handlers: &[ErrorHandler], partition: &Partition) -> Vec<Transaction> {
    let mut sorted: Vec<&ErrorHandler> = handlers.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted
        .into_iter()
        .map(|h| Transaction {
            id: h.id.to_string(),
            items: h
                .context
                .iter()
                .map(|f| Item::ctx(partition.rep(f)))
                .chain(h.response.iter().map(|f| Item::rsp(partition.rep(f))))
                .collect(),
        })
        .collect()
}

pub fn transactions_to_text(ts: &[Transaction]) -> String {
    let mut out = String::new();
    for t in ts {
        out.push_str(&t.id);
        out.push_str(" |");
        for item in &t.items {
            write!(out, " {item}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn transactions_from_text(text: &str) -> Result<Vec<Transaction>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once(" |")
            .ok_or_else(|| FormatError::new(i + 1, "expected `handler_id | items`"))?;
        let mut items = BTreeSet::new();
        for tok in rest.split_whitespace() {
            let item = match tok.split_once(':') {
                Some(("CTX", name)) if !name.is_empty() => Item::ctx(name),
                Some(("RSP", name)) if !name.is_empty() => Item::rsp(name),
                _ => return Err(FormatError::new(i + 1, format!("bad item `{tok}`"))),
            };
            items.insert(item);
        }
        out.push(Transaction {
            id: id.trim().to_string(),
            items,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Itemset {
    pub items: Vec<Item>,
    pub support: usize,
    /// Indices of the supporting transactions.
    pub tids: Vec<usize>,
}

struct Miner<'a> {
    /// Transactions as sorted item ids.
    rows: Vec<Vec<usize>>,
    /// Transaction ids containing each item.
    occurrences: Vec<Vec<usize>>,
    items: &'a [Item],
    min_support: usize,
    out: Vec<Itemset>,
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

impl Miner<'_> {
    /// Items common to every transaction in `tids`.
    fn closure(&self, tids: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.items.len()];
        for &t in tids {
            for &i in &self.rows[t] {
                counts[i] += 1;
            }
        }
        (0..self.items.len())
            .filter(|&i| counts[i] == tids.len())
            .collect()
    }

    fn emit(&mut self, set: &[usize], tids: &[usize]) {
        self.out.push(Itemset {
            items: set.iter().map(|&i| self.items[i].clone()).collect(),
            support: tids.len(),
            tids: tids.to_vec(),
        });
    }

    /// Prefix-preserving closure extension: every closed set is reached
    /// exactly once, from the closed set obtained by dropping its items
    /// above the core item.
    fn expand(&mut self, set: &[usize], tids: &[usize], core: Option<usize>) {
        let start = core.map_or(0, |c| c + 1);
        for e in start..self.items.len() {
            if set.binary_search(&e).is_ok() {
                continue;
            }
            let next = intersect(tids, &self.occurrences[e]);
            if next.len() < self.min_support {
                continue;
            }
            let closed = self.closure(&next);
            let keeps_prefix = closed
                .iter()
                .take_while(|&&i| i < e)
                .eq(set.iter().take_while(|&&i| i < e));
            if keeps_prefix {
                self.emit(&closed, &next);
                self.expand(&closed, &next, Some(e));
            }
        }
    }
}

/// Canonical order of mined itemsets: support descending, then items.
fn itemset_order(a: &Itemset, b: &Itemset) -> Ordering {
    b.support
        .cmp(&a.support)
        .then_with(|| a.items.cmp(&b.items))
}

/// All non-empty closed itemsets with support at least `min_support`.
pub fn mine_closed(ts: &[Transaction], min_support: usize) -> Result<Vec<Itemset>, MiningError> {
    if min_support == 0 {
        return Err(MiningError::ZeroSupport);
    }
    let universe: Vec<Item> = ts
        .iter()
        .flat_map(|t| t.items.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&Item, usize> =
        universe.iter().enumerate().map(|(i, it)| (it, i)).collect();
    let rows: Vec<Vec<usize>> = ts
        .iter()
        .map(|t| t.items.iter().map(|it| index[it]).collect())
        .collect();
    let mut occurrences = vec![Vec::new(); universe.len()];
    for (t, row) in rows.iter().enumerate() {
        for &i in row {
            occurrences[i].push(t);
        }
    }
    let mut miner = Miner {
        rows,
        occurrences,
        items: &universe,
        min_support,
        out: Vec::new(),
    };
    let all: Vec<usize> = (0..ts.len()).collect();
    if all.len() >= min_support {
        let root = miner.closure(&all);
        if !root.is_empty() {
            miner.emit(&root, &all);
        }
        miner.expand(&root, &all, None);
    }
    let mut out = miner.out;
    out.sort_by(itemset_order);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specification {
    pub context: BTreeSet<String>,
    pub response: BTreeSet<String>,
    #[serde(default)]
    pub support: usize,
    #[serde(default)]
    pub supporting: Vec<String>,
}

impl Specification {
    pub fn new<C, R>(context: C, response: R) -> Self
    where
        C: IntoIterator,
        C::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        Specification {
            context: context.into_iter().map(Into::into).collect(),
            response: response.into_iter().map(Into::into).collect(),
            support: 0,
            supporting: Vec::new(),
        }
    }

    pub fn items(&self) -> BTreeSet<Item> {
        self.context
            .iter()
            .map(Item::ctx)
            .chain(self.response.iter().map(Item::rsp))
            .collect()
    }

    fn same_rule(&self, other: &Specification) -> bool {
        self.context == other.context && self.response == other.response
    }
}

impl fmt::Display for Specification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        write!(
            f,
            "{{{}}} =e=> {{{}}}",
            join(&self.context),
            join(&self.response)
        )
    }
}

/// Ranking order: support descending, then size descending, then
/// lexicographic on (context, response).
pub fn rank_order(a: &Specification, b: &Specification) -> Ordering {
    b.support
        .cmp(&a.support)
        .then_with(|| {
            (b.context.len() + b.response.len()).cmp(&(a.context.len() + a.response.len()))
        })
        .then_with(|| a.context.cmp(&b.context))
        .then_with(|| a.response.cmp(&b.response))
}

/// Itemsets with both a context and a response item become specifications,
/// ranked. An itemset naming one function on both sides is dropped.
pub fn specs_from_itemsets(itemsets: &[Itemset], ts: &[Transaction]) -> Vec<Specification> {
    let mut specs: Vec<Specification> = itemsets
        .iter()
        .filter_map(|set| {
            let mut s = Specification::new(Vec::<String>::new(), Vec::<String>::new());
            for it in &set.items {
                match it.side {
                    Side::Ctx => s.context.insert(it.name.clone()),
                    Side::Rsp => s.response.insert(it.name.clone()),
                };
            }
            if s.context.is_empty() || s.response.is_empty() || !s.context.is_disjoint(&s.response)
            {
                return None;
            }
            s.support = set.support;
            s.supporting = set.tids.iter().map(|&t| ts[t].id.clone()).collect();
            Some(s)
        })
        .collect();
    specs.sort_by(rank_order);
    specs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossImplSpec {
    pub rank: usize,
    #[serde(flatten)]
    pub normalized: Specification,
    #[serde(default)]
    pub members: Vec<Specification>,
}

impl CrossImplSpec {
    /// Members, or the normalized spec itself when none are recorded.
    pub fn effective_members(&self) -> Vec<&Specification> {
        if self.members.is_empty() {
            vec![&self.normalized]
        } else {
            self.members.iter().collect()
        }
    }

    pub fn support(&self) -> usize {
        self.normalized.support
    }
}

fn choices(names: &BTreeSet<String>, rep: &str, partition: &Partition) -> Vec<String> {
    names
        .iter()
        .filter(|f| partition.rep(f) == rep)
        .cloned()
        .collect()
}

fn product(slots: &[Vec<String>]) -> Vec<Vec<String>> {
    slots.iter().fold(vec![Vec::new()], |acc, slot| {
        acc.iter()
            .flat_map(|prefix| {
                slot.iter().map(move |f| {
                    let mut p = prefix.clone();
                    p.push(f.clone());
                    p
                })
            })
            .collect()
    })
}

fn supporting(items: &BTreeSet<Item>, raw: &[Transaction]) -> Vec<String> {
    raw.iter()
        .filter(|t| items.is_subset(&t.items))
        .map(|t| t.id.clone())
        .collect()
}

/// Concrete specifications behind a normalized one: one class member per
/// representative, keeping those supported by some raw transaction.
pub fn expand(
    normalized: &Specification,
    partition: &Partition,
    raw: &[Transaction],
    rank: usize,
) -> CrossImplSpec {
    let reps: Vec<(Side, &String)> = normalized
        .context
        .iter()
        .map(|r| (Side::Ctx, r))
        .chain(normalized.response.iter().map(|r| (Side::Rsp, r)))
        .collect();
    let mut found: BTreeSet<(BTreeSet<String>, BTreeSet<String>)> = BTreeSet::new();
    for t in raw {
        let ctx: BTreeSet<String> = t
            .items
            .iter()
            .filter(|i| i.side == Side::Ctx)
            .map(|i| i.name.clone())
            .collect();
        let rsp: BTreeSet<String> = t
            .items
            .iter()
            .filter(|i| i.side == Side::Rsp)
            .map(|i| i.name.clone())
            .collect();
        let slots: Vec<Vec<String>> = reps
            .iter()
            .map(|(side, r)| match side {
                Side::Ctx => choices(&ctx, r, partition),
                Side::Rsp => choices(&rsp, r, partition),
            })
            .collect();
        for pick in product(&slots) {
            let mut c = BTreeSet::new();
            let mut r = BTreeSet::new();
            for ((side, _), f) in reps.iter().zip(pick) {
                match side {
                    Side::Ctx => c.insert(f),
                    Side::Rsp => r.insert(f),
                };
            }
            found.insert((c, r));
        }
    }
    let mut members: Vec<Specification> = found
        .into_iter()
        .map(|(c, r)| {
            let mut s = Specification::new(c, r);
            s.supporting = supporting(&s.items(), raw);
            s.support = s.supporting.len();
            s
        })
        .collect();
    members.sort_by(rank_order);
    CrossImplSpec {
        rank,
        normalized: normalized.clone(),
        members,
    }
}

/// Mine ranked cross-implementation specifications from handlers.
pub fn mine_specs(
    handlers: &[ErrorHandler],
    partition: &Partition,
    min_support: usize,
) -> Result<Vec<CrossImplSpec>, MiningError> {
    let normalized = build_transactions(handlers, partition);
    let raw = build_transactions(handlers, &Partition::identity());
    let itemsets = mine_closed(&normalized, min_support)?;
    Ok(specs_from_itemsets(&itemsets, &normalized)
        .iter()
        .enumerate()
        .map(|(i, s)| expand(s, partition, &raw, i + 1))
        .collect())
}

pub fn is_applicable(s: &Specification, context: &BTreeSet<String>) -> bool {
    s.context.is_subset(context) && !s.context.union(&s.response).all(|f| context.contains(f))
}

pub fn is_satisfied(
    s: &Specification,
    context: &BTreeSet<String>,
    response: &BTreeSet<String>,
) -> bool {
    is_applicable(s, context) && s.response.is_subset(response)
}

pub fn cross_applicable(x: &CrossImplSpec, h: &ErrorHandler) -> bool {
    x.effective_members()
        .iter()
        .any(|s| is_applicable(s, &h.context))
}

pub fn cross_satisfied(x: &CrossImplSpec, h: &ErrorHandler) -> bool {
    x.effective_members()
        .iter()
        .any(|s| is_satisfied(s, &h.context, &h.response))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub handler: String,
    pub spec_rank: usize,
    pub spec: Specification,
    pub missing: BTreeSet<String>,
}

/// Handlers to which a spec applies without being satisfied, by spec rank
/// then handler id.
pub fn find_violations(specs: &[CrossImplSpec], handlers: &[ErrorHandler]) -> Vec<Violation> {
    let mut sorted: Vec<&ErrorHandler> = handlers.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::new();
    for x in specs {
        for h in &sorted {
            if !cross_applicable(x, h) || cross_satisfied(x, h) {
                continue;
            }
            let best = x
                .effective_members()
                .into_iter()
                .filter(|s| is_applicable(s, &h.context))
                .max_by(|a, b| {
                    let ka = a.response.intersection(&h.response).count();
                    let kb = b.response.intersection(&h.response).count();
                    // On ties prefer the earlier member.
                    ka.cmp(&kb).then_with(|| rank_order(b, a))
                })
                .expect("applicable member exists");
            out.push(Violation {
                handler: h.id.to_string(),
                spec_rank: x.rank,
                spec: Specification {
                    supporting: Vec::new(),
                    ..best.clone()
                },
                missing: best.response.difference(&h.response).cloned().collect(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecsReport {
    pub min_support: usize,
    pub specs: Vec<CrossImplSpec>,
}

impl SpecsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MiningError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<5} {:>7}  specification", "rank", "support").unwrap();
        for x in &self.specs {
            writeln!(out, "{:<5} {:>7}  {}", x.rank, x.support(), x.normalized).unwrap();
            let only_self = x.members.len() == 1 && x.members[0].same_rule(&x.normalized);
            if !only_self {
                for m in &x.members {
                    writeln!(out, "{:<5} {:>7}    member {}", "", m.support, m).unwrap();
                }
            }
        }
        out
    }
}

pub fn violations_to_text(vs: &[Violation]) -> String {
    let mut out = String::new();
    for v in vs {
        let missing = v.missing.iter().cloned().collect::<Vec<_>>().join(", ");
        writeln!(
            out,
            "{}  violates #{} {}  missing {{{}}}",
            v.handler, v.spec_rank, v.spec, missing
        )
        .unwrap();
    }
    out
}

pub fn violations_to_json(vs: &[Violation]) -> String {
    let mut s = serde_json::to_string_pretty(vs).expect("violations serialize");
    s.push('\n');
    s
}
