//! Labeled pushdown-system encoding of a program.
//!
//! Every program point becomes a stack symbol under a single control
//! location. Intraprocedural edges are internal rules, calls to functions
//! with a body add a push rule into the callee's entry next to a labeled
//! internal rule that steps over the call, and each return flows through an
//! internal rule into its exit point, which is popped. Only internal rules
//! carry labels.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ir::{self, Diagnostic, InstrKind, NodeId, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelKind {
    Function,
    RecordType,
    Category,
    ErrorCode,
}

impl LabelKind {
    fn prefix(self) -> &'static str {
        match self {
            LabelKind::Function => "fn",
            LabelKind::RecordType => "type",
            LabelKind::Category => "cat",
            LabelKind::ErrorCode => "err",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    pub kind: LabelKind,
    pub name: String,
}

impl Label {
    pub fn new(kind: LabelKind, name: impl Into<String>) -> Self {
        Label {
            kind,
            name: name.into(),
        }
    }

    pub fn function(name: impl Into<String>) -> Self {
        Label::new(LabelKind::Function, name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleId(pub u32);

/// A program point, qualified by the function that owns it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StackSymbol {
    pub function: String,
    pub node: NodeId,
}

impl fmt::Display for StackSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.function, self.node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Pop,
    Internal,
    Push,
}

/// `⟨lhs⟩ ↪ ⟨rhs⟩` with its label sequence. `rhs[0]` is the new top of stack.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledRule {
    pub lhs: SymbolId,
    pub rhs: Vec<SymbolId>,
    pub labels: Vec<LabelId>,
}

impl LabeledRule {
    pub fn kind(&self) -> RuleKind {
        match self.rhs.len() {
            0 => RuleKind::Pop,
            1 => RuleKind::Internal,
            _ => RuleKind::Push,
        }
    }
}

/// A configuration: the stack (top is the last element) and the labels
/// emitted so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub stack: Vec<SymbolId>,
    pub emitted: Vec<LabelId>,
}

impl Configuration {
    /// Build from a stack listed top first.
    pub fn from_top_first(stack: &[SymbolId]) -> Self {
        Configuration {
            stack: stack.iter().rev().copied().collect(),
            emitted: Vec::new(),
        }
    }

    pub fn top(&self) -> Option<SymbolId> {
        self.stack.last().copied()
    }

    pub fn stack_top_first(&self) -> Vec<SymbolId> {
        self.stack.iter().rev().copied().collect()
    }
}

#[derive(Debug, Error)]
pub enum LpdsError {
    #[error("cannot encode an invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProgram(Vec<Diagnostic>),
    #[error("unknown stack symbol `{0}`")]
    UnknownSymbol(String),
}

#[derive(Debug, Clone)]
pub struct Lpds {
    symbols: Vec<StackSymbol>,
    symbol_index: HashMap<StackSymbol, SymbolId>,
    labels: Vec<Label>,
    label_index: HashMap<Label, LabelId>,
    rendered: Vec<String>,
    render_index: HashMap<String, LabelId>,
    rules: Vec<LabeledRule>,
    by_lhs: Vec<Vec<RuleId>>,
    by_label: Vec<Vec<RuleId>>,
}

struct Builder {
    symbols: Vec<StackSymbol>,
    symbol_index: HashMap<StackSymbol, SymbolId>,
    labels: Vec<Label>,
    label_index: HashMap<Label, LabelId>,
    rules: Vec<LabeledRule>,
    seen: HashSet<LabeledRule>,
}

impl Builder {
    fn symbol(&mut self, function: &str, node: &NodeId) -> SymbolId {
        let sym = StackSymbol {
            function: function.to_string(),
            node: node.clone(),
        };
        if let Some(&id) = self.symbol_index.get(&sym) {
            return id;
        }
        let id = SymbolId(self.symbols.len() as u32);
        self.symbols.push(sym.clone());
        self.symbol_index.insert(sym, id);
        id
    }

    fn label(&mut self, label: Label) -> LabelId {
        if let Some(&id) = self.label_index.get(&label) {
            return id;
        }
        let id = LabelId(self.labels.len() as u32);
        self.labels.push(label.clone());
        self.label_index.insert(label, id);
        id
    }

    fn rule(&mut self, lhs: SymbolId, rhs: Vec<SymbolId>, labels: Vec<LabelId>) {
        let rule = LabeledRule { lhs, rhs, labels };
        if self.seen.insert(rule.clone()) {
            self.rules.push(rule);
        }
    }
}

/// Labels attached to the internal rule(s) leaving a node, in the fixed
/// order record type, categories, error code, function.
fn instruction_labels(instr: &ir::Instruction) -> Vec<Label> {
    let mut out = Vec::new();
    if let Some(rt) = &instr.record_type {
        out.push(Label::new(LabelKind::RecordType, rt.clone()));
    }
    for c in &instr.categories {
        out.push(Label::new(LabelKind::Category, c.name()));
    }
    if let Some(code) = instr.error_code_label() {
        out.push(Label::new(LabelKind::ErrorCode, code));
    }
    if let Some(callee) = instr.callee() {
        out.push(Label::function(callee));
    }
    out
}

/// Encode a program as a labeled pushdown system.
pub fn encode(p: &Program) -> Result<Lpds, LpdsError> {
    let diags = ir::validate(p);
    if ir::has_errors(&diags) {
        return Err(LpdsError::InvalidProgram(
            diags
                .into_iter()
                .filter(|d| d.severity == ir::Severity::Error)
                .collect(),
        ));
    }

    let mut b = Builder {
        symbols: Vec::new(),
        symbol_index: HashMap::new(),
        labels: Vec::new(),
        label_index: HashMap::new(),
        rules: Vec::new(),
        seen: HashSet::new(),
    };

    for f in &p.functions {
        for (id, node) in &f.nodes {
            let lhs = b.symbol(&f.name, id);
            let labels: Vec<LabelId> = instruction_labels(&node.instr)
                .into_iter()
                .map(|l| b.label(l))
                .collect();
            match &node.instr.kind {
                InstrKind::Return { .. } => {
                    let exit = b.symbol(&f.name, &node.exit_id(id));
                    b.rule(lhs, vec![exit], labels);
                    b.rule(exit, Vec::new(), Vec::new());
                }
                InstrKind::Call { callee, .. } => {
                    let entry = match p.function(callee) {
                        Some(def) => Some((def.name.as_str(), &def.entry)),
                        None => p.externals[callee.as_str()]
                            .entry
                            .as_ref()
                            .map(|e| (callee.as_str(), e)),
                    };
                    for succ in &node.succ {
                        let v = b.symbol(&f.name, succ);
                        if let Some((fname, e)) = entry {
                            let e = b.symbol(fname, e);
                            b.rule(lhs, vec![e, v], Vec::new());
                        }
                        b.rule(lhs, vec![v], labels.clone());
                    }
                }
                _ => {
                    for succ in &node.succ {
                        let v = b.symbol(&f.name, succ);
                        b.rule(lhs, vec![v], labels.clone());
                    }
                }
            }
        }
    }

    let rendered = render_labels(&b.labels);
    let render_index = rendered
        .iter()
        .enumerate()
        .map(|(i, r)| (r.clone(), LabelId(i as u32)))
        .collect();
    let mut by_lhs = vec![Vec::new(); b.symbols.len()];
    let mut by_label = vec![Vec::new(); b.labels.len()];
    for (i, r) in b.rules.iter().enumerate() {
        by_lhs[r.lhs.0 as usize].push(RuleId(i as u32));
        let mut distinct: Vec<LabelId> = r.labels.clone();
        distinct.sort();
        distinct.dedup();
        for l in distinct {
            by_label[l.0 as usize].push(RuleId(i as u32));
        }
    }

    Ok(Lpds {
        symbols: b.symbols,
        symbol_index: b.symbol_index,
        labels: b.labels,
        label_index: b.label_index,
        rendered,
        render_index,
        rules: b.rules,
        by_lhs,
        by_label,
    })
}

/// Render labels by bare name, prefixing the kind only for names that occur
/// under more than one kind.
fn render_labels(labels: &[Label]) -> Vec<String> {
    let mut kinds_per_name: BTreeMap<&str, BTreeSet<LabelKind>> = BTreeMap::new();
    for l in labels {
        kinds_per_name.entry(&l.name).or_default().insert(l.kind);
    }
    labels
        .iter()
        .map(|l| {
            if kinds_per_name[l.name.as_str()].len() > 1 {
                format!("{}:{}", l.kind.prefix(), l.name)
            } else {
                l.name.clone()
            }
        })
        .collect()
}

impl Lpds {
    pub fn rules(&self) -> &[LabeledRule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &LabeledRule {
        &self.rules[id.0 as usize]
    }

    pub fn symbols(&self) -> &[StackSymbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: SymbolId) -> &StackSymbol {
        &self.symbols[id.0 as usize]
    }

    pub fn symbol_id(&self, function: &str, node: &str) -> Option<SymbolId> {
        self.symbol_index
            .get(&StackSymbol {
                function: function.to_string(),
                node: NodeId::from(node),
            })
            .copied()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.labels[id.0 as usize]
    }

    pub fn label_id(&self, label: &Label) -> Option<LabelId> {
        self.label_index.get(label).copied()
    }

    /// Rendered text of a label; unique across all labels of this system.
    pub fn render(&self, id: LabelId) -> &str {
        &self.rendered[id.0 as usize]
    }

    pub fn label_by_rendered(&self, text: &str) -> Option<LabelId> {
        self.render_index.get(text).copied()
    }

    pub fn render_all(&self, ids: &[LabelId]) -> Vec<&str> {
        ids.iter().map(|&l| self.render(l)).collect()
    }

    /// Label ids sorted by rendered text.
    pub fn labels_sorted(&self) -> Vec<LabelId> {
        let mut ids: Vec<LabelId> = (0..self.labels.len() as u32).map(LabelId).collect();
        ids.sort_by(|a, b| self.render(*a).cmp(self.render(*b)));
        ids
    }

    /// Rendered names of all function labels.
    pub fn function_labels(&self) -> BTreeSet<String> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LabelKind::Function)
            .map(|(i, _)| self.rendered[i].clone())
            .collect()
    }

    pub fn rules_with_lhs(&self, sym: SymbolId) -> &[RuleId] {
        &self.by_lhs[sym.0 as usize]
    }

    /// Rules whose label sequence contains `label`.
    pub fn rules_with_label(&self, label: LabelId) -> &[RuleId] {
        &self.by_label[label.0 as usize]
    }

    /// Rules enabled in a configuration; empty for an empty stack.
    pub fn enabled(&self, c: &Configuration) -> &[RuleId] {
        match c.top() {
            Some(top) => self.rules_with_lhs(top),
            None => &[],
        }
    }

    /// Fire `rule` on `c`. The rule's lhs must match the top of the stack.
    pub fn apply(&self, rule: RuleId, c: &mut Configuration) {
        let r = self.rule(rule);
        let top = c.stack.pop();
        debug_assert_eq!(top, Some(r.lhs));
        c.stack.extend(r.rhs.iter().rev().copied());
        c.emitted.extend_from_slice(&r.labels);
    }

    /// All one-step successors of a configuration. A configuration with an
    /// empty stack is terminal and has none.
    pub fn successors(&self, c: &Configuration) -> Vec<Configuration> {
        self.enabled(c)
            .iter()
            .map(|&r| {
                let mut next = c.clone();
                self.apply(r, &mut next);
                next
            })
            .collect()
    }

    pub fn render_rule(&self, r: &LabeledRule) -> String {
        let rhs: Vec<String> = r.rhs.iter().map(|&s| self.symbol(s).to_string()).collect();
        let mut line = format!("⟨{}⟩ -> ⟨{}⟩", self.symbol(r.lhs), rhs.join(" "));
        if !r.labels.is_empty() {
            line.push_str(" : ");
            line.push_str(&self.render_all(&r.labels).join(","));
        }
        line
    }

    /// One rule per line, functions in declaration order and nodes in
    /// natural order within each function.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&self.render_rule(r));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, kind: RuleKind) -> usize {
        self.rules.iter().filter(|r| r.kind() == kind).count()
    }
}
