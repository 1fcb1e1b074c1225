//! Error-handler location via the return-code idiom, and extraction of each
//! handler's context and response sets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    has_errors, validate, Diagnostic, FunctionDef, InstrKind, NodeId, Program, ReturnValue,
};

#[derive(Debug, Error)]
pub enum HandlerError {
    #[error("program is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProgram(Vec<Diagnostic>),
    #[error("handlers file: {0}")]
    Json(#[from] serde_json::Error),
}

type VarState = BTreeMap<String, BTreeSet<String>>;

/// Error codes each function may return, and the codes each variable may
/// hold on entry to each node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MayErrorFacts {
    pub returns: BTreeMap<String, BTreeSet<String>>,
    pub at_node: BTreeMap<String, BTreeMap<NodeId, VarState>>,
}

impl MayErrorFacts {
    pub fn codes(&self, function: &str, node: &NodeId, var: &str) -> BTreeSet<String> {
        self.at_node
            .get(function)
            .and_then(|m| m.get(node))
            .and_then(|s| s.get(var))
            .cloned()
            .unwrap_or_default()
    }

    pub fn may_hold(&self, function: &str, node: &NodeId, var: &str) -> bool {
        !self.codes(function, node, var).is_empty()
    }

    pub fn returns(&self, function: &str) -> BTreeSet<String> {
        self.returns.get(function).cloned().unwrap_or_default()
    }
}

fn transfer(
    node: &crate::ir::Node,
    input: &VarState,
    returns: &BTreeMap<String, BTreeSet<String>>,
) -> VarState {
    let mut out = input.clone();
    match &node.instr.kind {
        InstrKind::Call {
            callee,
            result_var: Some(v),
        } => {
            match returns.get(callee).filter(|s| !s.is_empty()) {
                Some(codes) => out.insert(v.clone(), codes.clone()),
                None => out.remove(v),
            };
        }
        InstrKind::Assign { lhs, rhs_var } => {
            match input.get(rhs_var) {
                Some(codes) => out.insert(lhs.clone(), codes.clone()),
                None => out.remove(lhs),
            };
        }
        _ => {}
    }
    out
}

/// The state flowing along `from -> to`. On the normal edge of a branch the
/// tested variable is known to hold no error.
fn edge_state(node: &crate::ir::Node, to: &NodeId, mut out: VarState) -> VarState {
    if let InstrKind::Branch {
        test_var,
        error_succ,
        normal_succ,
    } = &node.instr.kind
    {
        if to == normal_succ && error_succ != normal_succ {
            out.remove(test_var);
        }
    }
    out
}

fn solve_function(
    f: &FunctionDef,
    returns: &BTreeMap<String, BTreeSet<String>>,
) -> BTreeMap<NodeId, VarState> {
    let mut at: BTreeMap<NodeId, VarState> = f
        .nodes
        .keys()
        .map(|id| (id.clone(), VarState::new()))
        .collect();
    let mut queue: VecDeque<NodeId> = f.nodes.keys().cloned().collect();
    let mut queued: BTreeSet<NodeId> = f.nodes.keys().cloned().collect();
    while let Some(id) = queue.pop_front() {
        queued.remove(&id);
        let node = &f.nodes[&id];
        let out = transfer(node, &at[&id], returns);
        for s in &node.succ {
            let incoming = edge_state(node, s, out.clone());
            let target = at.get_mut(s).expect("validated successor");
            let mut changed = false;
            for (v, codes) in incoming {
                let entry = target.entry(v).or_default();
                let before = entry.len();
                entry.extend(codes);
                changed |= entry.len() != before;
            }
            if changed && queued.insert(s.clone()) {
                queue.push_back(s.clone());
            }
        }
    }
    at
}

fn summarize(f: &FunctionDef, at: &BTreeMap<NodeId, VarState>) -> BTreeSet<String> {
    let mut codes = BTreeSet::new();
    for (id, node) in &f.nodes {
        if let InstrKind::Return { value } = &node.instr.kind {
            match value {
                ReturnValue::ConstError(e) => {
                    codes.insert(e.clone());
                }
                ReturnValue::Var(v) => {
                    if let Some(s) = at[id].get(v) {
                        codes.extend(s.iter().cloned());
                    }
                }
                ReturnValue::Ok => {}
            }
        }
    }
    codes
}

/// One round of the analysis: re-solve every function against the current
/// summaries, then recompute the summaries.
pub fn may_error_step(p: &Program, facts: &MayErrorFacts) -> MayErrorFacts {
    let mut returns = facts.returns.clone();
    for (name, ext) in &p.externals {
        returns.insert(name.clone(), ext.may_return_errors.clone());
    }
    let mut next = MayErrorFacts {
        returns: returns.clone(),
        at_node: BTreeMap::new(),
    };
    for f in &p.functions {
        let at = solve_function(f, &returns);
        let mut summary = summarize(f, &at);
        summary.extend(returns.get(&f.name).cloned().unwrap_or_default());
        next.returns.insert(f.name.clone(), summary);
        next.at_node.insert(f.name.clone(), at);
    }
    next
}

/// Least fixpoint of the may-return-error analysis.
pub fn may_error(p: &Program) -> MayErrorFacts {
    let mut facts = MayErrorFacts::default();
    loop {
        let next = may_error_step(p, &facts);
        if next == facts {
            return facts;
        }
        facts = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    /// A branch testing a value that may hold an error code.
    BranchTest,
    /// A block returning an error code without such a test.
    ErrorReturn,
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technique::BranchTest => "branch-test",
            Technique::ErrorReturn => "error-return",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HandlerId {
    pub function: String,
    pub node: NodeId,
    pub technique: Technique,
}

impl fmt::Display for HandlerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.function, self.node, self.technique)
    }
}

impl HandlerId {
    pub fn parse(text: &str) -> Option<Self> {
        let mut parts = text.rsplitn(3, '/');
        let technique = match parts.next()? {
            "branch-test" => Technique::BranchTest,
            "error-return" => Technique::ErrorReturn,
            _ => return None,
        };
        let node = NodeId::new(parts.next()?);
        let function = parts.next()?.to_string();
        Some(HandlerId {
            function,
            node,
            technique,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHandler {
    #[serde(flatten)]
    pub id: HandlerId,
    /// First node of the error-handling code.
    pub root: NodeId,
    /// Branch at which the error is detected, if any.
    pub detection: Option<NodeId>,
    pub context: BTreeSet<String>,
    pub response: BTreeSet<String>,
}

/// Start of the straight-line run ending at `node`, and the node before it.
fn straight_line_start(
    f: &FunctionDef,
    preds: &BTreeMap<&NodeId, Vec<&NodeId>>,
    node: &NodeId,
) -> (NodeId, Option<NodeId>) {
    let mut cur = node.clone();
    let mut seen = BTreeSet::from([cur.clone()]);
    loop {
        let ps = &preds[&cur];
        if ps.len() != 1 || cur == f.entry {
            let before = if ps.len() == 1 {
                Some(ps[0].clone())
            } else {
                None
            };
            return (cur, before);
        }
        let p = ps[0];
        if f.nodes[p].succ.len() != 1 || !seen.insert(p.clone()) {
            return (cur, Some(p.clone()));
        }
        cur = p.clone();
    }
}

fn handlers_in(f: &FunctionDef, facts: &MayErrorFacts) -> Vec<ErrorHandler> {
    let mut out = Vec::new();
    let mut covered = BTreeSet::new();
    for (id, node) in &f.nodes {
        if let InstrKind::Branch {
            test_var,
            error_succ,
            ..
        } = &node.instr.kind
        {
            if facts.may_hold(&f.name, id, test_var) {
                covered.extend(f.reachable_from(error_succ));
                out.push(ErrorHandler {
                    id: HandlerId {
                        function: f.name.clone(),
                        node: id.clone(),
                        technique: Technique::BranchTest,
                    },
                    root: error_succ.clone(),
                    detection: Some(id.clone()),
                    context: BTreeSet::new(),
                    response: BTreeSet::new(),
                });
            }
        }
    }
    let preds = f.predecessors();
    for (id, node) in &f.nodes {
        let returns_error = match &node.instr.kind {
            InstrKind::Return {
                value: ReturnValue::ConstError(_),
            } => true,
            InstrKind::Return {
                value: ReturnValue::Var(v),
            } => facts.may_hold(&f.name, id, v),
            _ => false,
        };
        if !returns_error || covered.contains(id) {
            continue;
        }
        let (root, before) = straight_line_start(f, &preds, id);
        let detection =
            before.filter(|b| matches!(f.nodes[b].instr.kind, InstrKind::Branch { .. }));
        out.push(ErrorHandler {
            id: HandlerId {
                function: f.name.clone(),
                node: id.clone(),
                technique: Technique::ErrorReturn,
            },
            root,
            detection,
            context: BTreeSet::new(),
            response: BTreeSet::new(),
        });
    }
    out
}

/// Locate handlers; context and response sets are left empty.
pub fn find_handlers(p: &Program, facts: &MayErrorFacts) -> Vec<ErrorHandler> {
    let mut all: Vec<ErrorHandler> = p
        .functions
        .iter()
        .flat_map(|f| handlers_in(f, facts))
        .collect();
    all.sort_by(|a, b| a.id.cmp(&b.id));
    all.dedup_by(|a, b| a.id == b.id);
    all
}

fn tested_var(f: &FunctionDef, node: &NodeId) -> Option<String> {
    match &f.nodes[node].instr.kind {
        InstrKind::Branch { test_var, .. } => Some(test_var.clone()),
        _ => None,
    }
}

/// Calls made before the detection point on paths that took the normal side
/// of every earlier branch. The call defining the tested value is not part
/// of the context.
fn context_of(f: &FunctionDef, h: &ErrorHandler) -> BTreeSet<String> {
    let preds = f.predecessors();
    let (start, tracked) = match &h.detection {
        Some(d) => (d.clone(), tested_var(f, d)),
        None => (h.root.clone(), None),
    };
    let mut context = BTreeSet::new();
    let mut seen: BTreeSet<(NodeId, Option<String>)> = BTreeSet::new();
    let mut stack = vec![(start, tracked)];
    while let Some((cur, tracked)) = stack.pop() {
        for &p in &preds[&cur] {
            let pnode = &f.nodes[p];
            if let InstrKind::Branch { normal_succ, .. } = &pnode.instr.kind {
                if *normal_succ != cur {
                    continue;
                }
            }
            let mut next = tracked.clone();
            match &pnode.instr.kind {
                InstrKind::Call { callee, result_var } => {
                    if result_var.is_some() && *result_var == tracked {
                        next = None;
                    } else {
                        context.insert(callee.clone());
                    }
                }
                InstrKind::Assign { lhs, rhs_var } if Some(lhs) == tracked.as_ref() => {
                    next = Some(rhs_var.clone());
                }
                _ => {}
            }
            if seen.insert((p.clone(), next.clone())) {
                stack.push((p.clone(), next));
            }
        }
    }
    context
}

fn response_of(f: &FunctionDef, h: &ErrorHandler) -> BTreeSet<String> {
    f.reachable_from(&h.root)
        .iter()
        .filter_map(|id| f.nodes[id].instr.callee().map(str::to_string))
        .collect()
}

/// Context set C_H and response set R_H of one handler.
pub fn extract_context_response(
    p: &Program,
    h: &ErrorHandler,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let f = p.function(&h.id.function).expect("handler function exists");
    (context_of(f, h), response_of(f, h))
}

/// Validate, locate every handler and fill in its sets.
pub fn analyze(p: &Program) -> Result<Vec<ErrorHandler>, HandlerError> {
    let diags = validate(p);
    if has_errors(&diags) {
        return Err(HandlerError::InvalidProgram(diags));
    }
    let facts = may_error(p);
    let mut handlers = find_handlers(p, &facts);
    for h in &mut handlers {
        let (c, r) = extract_context_response(p, h);
        h.context = c;
        h.response = r;
    }
    Ok(handlers)
}

pub fn handlers_to_json(handlers: &[ErrorHandler]) -> String {
    let mut text = serde_json::to_string_pretty(handlers).expect("handlers serialize");
    text.push('\n');
    text
}

pub fn handlers_from_json(text: &str) -> Result<Vec<ErrorHandler>, HandlerError> {
    Ok(serde_json::from_str(text)?)
}

pub fn handlers_to_text(handlers: &[ErrorHandler]) -> String {
    let mut out = String::new();
    for h in handlers {
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        out.push_str(&format!(
            "{}  context {{{}}}  response {{{}}}\n",
            h.id,
            join(&h.context),
            join(&h.response)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn const_error_return() {
        let p = parse_program(
            r#"{"error_codes": {"ENOMEM": -12}, "functions": [{"name": "f", "entry": "n1", "nodes": {
              "n1": {"instr": {"kind": "return", "value": {"const_error": "ENOMEM"}}}}}]}"#,
        )
        .unwrap();
        assert_eq!(may_error(&p).returns("f"), set(&["ENOMEM"]));
    }

    #[test]
    fn error_flows_through_variable() {
        let p = parse_program(
            r#"{"error_codes": {"EIO": -5}, "externals": {"pci_enable_device": {"may_return_errors": ["EIO"]}},
              "functions": [{"name": "f", "entry": "n1", "nodes": {
              "n1": {"instr": {"kind": "call", "callee": "pci_enable_device", "result_var": "v"}, "succ": ["n2"]},
              "n2": {"instr": {"kind": "assign", "lhs": "w", "rhs_var": "v"}, "succ": ["n3"]},
              "n3": {"instr": {"kind": "return", "value": {"var": "w"}}}}},
              {"name": "g", "entry": "n1", "nodes": {
              "n1": {"instr": {"kind": "call", "callee": "f", "result_var": "r"}, "succ": ["n2"]},
              "n2": {"instr": {"kind": "return", "value": {"var": "r"}}}}},
              {"name": "h", "entry": "n1", "nodes": {
              "n1": {"instr": {"kind": "return", "value": "ok"}}}}]}"#,
        )
        .unwrap();
        let facts = may_error(&p);
        assert_eq!(facts.returns("f"), set(&["EIO"]));
        assert_eq!(facts.returns("g"), set(&["EIO"]));
        assert!(facts.returns("h").is_empty());
        assert_eq!(may_error_step(&p, &facts), facts);
    }

    #[test]
    fn no_branches_no_handlers() {
        let p = parse_program(
            r#"{"functions": [{"name": "f", "entry": "n1", "nodes": {
              "n1": {"instr": {"kind": "plain"}, "succ": ["n2"]},
              "n2": {"instr": {"kind": "return", "value": "ok"}}}}]}"#,
        )
        .unwrap();
        assert!(analyze(&p).unwrap().is_empty());
    }

    #[test]
    fn normal_edge_clears_tested_value() {
        let p = parse_program(
            r#"{"error_codes": {"EIO": -5}, "externals": {"e": {"may_return_errors": ["EIO"]}},
              "functions": [{"name": "f", "entry": "n1", "nodes": {
              "n1": {"instr": {"kind": "call", "callee": "e", "result_var": "v"}, "succ": ["n2"]},
              "n2": {"instr": {"kind": "branch", "test_var": "v", "error_succ": "n3", "normal_succ": "n4"}, "succ": ["n3", "n4"]},
              "n3": {"instr": {"kind": "return", "value": {"var": "v"}}},
              "n4": {"instr": {"kind": "return", "value": {"var": "v"}}}}}]}"#,
        )
        .unwrap();
        let hs = analyze(&p).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].id.technique, Technique::BranchTest);
        assert_eq!(hs[0].root, NodeId::new("n3"));
    }

    #[test]
    fn handler_id_round_trip() {
        let id = HandlerId {
            function: "f".into(),
            node: NodeId::new("n7"),
            technique: Technique::ErrorReturn,
        };
        assert_eq!(id.to_string(), "f/n7/error-return");
        assert_eq!(HandlerId::parse("f/n7/error-return"), Some(id));
        assert_eq!(HandlerId::parse("f/n7/other"), None);
    }
}
