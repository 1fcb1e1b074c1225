//! Program interchange format.
//!
//! A program is a JSON document describing functions as graphs of
//! instruction nodes, plus the declared error codes, record types and
//! external functions that instructions may refer to. The grammar is
//! documented in `docs/interchange.md`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a node inside one function.
///
/// Ordering is "natural": runs of digits compare numerically, so `n2`
/// sorts before `n10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(&self.0, &other.0).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut a, mut b) = (a.as_bytes(), b.as_bytes());
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let la = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let lb = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let da = trim_zeros(&a[..la]);
                let db = trim_zeros(&b[..lb]);
                let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[la..];
                b = &b[lb..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let n = digits.iter().take_while(|&&c| c == b'0').count();
    &digits[n..]
}

/// Instruction categories that become labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Load,
    Store,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Arith,
    Cast,
    Gep,
    Alloca,
    Ret,
}

impl Category {
    pub const ALL: [Category; 13] = [
        Category::Load,
        Category::Store,
        Category::Eq,
        Category::Ne,
        Category::Lt,
        Category::Le,
        Category::Gt,
        Category::Ge,
        Category::Arith,
        Category::Cast,
        Category::Gep,
        Category::Alloca,
        Category::Ret,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Load => "LOAD",
            Category::Store => "STORE",
            Category::Eq => "EQ",
            Category::Ne => "NE",
            Category::Lt => "LT",
            Category::Le => "LE",
            Category::Gt => "GT",
            Category::Ge => "GE",
            Category::Arith => "ARITH",
            Category::Cast => "CAST",
            Category::Gep => "GEP",
            Category::Alloca => "ALLOCA",
            Category::Ret => "RET",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Value returned by a `return` instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnValue {
    Ok,
    Var(String),
    ConstError(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrKind {
    Call {
        callee: String,
        result_var: Option<String>,
    },
    Branch {
        test_var: String,
        error_succ: NodeId,
        normal_succ: NodeId,
    },
    Return {
        value: ReturnValue,
    },
    Assign {
        lhs: String,
        rhs_var: String,
    },
    Plain,
}

impl InstrKind {
    pub fn name(&self) -> &'static str {
        match self {
            InstrKind::Call { .. } => "call",
            InstrKind::Branch { .. } => "branch",
            InstrKind::Return { .. } => "return",
            InstrKind::Assign { .. } => "assign",
            InstrKind::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub kind: InstrKind,
    pub categories: Vec<Category>,
    pub record_type: Option<String>,
    pub error_code: Option<String>,
}

impl Instruction {
    pub fn plain() -> Self {
        Instruction {
            kind: InstrKind::Plain,
            categories: Vec::new(),
            record_type: None,
            error_code: None,
        }
    }

    pub fn with_kind(kind: InstrKind) -> Self {
        Instruction {
            kind,
            ..Instruction::plain()
        }
    }

    /// The error code this instruction mentions, either explicitly or as the
    /// constant it returns.
    pub fn error_code_label(&self) -> Option<&str> {
        if let Some(code) = &self.error_code {
            return Some(code);
        }
        match &self.kind {
            InstrKind::Return {
                value: ReturnValue::ConstError(code),
            } => Some(code),
            _ => None,
        }
    }

    pub fn callee(&self) -> Option<&str> {
        match &self.kind {
            InstrKind::Call { callee, .. } => Some(callee),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub instr: Instruction,
    pub succ: Vec<NodeId>,
    /// Name of the exit point a `return` node flows into. Defaults to
    /// `<id>.exit` when absent.
    pub exit: Option<NodeId>,
}

impl Node {
    pub fn exit_id(&self, id: &NodeId) -> NodeId {
        self.exit
            .clone()
            .unwrap_or_else(|| NodeId(format!("{}.exit", id.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub entry: NodeId,
    pub nodes: BTreeMap<NodeId, Node>,
}

impl FunctionDef {
    /// Predecessor lists, in natural node order.
    pub fn predecessors(&self) -> BTreeMap<&NodeId, Vec<&NodeId>> {
        let mut preds: BTreeMap<&NodeId, Vec<&NodeId>> =
            self.nodes.keys().map(|id| (id, Vec::new())).collect();
        for (id, node) in &self.nodes {
            for s in &node.succ {
                if let Some(p) = preds.get_mut(s) {
                    if !p.contains(&id) {
                        p.push(id);
                    }
                }
            }
        }
        preds
    }

    /// Nodes reachable from `from` along successor edges, including `from`.
    pub fn reachable_from(&self, from: &NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from.clone()]);
        while let Some(id) = queue.pop_front() {
            if !self.nodes.contains_key(&id) || !seen.insert(id.clone()) {
                continue;
            }
            for s in &self.nodes[&id].succ {
                queue.push_back(s.clone());
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct External {
    pub may_return_errors: BTreeSet<String>,
    /// Opaque entry symbol for an external whose body is not modeled. Calls
    /// to such externals still push into it; the walk dead-ends there.
    pub entry: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub error_codes: BTreeMap<String, i64>,
    pub record_types: BTreeSet<String>,
    pub externals: BTreeMap<String, External>,
    pub functions: Vec<FunctionDef>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn is_defined(&self, name: &str) -> bool {
        self.function(name).is_some()
    }

    /// Names of all defined functions and externals.
    pub fn function_names(&self) -> BTreeSet<String> {
        self.functions
            .iter()
            .map(|f| f.name.clone())
            .chain(self.externals.keys().cloned())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let raw = RawProgram::from(self);
        let mut text = serde_json::to_string_pretty(&raw).expect("program serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Error)]
pub enum IrError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("{function}/{node}: call to unknown function `{callee}`")]
    UnknownCallee {
        function: String,
        node: NodeId,
        callee: String,
    },
    #[error("{location}: unknown error code `{code}`")]
    UnknownErrorCode { location: String, code: String },
    #[error("{location}: unknown record type `{name}`")]
    UnknownRecordType { location: String, name: String },
    #[error("invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub function: Option<String>,
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match (&self.function, &self.node) {
            (Some(func), Some(node)) => write!(f, "{sev}: {func}/{node}: {}", self.message),
            (Some(func), None) => write!(f, "{sev}: {func}: {}", self.message),
            _ => write!(f, "{sev}: {}", self.message),
        }
    }
}

// --- document form -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProgram {
    #[serde(default)]
    error_codes: BTreeMap<String, i64>,
    #[serde(default)]
    record_types: Vec<String>,
    #[serde(default)]
    externals: BTreeMap<String, RawExternal>,
    #[serde(default)]
    functions: Vec<RawFunction>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExternal {
    #[serde(default)]
    may_return_errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entry: Option<NodeId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    name: String,
    entry: NodeId,
    nodes: BTreeMap<NodeId, RawNode>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    instr: RawInstr,
    #[serde(default)]
    succ: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exit: Option<NodeId>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    callee: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    result_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_succ: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normal_succ: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<ReturnValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lhs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rhs_var: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    categories: Vec<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    record_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_code: Option<String>,
}

impl From<&Program> for RawProgram {
    fn from(p: &Program) -> Self {
        RawProgram {
            error_codes: p.error_codes.clone(),
            record_types: p.record_types.iter().cloned().collect(),
            externals: p
                .externals
                .iter()
                .map(|(name, ext)| {
                    let raw = RawExternal {
                        may_return_errors: ext.may_return_errors.iter().cloned().collect(),
                        entry: ext.entry.clone(),
                    };
                    (name.clone(), raw)
                })
                .collect(),
            functions: p
                .functions
                .iter()
                .map(|f| RawFunction {
                    name: f.name.clone(),
                    entry: f.entry.clone(),
                    nodes: f
                        .nodes
                        .iter()
                        .map(|(id, n)| {
                            let raw = RawNode {
                                instr: RawInstr::from(&n.instr),
                                succ: n.succ.clone(),
                                exit: n.exit.clone(),
                            };
                            (id.clone(), raw)
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl From<&Instruction> for RawInstr {
    fn from(i: &Instruction) -> Self {
        let mut raw = RawInstr {
            kind: i.kind.name().to_string(),
            categories: i.categories.clone(),
            record_type: i.record_type.clone(),
            error_code: i.error_code.clone(),
            ..RawInstr::default()
        };
        match &i.kind {
            InstrKind::Call { callee, result_var } => {
                raw.callee = Some(callee.clone());
                raw.result_var = result_var.clone();
            }
            InstrKind::Branch {
                test_var,
                error_succ,
                normal_succ,
            } => {
                raw.test_var = Some(test_var.clone());
                raw.error_succ = Some(error_succ.clone());
                raw.normal_succ = Some(normal_succ.clone());
            }
            InstrKind::Return { value } => raw.value = Some(value.clone()),
            InstrKind::Assign { lhs, rhs_var } => {
                raw.lhs = Some(lhs.clone());
                raw.rhs_var = Some(rhs_var.clone());
            }
            InstrKind::Plain => {}
        }
        raw
    }
}

fn required<T>(field: Option<T>, name: &str, kind: &str, loc: &str) -> Result<T, String> {
    field.ok_or_else(|| format!("{loc}: `{kind}` instruction requires field `{name}`"))
}

impl RawInstr {
    fn into_instruction(self, loc: &str) -> Result<Instruction, String> {
        let kind = self.kind.as_str();
        let forbid = |present: bool, name: &str| -> Result<(), String> {
            if present {
                Err(format!("{loc}: field `{name}` is not allowed on `{kind}`"))
            } else {
                Ok(())
            }
        };
        let call_fields = self.callee.is_some() || self.result_var.is_some();
        let branch_fields =
            self.test_var.is_some() || self.error_succ.is_some() || self.normal_succ.is_some();
        let assign_fields = self.lhs.is_some() || self.rhs_var.is_some();
        let ik = match kind {
            "call" => {
                forbid(branch_fields, "test_var/error_succ/normal_succ")?;
                forbid(self.value.is_some(), "value")?;
                forbid(assign_fields, "lhs/rhs_var")?;
                InstrKind::Call {
                    callee: required(self.callee, "callee", kind, loc)?,
                    result_var: self.result_var,
                }
            }
            "branch" => {
                forbid(call_fields, "callee/result_var")?;
                forbid(self.value.is_some(), "value")?;
                forbid(assign_fields, "lhs/rhs_var")?;
                InstrKind::Branch {
                    test_var: required(self.test_var, "test_var", kind, loc)?,
                    error_succ: required(self.error_succ, "error_succ", kind, loc)?,
                    normal_succ: required(self.normal_succ, "normal_succ", kind, loc)?,
                }
            }
            "return" => {
                forbid(call_fields, "callee/result_var")?;
                forbid(branch_fields, "test_var/error_succ/normal_succ")?;
                forbid(assign_fields, "lhs/rhs_var")?;
                InstrKind::Return {
                    value: required(self.value, "value", kind, loc)?,
                }
            }
            "assign" => {
                forbid(call_fields, "callee/result_var")?;
                forbid(branch_fields, "test_var/error_succ/normal_succ")?;
                forbid(self.value.is_some(), "value")?;
                InstrKind::Assign {
                    lhs: required(self.lhs, "lhs", kind, loc)?,
                    rhs_var: required(self.rhs_var, "rhs_var", kind, loc)?,
                }
            }
            "plain" => {
                forbid(call_fields, "callee/result_var")?;
                forbid(branch_fields, "test_var/error_succ/normal_succ")?;
                forbid(self.value.is_some(), "value")?;
                forbid(assign_fields, "lhs/rhs_var")?;
                InstrKind::Plain
            }
            other => return Err(format!("{loc}: unknown instruction kind `{other}`")),
        };
        Ok(Instruction {
            kind: ik,
            categories: self.categories,
            record_type: self.record_type,
            error_code: self.error_code,
        })
    }
}

/// Locate the 1-based line/column of a JSON path fragment for shape errors
/// that serde reports without position.
fn position_of(text: &str, needle: &str) -> (usize, usize) {
    match text.find(needle) {
        Some(offset) => {
            let before = &text[..offset];
            let line = before.matches('\n').count() + 1;
            let column = offset - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
            (line, column)
        }
        None => (0, 0),
    }
}

/// Parse an interchange document.
///
/// Fails on malformed JSON or instruction shapes, duplicate function names,
/// unknown callees and references to undeclared error codes or record types.
/// Structural problems such as successor arity are left to [`validate`].
pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let raw: RawProgram = serde_json::from_str(text).map_err(|e| IrError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut functions = Vec::with_capacity(raw.functions.len());
    for rf in raw.functions {
        let mut nodes = BTreeMap::new();
        for (id, rn) in rf.nodes {
            let loc = format!("{}/{}", rf.name, id);
            let instr = rn.instr.into_instruction(&loc).map_err(|message| {
                let (line, column) = position_of(text, &format!("\"{}\"", id));
                IrError::Syntax {
                    line,
                    column,
                    message,
                }
            })?;
            nodes.insert(
                id,
                Node {
                    instr,
                    succ: rn.succ,
                    exit: rn.exit,
                },
            );
        }
        functions.push(FunctionDef {
            name: rf.name,
            entry: rf.entry,
            nodes,
        });
    }

    let program = Program {
        error_codes: raw.error_codes,
        record_types: raw.record_types.into_iter().collect(),
        externals: raw
            .externals
            .into_iter()
            .map(|(name, re)| {
                let ext = External {
                    may_return_errors: re.may_return_errors.into_iter().collect(),
                    entry: re.entry,
                };
                (name, ext)
            })
            .collect(),
        functions,
    };

    check_references(&program)?;
    Ok(program)
}

fn check_references(p: &Program) -> Result<(), IrError> {
    let mut seen = HashSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) || p.externals.contains_key(&f.name) {
            return Err(IrError::DuplicateFunction(f.name.clone()));
        }
    }
    for (name, ext) in &p.externals {
        for code in &ext.may_return_errors {
            if !p.error_codes.contains_key(code) {
                return Err(IrError::UnknownErrorCode {
                    location: format!("external {name}"),
                    code: code.clone(),
                });
            }
        }
    }
    for f in &p.functions {
        for (id, node) in &f.nodes {
            let loc = || format!("{}/{}", f.name, id);
            if let Some(callee) = node.instr.callee() {
                if !p.is_defined(callee) && !p.externals.contains_key(callee) {
                    return Err(IrError::UnknownCallee {
                        function: f.name.clone(),
                        node: id.clone(),
                        callee: callee.to_string(),
                    });
                }
            }
            if let Some(rt) = &node.instr.record_type {
                if !p.record_types.contains(rt) {
                    return Err(IrError::UnknownRecordType {
                        location: loc(),
                        name: rt.clone(),
                    });
                }
            }
            let mut codes: Vec<&str> = node.instr.error_code.iter().map(String::as_str).collect();
            if let InstrKind::Return {
                value: ReturnValue::ConstError(c),
            } = &node.instr.kind
            {
                codes.push(c);
            }
            for code in codes {
                if !p.error_codes.contains_key(code) {
                    return Err(IrError::UnknownErrorCode {
                        location: loc(),
                        code: code.to_string(),
                    });
                }
            }
        }
    }
    Ok(())
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
}

fn is_node_id(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

/// Check every structural invariant of a program.
///
/// Returns an empty list iff the program is well-formed. Unreachable nodes
/// are reported as warnings; everything else is an error. Diagnostics are
/// ordered by function declaration order, then node id.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut program_level = Vec::new();
    let err = |message: String| Diagnostic {
        severity: Severity::Error,
        function: None,
        node: None,
        message,
    };

    for (name, value) in &p.error_codes {
        if !is_identifier(name) {
            program_level.push(err(format!("invalid error code name `{name}`")));
        }
        if *value >= 0 {
            program_level.push(err(format!(
                "error code `{name}` must be a negative integer, found {value}"
            )));
        }
    }
    for rt in &p.record_types {
        if !is_identifier(rt) {
            program_level.push(err(format!("invalid record type name `{rt}`")));
        }
    }
    for (name, ext) in &p.externals {
        if !is_identifier(name) {
            program_level.push(err(format!("invalid external name `{name}`")));
        }
        for code in &ext.may_return_errors {
            if !p.error_codes.contains_key(code) {
                program_level.push(err(format!(
                    "external `{name}` declares unknown error code `{code}`"
                )));
            }
        }
        if let Some(entry) = &ext.entry {
            if !is_node_id(entry.as_str()) {
                program_level.push(err(format!(
                    "external `{name}` has invalid entry `{entry}`"
                )));
            }
        }
    }
    let mut seen = HashSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            program_level.push(err(format!("duplicate function name `{}`", f.name)));
        } else if p.externals.contains_key(&f.name) {
            program_level.push(err(format!(
                "function `{}` is both defined and declared external",
                f.name
            )));
        }
    }

    let mut out = program_level;
    for f in &p.functions {
        let mut diags = validate_function(p, f);
        diags.sort_by(|a, b| a.node.cmp(&b.node).then(a.severity.cmp(&b.severity)));
        out.extend(diags);
    }
    out
}

fn validate_function(p: &Program, f: &FunctionDef) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut push = |severity, node: Option<&NodeId>, message: String| {
        diags.push(Diagnostic {
            severity,
            function: Some(f.name.clone()),
            node: node.cloned(),
            message,
        })
    };

    if !is_identifier(&f.name) {
        push(
            Severity::Error,
            None,
            format!("invalid function name `{}`", f.name),
        );
    }
    if !f.nodes.contains_key(&f.entry) {
        push(
            Severity::Error,
            None,
            format!("entry node `{}` does not exist", f.entry),
        );
    }

    let mut exits = HashSet::new();
    for (id, node) in &f.nodes {
        let at = Some(id);
        if !is_node_id(id.as_str()) {
            push(Severity::Error, at, format!("invalid node id `{id}`"));
        }
        for s in &node.succ {
            if !f.nodes.contains_key(s) {
                push(
                    Severity::Error,
                    at,
                    format!("successor `{s}` does not exist"),
                );
            }
        }
        let arity = node.succ.len();
        match &node.instr.kind {
            InstrKind::Return { .. } => {
                if arity != 0 {
                    push(
                        Severity::Error,
                        at,
                        format!("return node must have no successors, found {arity}"),
                    );
                }
            }
            InstrKind::Branch {
                error_succ,
                normal_succ,
                ..
            } => {
                if arity != 2 {
                    push(
                        Severity::Error,
                        at,
                        format!("branch node must have exactly two successors, found {arity}"),
                    );
                } else if node.succ[0] != *error_succ || node.succ[1] != *normal_succ {
                    push(
                        Severity::Error,
                        at,
                        format!(
                            "branch successors must be [error_succ, normal_succ] = [{error_succ}, {normal_succ}]"
                        ),
                    );
                }
            }
            _ => {
                if arity > 1 {
                    push(
                        Severity::Error,
                        at,
                        format!(
                            "{} node may have at most one successor, found {arity}",
                            node.instr.kind.name()
                        ),
                    );
                }
            }
        }
        if let Some(exit) = &node.exit {
            if !matches!(node.instr.kind, InstrKind::Return { .. }) {
                push(
                    Severity::Error,
                    at,
                    "only return nodes may name an exit".to_string(),
                );
            }
            if f.nodes.contains_key(exit) {
                push(
                    Severity::Error,
                    at,
                    format!("exit `{exit}` collides with a node id"),
                );
            }
        }
        if matches!(node.instr.kind, InstrKind::Return { .. }) {
            let exit = node.exit_id(id);
            if !exits.insert(exit.clone()) {
                push(Severity::Error, at, format!("exit `{exit}` is used twice"));
            }
        }
        if let Some(callee) = node.instr.callee() {
            if !p.is_defined(callee) && !p.externals.contains_key(callee) {
                push(
                    Severity::Error,
                    at,
                    format!("call to unknown function `{callee}`"),
                );
            }
        }
        if let Some(rt) = &node.instr.record_type {
            if !p.record_types.contains(rt) {
                push(Severity::Error, at, format!("unknown record type `{rt}`"));
            }
        }
        if let Some(code) = &node.instr.error_code {
            if !p.error_codes.contains_key(code) {
                push(Severity::Error, at, format!("unknown error code `{code}`"));
            }
        }
        if let InstrKind::Return {
            value: ReturnValue::ConstError(code),
        } = &node.instr.kind
        {
            if !p.error_codes.contains_key(code) {
                push(Severity::Error, at, format!("unknown error code `{code}`"));
            }
            if let Some(explicit) = &node.instr.error_code {
                if explicit != code {
                    push(
                        Severity::Error,
                        at,
                        format!("error_code `{explicit}` disagrees with returned `{code}`"),
                    );
                }
            }
        }
    }

    if f.nodes.contains_key(&f.entry) {
        let reachable = f.reachable_from(&f.entry);
        for id in f.nodes.keys() {
            if !reachable.contains(id) {
                push(
                    Severity::Warning,
                    Some(id),
                    "node is unreachable from entry".to_string(),
                );
            }
        }
    }
    diags
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}
