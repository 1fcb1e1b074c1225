//! Generated programs used by tests and benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{
    Category, External, FunctionDef, InstrKind, Instruction, Node, NodeId, Program, ReturnValue,
};
use crate::synonyms::Partition;

/// Builds one function as a sequence of numbered nodes.
struct Body {
    name: String,
    nodes: BTreeMap<NodeId, Node>,
    next: usize,
}

impl Body {
    fn new(name: impl Into<String>) -> Self {
        Body {
            name: name.into(),
            nodes: BTreeMap::new(),
            next: 1,
        }
    }

    fn fresh(&mut self) -> NodeId {
        let id = NodeId::new(format!("n{}", self.next));
        self.next += 1;
        id
    }

    fn put(&mut self, id: NodeId, instr: Instruction, succ: Vec<NodeId>) {
        self.nodes.insert(
            id,
            Node {
                instr,
                succ,
                exit: None,
            },
        );
    }

    fn finish(self) -> FunctionDef {
        FunctionDef {
            name: self.name,
            entry: NodeId::new("n1"),
            nodes: self.nodes,
        }
    }
}

fn call(callee: &str, result: Option<&str>) -> Instruction {
    Instruction::with_kind(InstrKind::Call {
        callee: callee.to_string(),
        result_var: result.map(str::to_string),
    })
}

fn ret(value: ReturnValue) -> Instruction {
    Instruction::with_kind(InstrKind::Return { value })
}

fn branch(var: &str, err: &NodeId, normal: &NodeId) -> Instruction {
    Instruction::with_kind(InstrKind::Branch {
        test_var: var.to_string(),
        error_succ: err.clone(),
        normal_succ: normal.clone(),
    })
}

/// A straight-line function: each instruction flows into the next, the last
/// is a return of `ok`.
fn straight(name: &str, instrs: Vec<Instruction>) -> FunctionDef {
    let mut b = Body::new(name);
    let ids: Vec<NodeId> = (0..=instrs.len()).map(|_| b.fresh()).collect();
    for (i, instr) in instrs.into_iter().enumerate() {
        b.put(ids[i].clone(), instr, vec![ids[i + 1].clone()]);
    }
    b.put(ids[ids.len() - 1].clone(), ret(ReturnValue::Ok), Vec::new());
    b.finish()
}

/// A random program of `n` functions with calls (including recursion),
/// branches, loops, early returns and calls to externals.
pub fn random_program(n: usize, seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories = [
        Category::Load,
        Category::Store,
        Category::Eq,
        Category::Lt,
        Category::Arith,
        Category::Gep,
    ];
    let mut p = Program::default();
    p.error_codes.insert("EIO".into(), -5);
    p.error_codes.insert("ENOMEM".into(), -12);
    for t in ["dev", "buf", "ctx"] {
        p.record_types.insert(t.into());
    }
    p.externals.insert(
        "ext_alloc".into(),
        External {
            may_return_errors: BTreeSet::from(["ENOMEM".to_string()]),
            entry: Some(NodeId::new("x1")),
        },
    );
    p.externals.insert("ext_log".into(), External::default());
    let names: Vec<String> = (0..n).map(|i| format!("fn{i:02}")).collect();
    for name in &names {
        let len = rng.gen_range(3..12);
        let ids: Vec<NodeId> = (1..=len).map(|i| NodeId::new(format!("n{i}"))).collect();
        let mut b = Body::new(name.clone());
        for i in 0..len {
            let last = i + 1 == len;
            let roll = rng.gen_range(0..10);
            let (instr, succ) = if last || (roll == 0 && i > 0) {
                let value = match rng.gen_range(0..3) {
                    0 => ReturnValue::Ok,
                    1 => ReturnValue::Var("v".into()),
                    _ => ReturnValue::ConstError("EIO".into()),
                };
                (ret(value), Vec::new())
            } else if roll <= 3 {
                let callee = if rng.gen_bool(0.75) {
                    names.choose(&mut rng).unwrap().clone()
                } else if rng.gen_bool(0.5) {
                    "ext_alloc".to_string()
                } else {
                    "ext_log".to_string()
                };
                (call(&callee, Some("v")), vec![ids[i + 1].clone()])
            } else if roll <= 5 {
                let other = ids[rng.gen_range(0..len)].clone();
                let normal = ids[i + 1].clone();
                if other == normal {
                    let mut instr = Instruction::plain();
                    instr.categories.push(*categories.choose(&mut rng).unwrap());
                    (instr, vec![normal])
                } else {
                    (branch("v", &other, &normal), vec![other, normal])
                }
            } else {
                let mut instr = Instruction::plain();
                instr.categories.push(*categories.choose(&mut rng).unwrap());
                if rng.gen_bool(0.4) {
                    instr.record_type =
                        Some(["dev", "buf", "ctx"].choose(&mut rng).unwrap().to_string());
                }
                (instr, vec![ids[i + 1].clone()])
            };
            b.put(ids[i].clone(), instr, succ);
        }
        p.functions.push(b.finish());
    }
    p
}

/// `classes` groups of `per_class` interchangeable functions. Every member
/// of a class touches the class's record type and calls its helper; driver
/// `d_i` calls member `i` of every class, bracketed by the class's setup and
/// teardown calls, with classes in random order. Returns the program and a
/// gold file relating members of each class.
pub fn planted_synonyms(classes: usize, per_class: usize, seed: u64) -> (Program, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Program::default();
    let mut pool: Vec<usize> = (0..classes * 3).collect();
    pool.shuffle(&mut rng);
    let roles: Vec<[String; 3]> = (0..classes)
        .map(|c| {
            [
                format!("setup{:02}", pool[3 * c]),
                format!("teardown{:02}", pool[3 * c + 1]),
                format!("helper{:02}", pool[3 * c + 2]),
            ]
        })
        .collect();
    for (c, class_roles) in roles.iter().enumerate() {
        p.record_types.insert(format!("rec{c:02}"));
        for role in class_roles {
            let mut tick = Instruction::plain();
            tick.categories.push(Category::Load);
            p.functions.push(straight(role, vec![tick]));
        }
        for i in 0..per_class {
            let mut touch = Instruction::plain();
            touch.record_type = Some(format!("rec{c:02}"));
            touch.categories.push(Category::Store);
            p.functions.push(straight(
                &format!("c{c:02}_m{i:02}"),
                vec![touch, call(&class_roles[2], None)],
            ));
        }
    }
    for i in 0..per_class {
        let mut order: Vec<usize> = (0..classes).collect();
        order.shuffle(&mut rng);
        let body = order
            .iter()
            .flat_map(|&c| {
                [
                    call(&roles[c][0], None),
                    call(&format!("c{c:02}_m{i:02}"), None),
                    call(&roles[c][1], None),
                ]
            })
            .collect();
        p.functions.push(straight(&format!("driver{i:02}"), body));
    }
    let mut gold = String::new();
    for c in 0..classes {
        for i in 1..per_class {
            gold.push_str(&format!("must c{c:02}_m{:02} c{c:02}_m{i:02}\n", i - 1));
        }
        if c + 1 < classes {
            gold.push_str(&format!("mustnot c{c:02}_m00 c{:02}_m00\n", c + 1));
        }
    }
    (p, gold)
}

/// Driver names in the order of the supports passed to [`driver_family`].
pub const DRIVERS: [&str; 14] = [
    "korg1212",
    "intel8x0",
    "cs4281",
    "ad1889",
    "atiixp",
    "als4000",
    "ens1370",
    "fm801",
    "via82xx",
    "es1968",
    "maestro3",
    "trident",
    "ymfpci",
    "sonicvibes",
];

/// Drivers whose probe routine also maps a BAR between enable and request.
pub const IOREMAP_DRIVERS: [&str; 3] = ["ymfpci", "trident", "sonicvibes"];

/// One probe routine per driver. Each enables the device, requests its
/// regions and then performs `supports[i]` checked setup steps whose error
/// paths call the driver's own `snd_<driver>_free`. The returned partition
/// puts the per-driver free routines into one class.
pub fn driver_family(supports: &[usize]) -> (Program, Partition) {
    assert!(supports.len() <= DRIVERS.len());
    let mut p = Program::default();
    p.error_codes.insert("EIO".into(), -5);
    p.error_codes.insert("EBUSY".into(), -16);
    let fallible = |codes: &[&str]| External {
        may_return_errors: codes.iter().map(|c| c.to_string()).collect(),
        entry: None,
    };
    p.externals
        .insert("pci_enable_device".into(), fallible(&["EIO"]));
    p.externals
        .insert("pci_request_regions".into(), fallible(&["EBUSY"]));
    p.externals
        .insert("pci_disable_device".into(), External::default());
    p.externals
        .insert("pci_ioremap_bar".into(), External::default());
    let mut frees = Vec::new();
    for (d, &steps) in DRIVERS.iter().zip(supports) {
        let free = format!("snd_{d}_free");
        p.externals.insert(free.clone(), External::default());
        frees.push(free.clone());
        let mut b = Body::new(format!("snd_{d}_probe"));
        let mut cur = b.fresh();
        let checked = |b: &mut Body, cur: NodeId, callee: &str, handler: Vec<&str>| -> NodeId {
            let test = b.fresh();
            b.put(cur, call(callee, Some("err")), vec![test.clone()]);
            let mut err_ids: Vec<NodeId> = handler.iter().map(|_| b.fresh()).collect();
            let err_ret = b.fresh();
            err_ids.push(err_ret.clone());
            let normal = b.fresh();
            b.put(
                test,
                branch("err", &err_ids[0], &normal),
                vec![err_ids[0].clone(), normal.clone()],
            );
            for (k, h) in handler.iter().enumerate() {
                b.put(
                    err_ids[k].clone(),
                    call(h, None),
                    vec![err_ids[k + 1].clone()],
                );
            }
            b.put(err_ret, ret(ReturnValue::Var("err".into())), Vec::new());
            normal
        };
        cur = checked(&mut b, cur, "pci_enable_device", vec![]);
        if IOREMAP_DRIVERS.contains(d) {
            let next = b.fresh();
            b.put(cur, call("pci_ioremap_bar", None), vec![next.clone()]);
            cur = next;
        }
        cur = checked(
            &mut b,
            cur,
            "pci_request_regions",
            vec!["pci_disable_device"],
        );
        for s in 0..steps {
            let step = format!("snd_{d}_step{s:02}");
            p.externals.insert(step.clone(), fallible(&["EIO"]));
            cur = checked(&mut b, cur, &step, vec![free.as_str()]);
        }
        b.put(cur, ret(ReturnValue::Ok), Vec::new());
        p.functions.push(b.finish());
    }
    (p, Partition::from_classes([frees]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{has_errors, validate};

    #[test]
    fn generated_programs_validate() {
        for seed in 0..5 {
            assert!(!has_errors(&validate(&random_program(50, seed))));
        }
        let (p, gold) = planted_synonyms(4, 3, 1);
        assert!(!has_errors(&validate(&p)));
        assert_eq!(
            gold.lines().filter(|l| l.starts_with("must ")).count(),
            4 * 2
        );
        let (p, part) = driver_family(&[3, 2]);
        assert!(!has_errors(&validate(&p)));
        assert_eq!(part.rep("snd_korg1212_free"), "snd_intel8x0_free");
    }
}
