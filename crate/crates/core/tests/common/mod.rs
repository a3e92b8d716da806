//! Generators shared by the property and acceptance suites.
#![allow(dead_code)]

use proptest::prelude::*;
use wire::formula::{Atom, AtomKind, CmpOp, CountBound, Formula, Slot, Term};
use wire::registry::SortName;
use wire::value::Value;

pub const CONDITIONS: &[&str] = &[
    "has_intent(ctx.msg, \"bug_fix\")",
    "semantic(ctx.msg, \"ambiguous\")",
    "not asks_for(ctx.msg, \"explanation\")",
    "has_slot(ctx.msg, \"path\") and extract(ctx.msg, Int) > 2",
    "contains(ctx.msg, \"hello\") or tool_available(ctx.env, \"web_search\")",
    "extract(ctx.msg, Path) == \"a.py\"",
    "ctx.env.sandboxed",
];

pub const CALLS: &[&str] = &[
    "require(reply_format(\"json\"))",
    "forbid(web_search())",
    "prefer(reply_style(\"formal\"))",
    "avoid(run_shell(\"rm -rf*\"))",
    "permit(ask_clarify())",
    "require(edit_file(path=extract(ctx.msg, Path)))",
    "forbid(question_count(0, \">\"))",
    "require(trace_order(\"read_file\", \"edit_file\"))",
    "require(image_generate())",
    "forbid(edit_file(\"b.cfg\"))",
];

/// Statements that fall outside the accepted fragment. `{i}` is replaced
/// by one extra indentation level.
pub const ILLEGAL: &[&str] = &[
    "for item in ctx.msg:\n{i}pass",
    "while True:\n{i}pass",
    "x = 1",
    "ctx.msg += \"a\"",
    "import os",
    "def helper(c):\n{i}pass",
    "return",
    "break",
    "require(reply_format(ctx.msg[0]))",
    "require(question_count(1 + 2, \">\"))",
    "require(reply_format(\"json\" if ctx.msg else \"plain\"))",
    "require(reply_format(lambda: 1))",
    "eval(\"require(web_search())\")",
    "print(\"hello\")",
    "r(ctx)",
    "require(reply_contains([w for w in ctx.msg]))",
];

#[derive(Debug, Clone)]
pub enum Node {
    Call(usize),
    If { cond: usize, then: Vec<Node>, elifs: Vec<(usize, Vec<Node>)>, els: Option<Vec<Node>> },
}

impl Node {
    pub fn leaves(nodes: &[Node]) -> usize {
        nodes
            .iter()
            .map(|n| match n {
                Node::Call(_) => 1,
                Node::If { then, elifs, els, .. } => {
                    Node::leaves(then) + elifs.iter().map(|(_, b)| Node::leaves(b)).sum::<usize>() + els.as_deref().map_or(0, Node::leaves)
                }
            })
            .sum()
    }

    pub fn render(nodes: &[Node], depth: usize, out: &mut Vec<String>) {
        let pad = "    ".repeat(depth);
        for n in nodes {
            match n {
                Node::Call(i) => out.push(format!("{pad}{}", CALLS[*i])),
                Node::If { cond, then, elifs, els } => {
                    out.push(format!("{pad}if {}:", CONDITIONS[*cond]));
                    Node::render(then, depth + 1, out);
                    for (c, b) in elifs {
                        out.push(format!("{pad}elif {}:", CONDITIONS[*c]));
                        Node::render(b, depth + 1, out);
                    }
                    if let Some(b) = els {
                        out.push(format!("{pad}else:"));
                        Node::render(b, depth + 1, out);
                    }
                }
            }
        }
    }
}

fn block(depth: u32) -> BoxedStrategy<Vec<Node>> {
    let call = (0..CALLS.len()).prop_map(Node::Call);
    if depth == 0 {
        return prop::collection::vec(call, 1..3).boxed();
    }
    let inner = block(depth - 1);
    let iff = (
        0..CONDITIONS.len(),
        inner.clone(),
        prop::collection::vec((0..CONDITIONS.len(), inner.clone()), 0..2),
        prop::option::of(inner),
    )
        .prop_map(|(cond, then, elifs, els)| Node::If { cond, then, elifs, els });
    prop::collection::vec(prop_oneof![2 => call, 1 => iff], 1..4).boxed()
}

/// A valid single-rule program and its signed-call leaf count.
pub fn program() -> impl Strategy<Value = (String, usize)> {
    block(2).prop_map(|body| {
        let mut lines = vec!["@rule(\"r1\")".to_string(), "def r(ctx):".to_string()];
        Node::render(&body, 1, &mut lines);
        (lines.join("\n") + "\n", Node::leaves(&body))
    })
}

/// A valid program with one illegal statement inserted before a body line
/// that is not an `elif` or `else` header.
pub fn illegal_program() -> impl Strategy<Value = (String, &'static str)> {
    (program(), any::<prop::sample::Index>(), 0..ILLEGAL.len()).prop_map(|((src, _), at, k)| {
        let mut lines: Vec<String> = src.lines().map(String::from).collect();
        let spots: Vec<usize> = (2..lines.len())
            .filter(|&i| {
                let t = lines[i].trim_start();
                !t.starts_with("elif") && !t.starts_with("else")
            })
            .collect();
        let i = spots[at.index(spots.len())];
        let indent = lines[i].len() - lines[i].trim_start().len();
        let pad = " ".repeat(indent);
        let stmt = ILLEGAL[k].replace("{i}", &" ".repeat(indent + 4));
        lines.insert(i, format!("{pad}{stmt}"));
        (lines.join("\n") + "\n", ILLEGAL[k])
    })
}

pub fn atom(i: usize) -> Formula {
    Formula::atom(Atom { kind: AtomKind::Semantic, predicate: "semantic".into(), args: vec![format!("\"a{i}\"")] })
}

pub fn slot(sort: SortName, name: &str) -> Term {
    Term::Slot(Slot { sort, source: name.into() })
}

fn int_lit() -> impl Strategy<Value = Formula> {
    let ops = prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]);
    (ops, 0i64..6).prop_map(|(op, c)| Formula::cmp(op, slot(SortName::Int, "x"), Term::Const(Value::Int(c))))
}

fn path_lit() -> impl Strategy<Value = Formula> {
    let ops = prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne]);
    (ops, prop::sample::select(vec!["a.py", "b.py"]))
        .prop_map(|(op, c)| Formula::cmp(op, slot(SortName::Path, "p"), Term::Const(Value::Str(c.into()))))
}

fn format_lit() -> impl Strategy<Value = Formula> {
    let ops = prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne]);
    (ops, prop::sample::select(vec!["json", "markdown", "plain"]))
        .prop_map(|(op, c)| Formula::cmp(op, slot(SortName::Format, "f"), Term::Const(Value::Str(c.into()))))
}

fn count_lit() -> impl Strategy<Value = Formula> {
    let ops = prop::sample::select(vec![CmpOp::Eq, CmpOp::Gt, CmpOp::Ge, CmpOp::Lt, CmpOp::Le]);
    (ops.clone(), ops, 0i64..4, prop::bool::ANY).prop_map(|(ro, fo, c, symbolic)| {
        let n = if symbolic { slot(SortName::Int, "x") } else { Term::Const(Value::Int(c + 1)) };
        Formula::count_conflict(
            Some(CountBound { op: ro, n }),
            Some(CountBound { op: fo, n: Term::Const(Value::Int(c)) }),
        )
    })
}

fn leaf() -> impl Strategy<Value = Formula> {
    prop_oneof![
        3 => (0usize..6).prop_map(atom),
        2 => int_lit(),
        1 => path_lit(),
        1 => format_lit(),
        1 => count_lit(),
    ]
}

fn tree() -> impl Strategy<Value = Formula> {
    leaf().prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Formula::and),
            prop::collection::vec(inner, 2..4).prop_map(Formula::or),
        ]
    })
}

/// `φ_a ∧ φ_b ∧ κ` over at most 12 distinct atoms and theory literals.
pub fn collision_query() -> impl Strategy<Value = Formula> {
    (tree(), tree(), tree())
        .prop_map(|(a, b, k)| Formula::and([a, b, k]))
        .prop_filter("at most 12 atoms", |g| g.atoms().len() + g.theory_literals().len() <= 12)
}

pub const IMAGE_POLICY: &str = include_str!("../../fixtures/image-policy/rules.pyrule");

/// Compiles a PyRule file and triages it with default limits.
pub fn triage_source(
    src: &str,
) -> (wire::triage::TriageResult, std::collections::BTreeMap<String, wire::compiler::Clause>) {
    use wire::triage::{triage_policy, OverlapResolver, SolverLimits};
    let reg = wire::registry::builtin_registry();
    let sets: Vec<_> = wire::pyrule::parse_file(src, &reg)
        .unwrap()
        .iter()
        .map(|a| wire::compiler::compile(a, &reg).unwrap())
        .collect();
    let result = triage_policy(&sets, &reg, &OverlapResolver::default(), &SolverLimits::default());
    let clauses = sets.iter().flat_map(|s| s.clauses.iter().map(|c| (c.clause_id.clone(), c.clone()))).collect();
    (result, clauses)
}

/// Verifier replaying a fixed verdict script, cycling when exhausted.
pub struct ScriptedVerifier {
    pub script: Vec<[bool; 3]>,
    pub next: std::cell::Cell<usize>,
}

impl wire::witness::VerifierAdapter for ScriptedVerifier {
    fn verify(
        &self,
        _: &str,
        _: &wire::witness::RuleContext,
        _: &wire::witness::RuleContext,
    ) -> Result<wire::witness::VerifierVerdict, wire::adapters::AdapterError> {
        let i = self.next.get();
        self.next.set(i + 1);
        let [concrete, governs_a, governs_b] = self.script[i % self.script.len()];
        Ok(wire::witness::VerifierVerdict {
            concrete,
            governs_a,
            governs_b,
            score_a: f64::from(u8::from(governs_a)),
            score_b: f64::from(u8::from(governs_b)),
            rationale_a: String::new(),
            rationale_b: String::new(),
        })
    }
}

/// Checks cascade discipline over one pair's attempt log.
pub fn check_witness_log(log: &[wire::witness::WitnessRecord], max_witnesses: usize) -> Result<(), String> {
    use wire::witness::Tier;
    if !log.windows(2).all(|w| w[0].tier <= w[1].tier) {
        return Err("tiers not monotone".into());
    }
    for r in log {
        if r.accepted != (r.concrete && r.governs_a && r.governs_b) {
            return Err(format!("{}: acceptance differs from conjunction", r.witness_id));
        }
        let ok = match r.tier {
            Tier::Seed => r.seed_text.as_ref() == Some(&r.final_text) && r.suffix_text.is_none(),
            Tier::Elaborated => match (&r.seed_text, &r.suffix_text) {
                (Some(seed), Some(suffix)) => {
                    r.final_text.starts_with(seed.as_str()) && r.final_text.ends_with(suffix.as_str())
                }
                _ => false,
            },
            Tier::Synthesized => r.seed_text.is_none(),
        };
        if !ok {
            return Err(format!("{}: tier {:?} text discipline violated", r.witness_id, r.tier));
        }
    }
    let accepted = log.iter().filter(|r| r.accepted).count();
    if accepted > max_witnesses {
        return Err(format!("{accepted} accepted exceeds cap {max_witnesses}"));
    }
    if accepted == max_witnesses && !log.last().is_some_and(|r| r.accepted) {
        return Err("attempts continued after the cap".into());
    }
    Ok(())
}
