use super::*;
use crate::compiler::compile;
use crate::formula::{CmpOp, Term};
use crate::pyrule::parse_file;
use crate::registry::builtin_registry;

fn sets(src: &str) -> Vec<ClauseSet> {
    let reg = builtin_registry();
    parse_file(src, &reg).unwrap().iter().map(|ast| compile(ast, &reg).unwrap()).collect()
}

fn clause(body: &str) -> Clause {
    let src = format!("@rule(\"r\")\ndef r(ctx):\n    {body}\n");
    sets(&src).remove(0).clauses.remove(0)
}

fn pair(a: &str, b: &str) -> PairVerdict {
    let reg = builtin_registry();
    let mut ca = clause(a);
    ca.clause_id = "ra#0".into();
    let mut cb = clause(b);
    cb.clause_id = "rb#0".into();
    check_pair(&ca, &cb, &reg, &OverlapResolver::default(), &SolverLimits::default())
}

#[test]
fn surface_gate_examples() {
    assert!(!gate_surface(&clause("require(edit_file(\"a.cfg\"))"), &clause("forbid(edit_file(\"b.cfg\"))")));
    assert!(gate_surface(&clause("require(reply_format(\"json\"))"), &clause("require(reply_format(\"markdown\"))")));
    assert!(!gate_surface(&clause("require(reply_style(\"x\"))"), &clause("forbid(run_shell(\"ls\"))")));
    // A symbolic path projects to ANY and unifies with every file.
    assert!(gate_surface(
        &clause("forbid(edit_file(path=extract(ctx.msg, Path)))"),
        &clause("require(edit_file(\"b.cfg\"))")
    ));
}

#[test]
fn hard_gate_examples() {
    let reg = builtin_registry();
    let g = |a: &str, b: &str| gate_hard(&clause(a), &clause(b), &reg);
    assert!(!g("forbid(web_search())", "forbid(web_search())"));
    assert!(!g("require(reply_contains(\"a\"))", "require(reply_contains(\"b\"))"));
    assert!(g("require(image_generate())", "forbid(image_generate())"));
    assert!(g("require(reply_style(\"formal\"))", "require(reply_style(\"singing\"))"));
}

#[test]
fn hard_gate_exhaustive_sign_table() {
    for a in ForceSign::ALL {
        for b in ForceSign::ALL {
            for card in [Cardinality::SingleValued, Cardinality::MultiValued, Cardinality::EventLike] {
                let expected = matches!(
                    (a, b),
                    (ForceSign::Require, ForceSign::Forbid) | (ForceSign::Forbid, ForceSign::Require)
                ) || (a == ForceSign::Require && b == ForceSign::Require && card == Cardinality::SingleValued);
                assert_eq!(hard_combination(a, b, Some(card)), expected, "{a} {b} {card:?}");
            }
        }
    }
}

#[test]
fn collision_examples() {
    let reg = builtin_registry();
    let r = OverlapResolver::default();
    let k = |a: &str, b: &str| build_collision(&clause(a), &clause(b), &reg, &r).unwrap().formula;
    // Distinct constants on a single-valued surface: exclusion holds.
    assert!(k("require(reply_style(\"formal\"))", "require(reply_style(\"singing\"))").is_true());
    assert!(k("require(reply_style(\"formal\"))", "require(reply_style(\"formal\"))").is_false());
    // Count x >= 2 escapes x > 0 for no x in 0..=10, so the counts conflict.
    let (required, forbidden) = (|x: i32| x >= 2, |x: i32| x > 0);
    let oracle = !(0..=10).any(|x| required(x) && !forbidden(x));
    assert_eq!(k("require(question_count(2, \">=\"))", "forbid(question_count(0, \">\"))").is_true(), oracle);
    assert!(k("require(question_count(2, \">=\"))", "forbid(question_count(5, \">\"))").is_false());
    assert!(k("require(image_generate())", "forbid(image_generate())").is_true());
    assert!(k("require(trace_order(\"read_file\", \"edit_file\"))", "forbid(trace_order(\"read_file\", \"edit_file\"))").is_true());
    assert!(k("require(trace_order(\"read_file\", \"edit_file\"))", "forbid(trace_order(\"edit_file\", \"read_file\"))").is_false());
    assert!(k("require(run_shell(\"python x.py\"))", "forbid(run_shell(\"python *\"))").is_true());
    assert!(k("require(run_shell(\"python x.py\"))", "forbid(run_shell(\"rm -rf*\"))").is_false());
}

#[test]
fn symbolic_path_collides_by_equality() {
    let reg = builtin_registry();
    let f = build_collision(
        &clause("require(edit_file(path=\"reproduce_issue.py\"))"),
        &clause("forbid(edit_file(path=extract(ctx.msg, Path)))"),
        &reg,
        &OverlapResolver::default(),
    )
    .unwrap()
    .formula;
    assert!(matches!(f, Formula::Cmp { op: CmpOp::Eq, rhs: Term::Slot(_), .. }));
}

#[test]
fn independent_activations_are_sat() {
    let v = pair(
        "if has_intent(ctx.msg, \"nonself_image_request\"):\n        require(image_generate())",
        "if has_intent(ctx.msg, \"self_image_request\"):\n        forbid(image_generate())",
    );
    assert_eq!(v.outcome, PairOutcome::Sat);
    let a = v.assignment.unwrap();
    assert_eq!(a.atom_values.len(), 2);
    assert!(a.atom_values.iter().all(|x| x.value));
}

#[test]
fn contradictory_activations_are_unsat() {
    let v = pair(
        "if semantic(ctx.msg, \"c\"):\n        require(web_search())",
        "if not semantic(ctx.msg, \"c\"):\n        forbid(web_search())",
    );
    assert_eq!(v.outcome, PairOutcome::Unsat);
    assert!(v.assignment.is_none());
    assert!(v.collision_formula.is_some());
}

#[test]
fn disjoint_overlap_constants_are_unsat() {
    let v = pair("require(reply_contains(\"alpha\"))", "forbid(reply_contains(\"beta\"))");
    assert_eq!(v.outcome, PairOutcome::Unsat);
    let v = pair("require(reply_contains(\"alpha beta\"))", "forbid(reply_contains(\"beta\"))");
    assert_eq!(v.outcome, PairOutcome::Sat);
    assert_eq!(v.assignment.unwrap().overlap_choices.len(), 1);
}

#[test]
fn fresh_value_blocks_vacuous_forbid() {
    // Requiring some extracted path while forbidding a fixed one is SAT with a
    // distinct value; requiring the fixed one while the slot must differ is not.
    let v = pair(
        "if extract(ctx.msg, Path) != \"a.py\":\n        require(edit_file(path=extract(ctx.msg, Path)))",
        "forbid(edit_file(path=\"a.py\"))",
    );
    assert_eq!(v.outcome, PairOutcome::Unsat);
    let v = pair(
        "if extract(ctx.msg, Path) != \"a.py\":\n        require(edit_file(path=extract(ctx.msg, Path)))",
        "forbid(edit_file(path=extract(ctx.msg, Path)))",
    );
    assert_eq!(v.outcome, PairOutcome::Sat);
    let slot = &v.assignment.unwrap().slot_values[0].value;
    assert!(crate::formula::is_fresh(slot));
}

#[test]
fn resource_bound_marks_undecided() {
    let reg = builtin_registry();
    let a = clause("if semantic(ctx.msg, \"a\") and semantic(ctx.msg, \"b\"):\n        require(web_search())");
    let b = clause("forbid(web_search())");
    let limits = SolverLimits { max_atoms: 1, ..SolverLimits::default() };
    let v = check_pair(&a, &b, &reg, &OverlapResolver::default(), &limits);
    assert_eq!(v.outcome, PairOutcome::Undecided);
    assert!(v.reason.unwrap().contains("max_atoms"));
}

#[test]
fn sat_assignments_re_evaluate_true() {
    let v = pair(
        "if extract(ctx.msg, Int) > 3 and has_slot(ctx.msg, \"n\"):\n        require(question_count(n=extract(ctx.msg, Int), op=\">=\"))",
        "forbid(question_count(5, \">\"))",
    );
    assert_eq!(v.outcome, PairOutcome::Sat);
    let env = v.assignment.unwrap().to_env();
    let n = env.slots.values().next().unwrap().as_int().unwrap();
    assert!(n > 5, "needs x >= n forcing x > 5, got n = {n}");
}

const IMAGE_POLICY: &str = r#"
@rule("r66")
def r66(ctx):
    if has_intent(ctx.msg, "nonself_image_request"):
        require(image_generate())
        forbid(ask_clarify())
    if has_intent(ctx.msg, "self_image_request"):
        permit(ask_clarify())

@rule("r67")
def r67(ctx):
    if has_intent(ctx.msg, "self_image_request"):
        forbid(image_generate())
        require(ask_clarify(kind="provide_user_photo"))
        require(reply_style("simple"))
"#;

#[test]
fn image_policy_yields_one_candidate() {
    let reg = builtin_registry();
    let s = sets(IMAGE_POLICY);
    let r = triage_policy(&s, &reg, &OverlapResolver::default(), &SolverLimits::default());
    assert_eq!(r.stats.classified, 9);
    assert_eq!(r.candidates.len(), 1);
    let c = &r.candidates[0];
    assert_eq!((c.rule_a.as_str(), c.rule_b.as_str()), ("r66", "r67"));
    let pairs: Vec<_> = c.witnesses.iter().map(|w| (w.clause_a.as_str(), w.clause_b.as_str())).collect();
    assert_eq!(pairs, [("r66#0", "r67#0"), ("r66#1", "r67#1")]);
}

#[test]
fn disjoint_surfaces_yield_no_candidates() {
    let reg = builtin_registry();
    let s = sets("@rule(\"a\")\ndef a(ctx):\n    require(web_search())\n@rule(\"b\")\ndef b(ctx):\n    forbid(image_generate())\n");
    let r = triage_policy(&s, &reg, &OverlapResolver::default(), &SolverLimits::default());
    assert!(r.candidates.is_empty());
    assert_eq!((r.stats.classified, r.stats.skipped_surface), (1, 1));
}
