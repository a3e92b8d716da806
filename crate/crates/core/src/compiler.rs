//! Compiles checked rule ASTs into typed atomic clauses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{Atom, AtomKind, CmpOp, Formula, Slot, Term};
use crate::pyrule::{Arg, Block, CompareOp, Expr, Pos, RuleAst, Stmt};
use crate::registry::{
    project_surface, ArgMap, ArgValue, ForceSign, PredicateKind, RegistryError, SortName, SurfaceDescriptor,
    SurfaceRegistry,
};
use crate::value::{normalize_label, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub clause_id: String,
    pub rule_id: String,
    pub activation: Formula,
    pub sign: ForceSign,
    pub primitive: String,
    pub args: ArgMap,
    pub surface: SurfaceDescriptor,
    /// Label of the enclosing conditional block, `rN#g`, numbered over blocks
    /// that directly hold signed calls.
    pub block_label: String,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseSet {
    pub rule_id: String,
    pub clauses: Vec<Clause>,
}

/// One line of `clauses.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseRecord {
    #[serde(flatten)]
    pub clause: Clause,
    pub surface_key: String,
}

impl From<&Clause> for ClauseRecord {
    fn from(c: &Clause) -> Self {
        ClauseRecord { clause: c.clone(), surface_key: c.surface.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{rule_id} at {pos}: {source}")]
    Schema {
        rule_id: String,
        pos: Pos,
        #[source]
        source: RegistryError,
    },
    #[error("{rule_id} at {pos}: {message}")]
    Lowering { rule_id: String, pos: Pos, message: String },
}

/// Canonical spelling of the context root, so atom identity does not depend
/// on the parameter name a rule author picked.
const CTX_ROOT: &str = "ctx";

pub fn compile(ast: &RuleAst, registry: &SurfaceRegistry) -> Result<ClauseSet, CompileError> {
    let mut cx = Compiler { ast, registry, clauses: Vec::new(), next_block: 0 };
    cx.block(&ast.body, &[])?;
    Ok(ClauseSet { rule_id: ast.rule_id.clone(), clauses: cx.clauses })
}

/// Σ_{i<j} |C_i||C_j|: cross-rule clause pairs, excluding same-rule pairs.
pub fn clause_budget(sets: &[ClauseSet]) -> u64 {
    let sizes: Vec<u64> = sets.iter().map(|s| s.clauses.len() as u64).collect();
    budget_from_sizes(&sizes)
}

pub fn budget_from_sizes(sizes: &[u64]) -> u64 {
    let total: u64 = sizes.iter().sum();
    let squares: u64 = sizes.iter().map(|n| n * n).sum();
    (total * total - squares) / 2
}

struct Compiler<'a> {
    ast: &'a RuleAst,
    registry: &'a SurfaceRegistry,
    clauses: Vec<Clause>,
    next_block: usize,
}

impl Compiler<'_> {
    fn lowering<T>(&self, pos: Pos, message: impl Into<String>) -> Result<T, CompileError> {
        Err(CompileError::Lowering { rule_id: self.ast.rule_id.clone(), pos, message: message.into() })
    }

    fn block(&mut self, block: &Block, path: &[Formula]) -> Result<(), CompileError> {
        let holds_calls = block.stmts.iter().any(|s| matches!(s, Stmt::Signed(_)));
        let label = if holds_calls {
            self.next_block += 1;
            format!("{}#{}", self.ast.rule_id, self.next_block - 1)
        } else {
            String::new()
        };
        for stmt in &block.stmts {
            match stmt {
                Stmt::Pass => {}
                Stmt::Signed(call) => {
                    let args = self.primitive_args(&call.primitive, &call.args, call.pos)?;
                    let surface = project_surface(&call.primitive, &args, self.registry).map_err(|source| {
                        CompileError::Schema { rule_id: self.ast.rule_id.clone(), pos: call.pos, source }
                    })?;
                    let k = self.clauses.len();
                    self.clauses.push(Clause {
                        clause_id: format!("{}#{k}", self.ast.rule_id),
                        rule_id: self.ast.rule_id.clone(),
                        activation: Formula::and(path.iter().cloned()),
                        sign: call.sign,
                        primitive: call.primitive.clone(),
                        args,
                        surface,
                        block_label: label.clone(),
                        pos: call.pos,
                    });
                }
                Stmt::If(c) => {
                    let cond = self.condition(&c.condition, c.pos)?;
                    let mut then_path = path.to_vec();
                    then_path.push(cond.clone());
                    self.block(&c.then_block, &then_path)?;
                    if let Some(e) = &c.else_block {
                        let mut else_path = path.to_vec();
                        else_path.push(Formula::not(cond));
                        self.block(e, &else_path)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical, name-keyed argument map with enum spellings normalized.
    fn primitive_args(&self, primitive: &str, args: &[Arg], pos: Pos) -> Result<ArgMap, CompileError> {
        let schema_err = |source| CompileError::Schema { rule_id: self.ast.rule_id.clone(), pos, source };
        let spec = self
            .registry
            .primitive(primitive)
            .ok_or_else(|| schema_err(RegistryError::UnknownPrimitive(primitive.to_string())))?;
        let mut out = ArgMap::new();
        for (i, a) in args.iter().enumerate() {
            let name = match &a.keyword {
                Some(k) => k.clone(),
                None => match spec.args.get(i) {
                    Some(s) => s.name.clone(),
                    None => {
                        return Err(schema_err(RegistryError::Arity {
                            primitive: primitive.to_string(),
                            message: format!("takes at most {} positional arguments", spec.args.len()),
                        }))
                    }
                },
            };
            let sort = spec.arg(&name).map(|s| s.sort).unwrap_or(SortName::String);
            let value = match &a.value {
                Expr::Call(c) if self.registry.is_extractor(&c.name) => ArgValue::Symbolic(self.extractor_slot(c)?),
                Expr::Context(path) => ArgValue::Symbolic(Slot { sort, source: context_source(path) }),
                e => match literal(e) {
                    Some(v) => ArgValue::Const(self.canonical_enum(sort, v)),
                    None => return self.lowering(pos, format!("argument `{name}` is not a constant or extractor")),
                },
            };
            if out.insert(name.clone(), value).is_some() {
                return Err(schema_err(RegistryError::Arity {
                    primitive: primitive.to_string(),
                    message: format!("argument `{name}` given twice"),
                }));
            }
        }
        Ok(out)
    }

    fn canonical_enum(&self, sort: SortName, v: Value) -> Value {
        match v {
            Value::Str(s) => {
                let allowed = self.registry.sort(sort).enum_values.as_ref();
                let hit = allowed.and_then(|vals| vals.iter().find(|a| a.eq_ignore_ascii_case(&s)));
                Value::Str(hit.cloned().unwrap_or(s))
            }
            Value::List(items) => Value::List(items.into_iter().map(|i| self.canonical_enum(sort, i)).collect()),
            other => other,
        }
    }

    fn condition(&self, e: &Expr, pos: Pos) -> Result<Formula, CompileError> {
        Ok(match e {
            Expr::Bool(b) => Formula::Const { value: *b },
            Expr::Not(inner) => Formula::not(self.condition(inner, pos)?),
            Expr::And(parts) => Formula::and(parts.iter().map(|p| self.condition(p, pos)).collect::<Result<Vec<_>, _>>()?),
            Expr::Or(parts) => Formula::or(parts.iter().map(|p| self.condition(p, pos)).collect::<Result<Vec<_>, _>>()?),
            Expr::Call(c) if self.registry.is_predicate(&c.name) => Formula::atom(self.predicate_atom(c)),
            Expr::Call(c) if self.registry.is_extractor(&c.name) => {
                let slot = self.extractor_slot(c)?;
                Formula::cmp(CmpOp::Eq, Term::Slot(Slot { sort: SortName::Bool, ..slot }), Term::Const(Value::Bool(true)))
            }
            Expr::Context(path) => Formula::cmp(
                CmpOp::Eq,
                Term::Slot(Slot { sort: SortName::Bool, source: context_source(path) }),
                Term::Const(Value::Bool(true)),
            ),
            Expr::Compare { op, lhs, rhs } => self.comparison(*op, lhs, rhs, pos)?,
            Expr::Call(c) => return self.lowering(c.pos, format!("`{}` cannot appear in a condition", c.name)),
            other => return self.lowering(pos, format!("{other:?} is not a condition")),
        })
    }

    fn comparison(&self, op: CompareOp, lhs: &Expr, rhs: &Expr, pos: Pos) -> Result<Formula, CompileError> {
        // A predicate compared with a Boolean literal is the predicate itself.
        if let CompareOp::Cmp(cmp @ (CmpOp::Eq | CmpOp::Ne)) = op {
            for (p, other) in [(lhs, rhs), (rhs, lhs)] {
                if let (Expr::Call(c), Expr::Bool(b)) = (p, other) {
                    if self.registry.is_predicate(&c.name) {
                        let f = Formula::atom(self.predicate_atom(c));
                        return Ok(if *b == (cmp == CmpOp::Eq) { f } else { Formula::not(f) });
                    }
                }
            }
        }
        match op {
            CompareOp::Cmp(cmp) => {
                let hint = literal(rhs).or_else(|| literal(lhs));
                let l = self.term(lhs, hint.as_ref(), pos)?;
                let r = self.term(rhs, hint.as_ref(), pos)?;
                Ok(Formula::cmp(cmp, l, r))
            }
            CompareOp::In | CompareOp::NotIn => {
                let f = match (lhs, rhs) {
                    // `"x" in ctx.msg` is text containment.
                    (Expr::Str(s), Expr::Context(path)) => Formula::atom(Atom {
                        kind: AtomKind::Text,
                        predicate: "contains".into(),
                        args: vec![context_source(path), json_str(s)],
                    }),
                    (_, Expr::List(items)) => {
                        let hint = items.iter().find_map(literal);
                        let l = self.term(lhs, hint.as_ref(), pos)?;
                        let mut parts = Vec::new();
                        for item in items {
                            parts.push(Formula::cmp(CmpOp::Eq, l.clone(), self.term(item, hint.as_ref(), pos)?));
                        }
                        Formula::or(parts)
                    }
                    _ => return self.lowering(pos, "membership needs a literal container or a context path"),
                };
                Ok(if op == CompareOp::NotIn { Formula::not(f) } else { f })
            }
        }
    }

    /// Lowers a comparison operand. `hint` supplies the sort of a bare
    /// context path from the literal on the other side.
    fn term(&self, e: &Expr, hint: Option<&Value>, pos: Pos) -> Result<Term, CompileError> {
        match e {
            Expr::Call(c) if self.registry.is_extractor(&c.name) => Ok(Term::Slot(self.extractor_slot(c)?)),
            Expr::Context(path) => {
                let sort = match hint {
                    Some(Value::Int(_)) => SortName::Int,
                    Some(Value::Bool(_)) => SortName::Bool,
                    _ => SortName::String,
                };
                Ok(Term::Slot(Slot { sort, source: context_source(path) }))
            }
            other => match literal(other) {
                Some(v) => Ok(Term::Const(v)),
                None => self.lowering(pos, format!("{other:?} cannot be compared")),
            },
        }
    }

    /// `extract(e, T, ...)` lowers to the slot of sort `T` keyed by its source.
    fn extractor_slot(&self, c: &crate::pyrule::CallExpr) -> Result<Slot, CompileError> {
        let mut sort = None;
        let mut source_args = Vec::new();
        for a in &c.args {
            match (&a.value, sort) {
                (Expr::SortRef(s), None) => sort = Some(*s),
                (v, _) => source_args.push(self.render_arg(a.keyword.as_deref(), v, false)),
            }
        }
        let Some(sort) = sort else {
            return self.lowering(c.pos, format!("`{}` needs a sort argument such as Path", c.name));
        };
        Ok(Slot { sort, source: format!("{}({})", c.name, source_args.join(", ")) })
    }

    /// Hash-consed atom: identical predicate text yields an identical atom.
    fn predicate_atom(&self, c: &crate::pyrule::CallExpr) -> Atom {
        let kind = match self.registry.predicate(&c.name) {
            Some(PredicateKind::Semantic) => AtomKind::Semantic,
            Some(PredicateKind::Environment) => AtomKind::Environment,
            _ => AtomKind::Text,
        };
        let semantic = kind == AtomKind::Semantic;
        let mut positional = Vec::new();
        let mut keyword = Vec::new();
        for a in &c.args {
            let r = self.render_arg(a.keyword.as_deref(), &a.value, semantic);
            if a.keyword.is_some() {
                keyword.push(r);
            } else {
                positional.push(r);
            }
        }
        keyword.sort();
        positional.extend(keyword);
        Atom { kind, predicate: c.name.clone(), args: positional }
    }

    fn render_arg(&self, keyword: Option<&str>, e: &Expr, normalize: bool) -> String {
        let body = self.render(e, normalize);
        match keyword {
            Some(k) => format!("{k}={body}"),
            None => body,
        }
    }

    fn render(&self, e: &Expr, normalize: bool) -> String {
        match e {
            Expr::Str(s) if normalize => json_str(&normalize_label(s)),
            Expr::Str(s) => json_str(s),
            Expr::Int(n) => n.to_string(),
            Expr::Bool(b) => Value::Bool(*b).to_string(),
            Expr::SortRef(s) => s.to_string(),
            Expr::Context(path) => context_source(path),
            Expr::List(items) => {
                format!("[{}]", items.iter().map(|i| self.render(i, normalize)).collect::<Vec<_>>().join(", "))
            }
            Expr::Call(c) => {
                let args: Vec<String> =
                    c.args.iter().map(|a| self.render_arg(a.keyword.as_deref(), &a.value, normalize)).collect();
                format!("{}({})", c.name, args.join(", "))
            }
            other => format!("{other:?}"),
        }
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn context_source(path: &[String]) -> String {
    std::iter::once(CTX_ROOT).chain(path.iter().map(String::as_str)).collect::<Vec<_>>().join(".")
}

fn literal(e: &Expr) -> Option<Value> {
    match e {
        Expr::Bool(b) => Some(Value::Bool(*b)),
        Expr::Int(n) => Some(Value::Int(*n)),
        Expr::Str(s) => Some(Value::Str(s.clone())),
        Expr::List(items) => items.iter().map(literal).collect::<Option<Vec<_>>>().map(Value::List),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyrule::parse_rule;
    use crate::registry::{builtin_registry, KeyPart};

    fn compile_src(src: &str) -> Result<ClauseSet, CompileError> {
        let reg = builtin_registry();
        compile(&parse_rule(src, &reg).unwrap(), &reg)
    }

    #[test]
    fn unconditional_clause_has_true_activation() {
        let set = compile_src("@rule(\"r1\")\ndef r1(ctx):\n    forbid(reply_style(\"singing\"))\n").unwrap();
        assert_eq!(set.clauses.len(), 1);
        let c = &set.clauses[0];
        assert_eq!(c.clause_id, "r1#0");
        assert!(c.activation.is_true());
        assert_eq!(c.sign, ForceSign::Forbid);
        assert_eq!(c.args["style"], ArgValue::Const(Value::Str("singing".into())));
    }

    #[test]
    fn branches_get_dual_activations() {
        let set = compile_src(
            "@rule(\"r2\")\ndef r2(ctx):\n    if semantic(ctx.msg, \"c\"):\n        require(web_search())\n    else:\n        forbid(web_search())\n",
        )
        .unwrap();
        let [a, b] = &set.clauses[..] else { panic!() };
        assert_eq!(b.activation, Formula::not(a.activation.clone()));
        assert_eq!((a.block_label.as_str(), b.block_label.as_str()), ("r2#0", "r2#1"));
    }

    #[test]
    fn shared_condition_shares_activation() {
        let src = r#"@rule("r67")
def r67(ctx):
    if has_intent(ctx.msg, "self_image_request"):
        forbid(image_generate())
        require(ask_clarify(kind="provide_user_photo"))
        require(reply_style("simple"))
"#;
        let set = compile_src(src).unwrap();
        assert_eq!(set.clauses.len(), 3);
        assert!(set.clauses.iter().all(|c| c.activation == set.clauses[0].activation));
        assert!(set.clauses.iter().all(|c| c.block_label == "r67#0"));
        let ids: Vec<_> = set.clauses.iter().map(|c| c.clause_id.as_str()).collect();
        assert_eq!(ids, ["r67#0", "r67#1", "r67#2"]);
    }

    #[test]
    fn atoms_are_hash_consed_across_spellings() {
        let a = compile_src("@rule(\"a\")\ndef a(ctx):\n    if semantic(ctx.msg, \"Image  Request \"):\n        require(web_search())\n").unwrap();
        let b = compile_src("@rule(\"b\")\ndef b(c):\n    if semantic(c.msg, \"image request\"):\n        forbid(web_search())\n").unwrap();
        assert_eq!(a.clauses[0].activation, b.clauses[0].activation);
        assert_eq!(a.clauses[0].activation.atoms().iter().next().unwrap().label().unwrap(), "image request");
    }

    #[test]
    fn extractor_lowers_to_typed_slot_and_any_key() {
        let set = compile_src(
            "@rule(\"r6\")\ndef r6(ctx):\n    forbid(edit_file(path=extract(ctx.msg, Path)))\n",
        )
        .unwrap();
        let c = &set.clauses[0];
        let ArgValue::Symbolic(slot) = &c.args["path"] else { panic!() };
        assert_eq!(slot.sort, SortName::Path);
        assert_eq!(c.surface.key, vec![KeyPart::Any]);
    }

    #[test]
    fn sort_mismatch_is_an_error() {
        let err = compile_src("@rule(\"r1\")\ndef r1(ctx):\n    require(reply_format(\"interpretive dance\"))\n").unwrap_err();
        assert!(matches!(err, CompileError::Schema { source: RegistryError::SortMismatch { .. }, .. }));
        let err = compile_src("@rule(\"r1\")\ndef r1(ctx):\n    require(question_count(\"many\"))\n").unwrap_err();
        assert!(matches!(err, CompileError::Schema { .. }));
    }

    #[test]
    fn enum_spelling_is_canonical() {
        let set = compile_src("@rule(\"r1\")\ndef r1(ctx):\n    require(reply_format(\"Markdown\"))\n").unwrap();
        assert_eq!(set.clauses[0].args["format"], ArgValue::Const(Value::Str("markdown".into())));
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget_from_sizes(&[5, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]), 140);
        assert_eq!(budget_from_sizes(&[7]), 0);
        assert_eq!(budget_from_sizes(&[1, 1]), 1);
    }

    #[test]
    fn clause_record_round_trips() {
        let set = compile_src("@rule(\"r1\")\ndef r1(ctx):\n    if extract(ctx.msg, Int) > 2 and ctx.env.ci:\n        require(question_count(n=0, op=\"==\"))\n").unwrap();
        let rec = ClauseRecord::from(&set.clauses[0]);
        let line = serde_json::to_string(&rec).unwrap();
        let back: ClauseRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
        assert_eq!(rec.surface_key, "question_count[]");
    }
}
