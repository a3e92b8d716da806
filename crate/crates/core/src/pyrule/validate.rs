use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::Pos;
use crate::registry::SurfaceRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticCode {
    PredicateAsConsequent,
    ExtractorAsConsequent,
    UnknownPrimitive,
    PrimitiveInCondition,
    PredicateAsArgument,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::PredicateAsConsequent => "predicate-as-consequent",
            DiagnosticCode::ExtractorAsConsequent => "extractor-as-consequent",
            DiagnosticCode::UnknownPrimitive => "unknown-primitive",
            DiagnosticCode::PrimitiveInCondition => "primitive-in-condition",
            DiagnosticCode::PredicateAsArgument => "predicate-as-argument",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub rule_id: String,
    pub pos: Pos,
    pub name: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} `{}` in rule {}", self.pos, self.code, self.name, self.rule_id)
    }
}

/// Checks the role of every name: predicates only in conditions, known
/// primitives only under a sign. Returns diagnostics in source order.
pub fn validate_vocabulary_use(ast: &RuleAst, vocab: &SurfaceRegistry) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_block(&ast.body, ast, vocab, &mut out);
    out.sort_by_key(|d| d.pos);
    out
}

fn check_block(block: &Block, ast: &RuleAst, vocab: &SurfaceRegistry, out: &mut Vec<Diagnostic>) {
    let diag = |code, pos, name: &str| Diagnostic { code, rule_id: ast.rule_id.clone(), pos, name: name.to_string() };
    for stmt in &block.stmts {
        match stmt {
            Stmt::Pass => {}
            Stmt::If(c) => {
                c.condition.visit_calls(&mut |call| {
                    if vocab.is_primitive(&call.name) {
                        out.push(diag(DiagnosticCode::PrimitiveInCondition, call.pos, &call.name));
                    }
                });
                check_block(&c.then_block, ast, vocab, out);
                if let Some(e) = &c.else_block {
                    check_block(e, ast, vocab, out);
                }
            }
            Stmt::Signed(s) => {
                if vocab.is_predicate(&s.primitive) {
                    out.push(diag(DiagnosticCode::PredicateAsConsequent, s.pos, &s.primitive));
                } else if vocab.is_extractor(&s.primitive) {
                    out.push(diag(DiagnosticCode::ExtractorAsConsequent, s.pos, &s.primitive));
                } else if !vocab.is_primitive(&s.primitive) {
                    out.push(diag(DiagnosticCode::UnknownPrimitive, s.pos, &s.primitive));
                }
                for a in &s.args {
                    a.value.visit_calls(&mut |call| {
                        if vocab.is_predicate(&call.name) {
                            out.push(diag(DiagnosticCode::PredicateAsArgument, call.pos, &call.name));
                        } else if vocab.is_primitive(&call.name) {
                            out.push(diag(DiagnosticCode::PrimitiveInCondition, call.pos, &call.name));
                        }
                    });
                }
            }
        }
    }
}
