use thiserror::Error;

use super::overlap::{OverlapChoice, OverlapResolver};
use crate::compiler::Clause;
use crate::formula::{CmpOp, CountBound, Formula, OverlapMode, Term, FALSE, TRUE};
use crate::registry::{ArgValue, Cardinality, ComparisonMode, ForceSign, SurfaceRegistry};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CollisionError {
    #[error("primitive `{0}` uses custom comparison but no comparator is registered")]
    NoComparator(String),
    #[error("primitive `{0}` is not in the registry")]
    UnknownPrimitive(String),
    #[error("`{primitive}` count operator must be a constant comparison, found {found}")]
    CountOperator { primitive: String, found: String },
    #[error("sign pair {0}/{1} cannot collide")]
    SignPair(ForceSign, ForceSign),
}

/// The collision formula κ plus the constant overlaps decided while
/// building it.
#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub formula: Formula,
    pub overlap_choices: Vec<OverlapChoice>,
    /// Argument names compared by κ.
    pub compared_args: Vec<String>,
}

fn term(v: &ArgValue) -> Term {
    match v {
        ArgValue::Const(c) => Term::Const(c.clone()),
        ArgValue::Symbolic(s) => Term::Slot(s.clone()),
    }
}

fn shared_args<'a>(a: &'a Clause, b: &'a Clause) -> Vec<(&'a String, &'a ArgValue, &'a ArgValue)> {
    a.args.iter().filter_map(|(k, va)| b.args.get(k).map(|vb| (k, va, vb))).collect()
}

/// Builds κ for a pair that passed both gates. Absent arguments are
/// wildcards, so clauses sharing no argument collide unconditionally in
/// require/forbid mode.
pub fn build_collision(
    a: &Clause,
    b: &Clause,
    registry: &SurfaceRegistry,
    resolver: &OverlapResolver,
) -> Result<Collision, CollisionError> {
    let spec = registry
        .primitive(&a.primitive)
        .ok_or_else(|| CollisionError::UnknownPrimitive(a.primitive.clone()))?;
    let shared = shared_args(a, b);
    let compared_args = shared.iter().map(|(k, _, _)| k.to_string()).collect();
    let mut overlap_choices = Vec::new();
    let formula = match (a.sign, b.sign) {
        (ForceSign::Require, ForceSign::Require) => {
            if spec.cardinality != Cardinality::SingleValued {
                return Err(CollisionError::SignPair(a.sign, b.sign));
            }
            if spec.comparison_mode == ComparisonMode::Custom {
                custom(a, b, registry)?
            } else {
                // Mutual exclusion: the single value cannot be both.
                Formula::or(shared.iter().map(|(_, va, vb)| Formula::cmp(CmpOp::Ne, term(va), term(vb))))
            }
        }
        (ForceSign::Require, ForceSign::Forbid) | (ForceSign::Forbid, ForceSign::Require) => {
            let (req, forb) = if a.sign == ForceSign::Require { (a, b) } else { (b, a) };
            match spec.comparison_mode {
                ComparisonMode::Equality => {
                    Formula::and(shared.iter().map(|(_, va, vb)| Formula::cmp(CmpOp::Eq, term(va), term(vb))))
                }
                ComparisonMode::SetOverlap | ComparisonMode::PatternOverlap => {
                    let mode = if spec.comparison_mode == ComparisonMode::SetOverlap {
                        OverlapMode::Set
                    } else {
                        OverlapMode::Pattern
                    };
                    let mut parts = Vec::new();
                    for (_, va, vb) in &shared {
                        parts.push(match (va, vb) {
                            (ArgValue::Const(x), ArgValue::Const(y)) => {
                                let c = resolver.resolve(mode, x, y);
                                let f = if c.overlap { TRUE } else { FALSE };
                                overlap_choices.push(c);
                                f
                            }
                            _ => Formula::Overlap { mode, lhs: term(va), rhs: term(vb) },
                        });
                    }
                    Formula::and(parts)
                }
                ComparisonMode::Numeric => {
                    Formula::count_conflict(count_bound(req)?, count_bound(forb)?)
                }
                ComparisonMode::Ordering => {
                    // Requiring first-before-second while forbidding the same
                    // precedence forces the reverse order: a cycle.
                    let pos = |c: &Clause, k: &str| c.args.get(k).map(term);
                    let mut parts = Vec::new();
                    for k in ["first", "second"] {
                        if let (Some(x), Some(y)) = (pos(req, k), pos(forb, k)) {
                            parts.push(Formula::cmp(CmpOp::Eq, x, y));
                        }
                    }
                    Formula::and(parts)
                }
                ComparisonMode::Custom => custom(a, b, registry)?,
            }
        }
        (x, y) => return Err(CollisionError::SignPair(x, y)),
    };
    Ok(Collision { formula, overlap_choices, compared_args })
}

fn custom(a: &Clause, b: &Clause, registry: &SurfaceRegistry) -> Result<Formula, CollisionError> {
    let cmp = registry.comparator(&a.primitive).ok_or_else(|| CollisionError::NoComparator(a.primitive.clone()))?;
    Ok(cmp.collide(a, b))
}

/// Reads `n` and `op` off a count clause. A missing `op` means `==`; a
/// missing `n` leaves the side unconstrained.
fn count_bound(c: &Clause) -> Result<Option<CountBound>, CollisionError> {
    let Some(n) = c.args.get("n") else { return Ok(None) };
    let op = match c.args.get("op") {
        None => CmpOp::Eq,
        Some(ArgValue::Const(Value::Str(s))) => CmpOp::parse(s.trim()).ok_or_else(|| CollisionError::CountOperator {
            primitive: c.primitive.clone(),
            found: s.clone(),
        })?,
        Some(other) => {
            return Err(CollisionError::CountOperator { primitive: c.primitive.clone(), found: format!("{other:?}") })
        }
    };
    Ok(Some(CountBound { op, n: term(n) }))
}
