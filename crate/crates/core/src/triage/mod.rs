//! Pairwise triage: gates, collision construction, satisfiability, and
//! lifting of clause-level collisions to source-rule candidates.

pub mod collision;
pub mod overlap;
pub mod solver;

use serde::{Deserialize, Serialize};

pub use collision::{build_collision, Collision, CollisionError};
pub use overlap::{OverlapAdapter, OverlapChoice, OverlapResolver, Provenance};
pub use solver::{solve, Domains, SolveOutcome, SolverLimits};

use crate::compiler::{Clause, ClauseSet};
use crate::formula::{Atom, Formula, MapEnv, Slot};
use crate::registry::{ArgValue, Cardinality, ForceSign, SurfaceRegistry};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairOutcome {
    SkippedSurface,
    SkippedHardSign,
    Unsat,
    Sat,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomValue {
    pub atom: Atom,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotValue {
    pub slot: Slot,
    pub value: Value,
}

/// A satisfying assignment to φ_a ∧ φ_b ∧ κ.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SymbolicAssignment {
    pub atom_values: Vec<AtomValue>,
    pub slot_values: Vec<SlotValue>,
    pub overlap_choices: Vec<OverlapChoice>,
}

impl SymbolicAssignment {
    pub fn from_env(env: &MapEnv, overlap_choices: Vec<OverlapChoice>) -> Self {
        SymbolicAssignment {
            atom_values: env.atoms.iter().map(|(a, v)| AtomValue { atom: a.clone(), value: *v }).collect(),
            slot_values: env.slots.iter().map(|(s, v)| SlotValue { slot: s.clone(), value: v.clone() }).collect(),
            overlap_choices,
        }
    }

    pub fn to_env(&self) -> MapEnv {
        MapEnv {
            atoms: self.atom_values.iter().map(|a| (a.atom.clone(), a.value)).collect(),
            slots: self.slot_values.iter().map(|s| (s.slot.clone(), s.value.clone())).collect(),
        }
    }

    pub fn true_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.atom_values.iter().filter(|a| a.value).map(|a| &a.atom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub clause_a: String,
    pub clause_b: String,
    pub outcome: PairOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<SymbolicAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision_formula: Option<Formula>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Passes iff the two projected surfaces unify.
pub fn gate_surface(a: &Clause, b: &Clause) -> bool {
    a.surface.unifies(&b.surface)
}

/// Passes only (REQUIRE, FORBID) in either order, or (REQUIRE, REQUIRE) on a
/// single-valued surface.
pub fn gate_hard(a: &Clause, b: &Clause, registry: &SurfaceRegistry) -> bool {
    hard_combination(a.sign, b.sign, registry.primitive(&a.primitive).map(|s| s.cardinality))
}

pub fn hard_combination(a: ForceSign, b: ForceSign, cardinality: Option<Cardinality>) -> bool {
    use ForceSign::*;
    match (a, b) {
        (Require, Forbid) | (Forbid, Require) => true,
        (Require, Require) => cardinality == Some(Cardinality::SingleValued),
        _ => false,
    }
}

pub fn check_pair(
    a: &Clause,
    b: &Clause,
    registry: &SurfaceRegistry,
    resolver: &OverlapResolver,
    limits: &SolverLimits,
) -> PairVerdict {
    let verdict = |outcome| PairVerdict {
        clause_a: a.clause_id.clone(),
        clause_b: b.clause_id.clone(),
        outcome,
        assignment: None,
        collision_formula: None,
        reason: None,
    };
    if !gate_surface(a, b) {
        return verdict(PairOutcome::SkippedSurface);
    }
    if !gate_hard(a, b, registry) {
        return verdict(PairOutcome::SkippedHardSign);
    }
    let collision = match build_collision(a, b, registry, resolver) {
        Ok(c) => c,
        Err(e) => return PairVerdict { reason: Some(e.to_string()), ..verdict(PairOutcome::Undecided) },
    };
    let gamma = Formula::and([a.activation.clone(), b.activation.clone(), collision.formula.clone()]);
    let domains = Domains::from_registry(registry);
    let base = PairVerdict { collision_formula: Some(collision.formula.clone()), ..verdict(PairOutcome::Unsat) };
    match solve(&gamma, &domains, limits) {
        SolveOutcome::Sat(env) => PairVerdict {
            outcome: PairOutcome::Sat,
            assignment: Some(SymbolicAssignment::from_env(&env, collision.overlap_choices)),
            ..base
        },
        SolveOutcome::Unsat => base,
        SolveOutcome::Undecided(reason) => PairVerdict { outcome: PairOutcome::Undecided, reason: Some(reason), ..base },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriageStats {
    pub rules: u64,
    pub clauses: u64,
    pub classified: u64,
    pub skipped_surface: u64,
    pub skipped_hard_sign: u64,
    pub sat: u64,
    pub unsat: u64,
    pub undecided: u64,
    pub candidate_pairs: u64,
}

impl TriageStats {
    fn count(&mut self, outcome: PairOutcome) {
        self.classified += 1;
        match outcome {
            PairOutcome::SkippedSurface => self.skipped_surface += 1,
            PairOutcome::SkippedHardSign => self.skipped_hard_sign += 1,
            PairOutcome::Sat => self.sat += 1,
            PairOutcome::Unsat => self.unsat += 1,
            PairOutcome::Undecided => self.undecided += 1,
        }
    }
}

/// One SAT clause pair behind a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseWitness {
    pub clause_a: String,
    pub clause_b: String,
    pub assignment: SymbolicAssignment,
    pub collision_formula: Formula,
    /// Concrete argument values of both clauses, `name=value`.
    pub colliding_args: Vec<String>,
}

/// A source-rule pair with at least one SAT clause pair; `rule_a` is the
/// earlier rule in policy order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub rule_a: String,
    pub rule_b: String,
    pub witnesses: Vec<ClauseWitness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageResult {
    pub candidates: Vec<CandidatePair>,
    pub stats: TriageStats,
    pub verdicts: Vec<PairVerdict>,
}

fn concrete_args(c: &Clause) -> impl Iterator<Item = String> + '_ {
    c.args.iter().filter_map(|(k, v)| match v {
        ArgValue::Const(Value::Str(s)) => Some(format!("{k}={s}")),
        ArgValue::Const(other) => Some(format!("{k}={other}")),
        ArgValue::Symbolic(_) => None,
    })
}

/// Classifies every cross-rule clause pair in policy order, (i, j) then
/// (k, ℓ), and lifts SAT verdicts to rule pairs.
pub fn triage_policy(
    sets: &[ClauseSet],
    registry: &SurfaceRegistry,
    resolver: &OverlapResolver,
    limits: &SolverLimits,
) -> TriageResult {
    let mut stats = TriageStats {
        rules: sets.len() as u64,
        clauses: sets.iter().map(|s| s.clauses.len() as u64).sum(),
        ..TriageStats::default()
    };
    let mut candidates = Vec::new();
    let mut verdicts = Vec::new();
    for (i, si) in sets.iter().enumerate() {
        for sj in &sets[i + 1..] {
            let mut witnesses = Vec::new();
            for a in &si.clauses {
                for b in &sj.clauses {
                    let v = check_pair(a, b, registry, resolver, limits);
                    stats.count(v.outcome);
                    if let (PairOutcome::Sat, Some(assignment), Some(kappa)) =
                        (v.outcome, &v.assignment, &v.collision_formula)
                    {
                        witnesses.push(ClauseWitness {
                            clause_a: a.clause_id.clone(),
                            clause_b: b.clause_id.clone(),
                            assignment: assignment.clone(),
                            collision_formula: kappa.clone(),
                            colliding_args: concrete_args(a).chain(concrete_args(b)).collect(),
                        });
                    }
                    verdicts.push(v);
                }
            }
            if !witnesses.is_empty() {
                candidates.push(CandidatePair { rule_a: si.rule_id.clone(), rule_b: sj.rule_id.clone(), witnesses });
            }
        }
    }
    stats.candidate_pairs = candidates.len() as u64;
    TriageResult { candidates, stats, verdicts }
}

#[cfg(test)]
mod tests;
