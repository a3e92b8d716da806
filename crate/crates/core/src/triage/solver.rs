//! DPLL(T) over the Boolean abstraction of a collision query.
//!
//! Atoms and theory literals become propositional variables; a Tseitin
//! encoding yields CNF. Each propositional model is checked against the
//! slot theory by bounded backtracking over per-sort domains, and a failed
//! check adds a blocking clause over the theory literals.

use std::collections::{BTreeMap, BTreeSet};

use crate::formula::{Atom, Formula, MapEnv, Slot, FRESH_PREFIX};
use crate::registry::{SortName, SurfaceRegistry};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverLimits {
    /// Propositional variables (atoms plus theory literals) allowed per query.
    pub max_atoms: usize,
    /// Slot-value trials allowed across all theory checks of one query.
    pub max_theory_steps: u64,
    /// Propositional models examined before giving up.
    pub max_models: u64,
}

impl Default for SolverLimits {
    fn default() -> Self {
        SolverLimits { max_atoms: 64, max_theory_steps: 2_000_000, max_models: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Sat(MapEnv),
    Unsat,
    Undecided(String),
}

/// Finite value domains per slot sort.
#[derive(Debug, Clone, Default)]
pub struct Domains {
    closed: BTreeMap<SortName, Vec<Value>>,
}

pub const INT_RANGE: std::ops::RangeInclusive<i64> = 0..=32;

impl Domains {
    pub fn from_registry(registry: &SurfaceRegistry) -> Domains {
        let closed = SortName::ALL
            .into_iter()
            .filter(|s| *s != SortName::Bool)
            .filter_map(|s| {
                let vals = registry.sort(s).enum_values.as_ref()?;
                Some((s, vals.iter().map(|v| Value::Str(v.clone())).collect()))
            })
            .collect();
        Domains { closed }
    }

    /// Candidate values for `slot` given the constants of the query.
    pub fn domain(&self, slot: &Slot, constants: &BTreeSet<Value>) -> Vec<Value> {
        match slot.sort {
            SortName::Int => {
                let mut vals: BTreeSet<i64> = INT_RANGE.collect();
                for c in constants.iter().filter_map(Value::as_int) {
                    vals.extend([c.saturating_sub(1), c, c.saturating_add(1)]);
                }
                vals.into_iter().map(Value::Int).collect()
            }
            SortName::Bool => vec![Value::Bool(false), Value::Bool(true)],
            s => match self.closed.get(&s) {
                Some(vals) => vals.clone(),
                None => {
                    let mut vals: Vec<Value> = constants.iter().filter(|v| matches!(v, Value::Str(_))).cloned().collect();
                    vals.push(fresh_value());
                    vals
                }
            },
        }
    }
}

/// The one value guaranteed distinct from every constant in a query.
pub fn fresh_value() -> Value {
    Value::Str(format!("{FRESH_PREFIX}\u{27e9}"))
}

type Lit = i32;

struct Encoder {
    nvars: usize,
    atoms: BTreeMap<Atom, Lit>,
    theory: BTreeMap<Formula, Lit>,
    clauses: Vec<Vec<Lit>>,
}

impl Encoder {
    fn fresh(&mut self) -> Lit {
        self.nvars += 1;
        self.nvars as Lit
    }

    fn encode(&mut self, f: &Formula) -> Lit {
        match f {
            Formula::Const { value } => {
                let v = self.fresh();
                self.clauses.push(vec![if *value { v } else { -v }]);
                v
            }
            Formula::Atom { atom } => {
                if let Some(&l) = self.atoms.get(atom) {
                    return l;
                }
                let l = self.fresh();
                self.atoms.insert(atom.clone(), l);
                l
            }
            Formula::Not { arg } => -self.encode(arg),
            Formula::And { args } | Formula::Or { args } => {
                let is_and = matches!(f, Formula::And { .. });
                let lits: Vec<Lit> = args.iter().map(|a| self.encode(a)).collect();
                let v = self.fresh();
                // and: v -> l_i, (l_1 & ... ) -> v.  or: dual.
                let s = if is_and { 1 } else { -1 };
                for &l in &lits {
                    self.clauses.push(vec![-s * v, s * l]);
                }
                let mut big: Vec<Lit> = lits.iter().map(|l| -s * l).collect();
                big.push(s * v);
                self.clauses.push(big);
                v
            }
            lit => {
                if let Some(&l) = self.theory.get(lit) {
                    return l;
                }
                let l = self.fresh();
                self.theory.insert(lit.clone(), l);
                l
            }
        }
    }
}

/// Decides satisfiability of `gamma` over the bounded domains.
pub fn solve(gamma: &Formula, domains: &Domains, limits: &SolverLimits) -> SolveOutcome {
    let nnf = gamma.to_nnf();
    let mut enc = Encoder { nvars: 0, atoms: BTreeMap::new(), theory: BTreeMap::new(), clauses: Vec::new() };
    let root = enc.encode(&nnf);
    enc.clauses.push(vec![root]);
    let width = enc.atoms.len() + enc.theory.len();
    if width > limits.max_atoms {
        return SolveOutcome::Undecided(format!("{width} variables exceed max_atoms {}", limits.max_atoms));
    }
    let constants = nnf.constants();
    let mut theory_steps = 0u64;
    let mut clauses = enc.clauses.clone();
    for _ in 0..limits.max_models {
        let Some(model) = dpll(enc.nvars, &clauses) else {
            return SolveOutcome::Unsat;
        };
        let literals: Vec<(&Formula, bool, Lit)> =
            enc.theory.iter().map(|(f, &l)| (f, model[l as usize - 1], l)).collect();
        match theory_check(&literals, domains, &constants, &mut theory_steps, limits.max_theory_steps) {
            TheoryResult::Consistent(slots) => {
                let atoms = enc.atoms.iter().map(|(a, &l)| (a.clone(), model[l as usize - 1])).collect();
                let env = MapEnv { atoms, slots };
                return match gamma.eval(&env) {
                    Some(true) => SolveOutcome::Sat(env),
                    _ => SolveOutcome::Undecided("assignment failed re-evaluation".into()),
                };
            }
            TheoryResult::Inconsistent => {
                if literals.is_empty() {
                    return SolveOutcome::Unsat;
                }
                clauses.push(literals.iter().map(|&(_, v, l)| if v { -l } else { l }).collect());
            }
            TheoryResult::OutOfSteps => {
                return SolveOutcome::Undecided(format!("theory search exceeded {} steps", limits.max_theory_steps))
            }
        }
    }
    SolveOutcome::Undecided(format!("more than {} propositional models", limits.max_models))
}

/// Plain DPLL with unit propagation. Returns a total model.
fn dpll(nvars: usize, clauses: &[Vec<Lit>]) -> Option<Vec<bool>> {
    let mut assign: Vec<Option<bool>> = vec![None; nvars];
    if search(&mut assign, clauses) {
        Some(assign.into_iter().map(|v| v.unwrap_or(false)).collect())
    } else {
        None
    }
}

fn lit_value(assign: &[Option<bool>], l: Lit) -> Option<bool> {
    assign[l.unsigned_abs() as usize - 1].map(|v| v == (l > 0))
}

fn search(assign: &mut Vec<Option<bool>>, clauses: &[Vec<Lit>]) -> bool {
    let saved = assign.clone();
    // Unit propagation to fixpoint.
    loop {
        let mut changed = false;
        for c in clauses {
            let mut unassigned = None;
            let mut n_unassigned = 0;
            let mut satisfied = false;
            for &l in c {
                match lit_value(assign, l) {
                    Some(true) => {
                        satisfied = true;
                        break;
                    }
                    Some(false) => {}
                    None => {
                        n_unassigned += 1;
                        unassigned = Some(l);
                    }
                }
            }
            if satisfied {
                continue;
            }
            match (n_unassigned, unassigned) {
                (0, _) => {
                    *assign = saved;
                    return false;
                }
                (1, Some(l)) => {
                    assign[l.unsigned_abs() as usize - 1] = Some(l > 0);
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    let Some(var) = assign.iter().position(Option::is_none) else {
        return true;
    };
    for value in [true, false] {
        assign[var] = Some(value);
        if search(assign, clauses) {
            return true;
        }
        assign[var] = None;
    }
    *assign = saved;
    false
}

enum TheoryResult {
    Consistent(BTreeMap<Slot, Value>),
    Inconsistent,
    OutOfSteps,
}

fn theory_check(
    literals: &[(&Formula, bool, Lit)],
    domains: &Domains,
    constants: &BTreeSet<Value>,
    steps: &mut u64,
    max_steps: u64,
) -> TheoryResult {
    let slots: Vec<Slot> = literals.iter().flat_map(|(f, _, _)| f.slots()).collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<&Slot, usize> = slots.iter().enumerate().map(|(i, s)| (s, i)).collect();
    // Each literal is checked as soon as its last slot is assigned.
    let mut due: Vec<Vec<(&Formula, bool)>> = vec![Vec::new(); slots.len() + 1];
    for &(f, v, _) in literals {
        let at = f.slots().iter().map(|s| index[s] + 1).max().unwrap_or(0);
        due[at].push((f, v));
    }
    let doms: Vec<Vec<Value>> = slots.iter().map(|s| domains.domain(s, constants)).collect();
    let mut env = MapEnv::default();
    fn ok(env: &MapEnv, lits: &[(&Formula, bool)]) -> bool {
        lits.iter().all(|(f, v)| f.eval(env) == Some(*v))
    }
    if !ok(&env, &due[0]) {
        return TheoryResult::Inconsistent;
    }
    fn go(
        d: usize,
        slots: &[Slot],
        doms: &[Vec<Value>],
        due: &[Vec<(&Formula, bool)>],
        env: &mut MapEnv,
        steps: &mut u64,
        max_steps: u64,
    ) -> Option<bool> {
        if d == slots.len() {
            return Some(true);
        }
        for v in &doms[d] {
            *steps += 1;
            if *steps > max_steps {
                return None;
            }
            env.slots.insert(slots[d].clone(), v.clone());
            if ok(env, &due[d + 1]) && go(d + 1, slots, doms, due, env, steps, max_steps)? {
                return Some(true);
            }
        }
        env.slots.remove(&slots[d]);
        Some(false)
    }
    match go(0, &slots, &doms, &due, &mut env, steps, max_steps) {
        Some(true) => TheoryResult::Consistent(env.slots),
        Some(false) => TheoryResult::Inconsistent,
        None => TheoryResult::OutOfSteps,
    }
}

/// Exhaustive reference decision: every atom polarity times every slot value.
pub fn brute_force(gamma: &Formula, domains: &Domains) -> bool {
    let atoms: Vec<Atom> = gamma.atoms().into_iter().collect();
    let slots: Vec<Slot> = gamma.slots().into_iter().collect();
    let constants = gamma.constants();
    let doms: Vec<Vec<Value>> = slots.iter().map(|s| domains.domain(s, &constants)).collect();
    let mut idx = vec![0usize; slots.len()];
    loop {
        let slots_now: BTreeMap<Slot, Value> = slots.iter().enumerate().map(|(k, s)| (s.clone(), doms[k][idx[k]].clone())).collect();
        for mask in 0u64..(1u64 << atoms.len()) {
            let env = MapEnv {
                atoms: atoms.iter().enumerate().map(|(i, a)| (a.clone(), mask >> i & 1 == 1)).collect(),
                slots: slots_now.clone(),
            };
            if gamma.eval(&env) == Some(true) {
                return true;
            }
        }
        // Odometer over slot domains.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return false;
            }
            idx[k] += 1;
            if idx[k] < doms[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
