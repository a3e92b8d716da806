//! Activation and collision formulas over lowered symbolic terms.
//!
//! Atoms and slots are identified structurally, so identical predicate text
//! anywhere in a policy denotes the same variable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::registry::SortName;
use crate::value::{normalize_label, token_set, Value};

/// Prefix reserved for solver-generated values distinct from every constant.
pub const FRESH_PREFIX: &str = "\u{27e8}fresh";

pub fn is_fresh(value: &Value) -> bool {
    matches!(value, Value::Str(s) if s.starts_with(FRESH_PREFIX))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomKind {
    Semantic,
    Text,
    Environment,
}

/// A Boolean activation atom `z`. Identity is the predicate name plus its
/// canonical argument rendering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub kind: AtomKind,
    pub predicate: String,
    pub args: Vec<String>,
}

impl Atom {
    pub fn key(&self) -> String {
        format!("{}({})", self.predicate, self.args.join(", "))
    }

    /// The trailing string argument, which is the semantic label for
    /// semantic predicates and the probe text for text predicates.
    pub fn label(&self) -> Option<String> {
        self.args
            .iter()
            .rev()
            .find_map(|a| serde_json::from_str::<String>(a).ok())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// A typed slot variable `s_t`, keyed by sort and extraction source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub sort: SortName,
    pub source: String,
}

impl Slot {
    pub fn key(&self) -> String {
        format!("s[{}:{}]", self.sort, self.source)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Const(Value),
    Slot(Slot),
}

impl Term {
    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Term::Const(v) => Some(v),
            Term::Slot(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(v) => write!(f, "{v}"),
            Term::Slot(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn parse(s: &str) -> Option<CmpOp> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    /// Applies the comparison. Ordering on non-integers is false.
    pub fn apply(self, lhs: &Value, rhs: &Value) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            _ => match (lhs.as_int(), rhs.as_int()) {
                (Some(a), Some(b)) => match self {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Eq | CmpOp::Ne => unreachable!(),
                },
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    Set,
    Pattern,
}

/// One side of a count constraint, e.g. `x >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountBound {
    pub op: CmpOp,
    pub n: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Formula {
    Const {
        value: bool,
    },
    Atom {
        atom: Atom,
    },
    Cmp {
        op: CmpOp,
        lhs: Term,
        rhs: Term,
    },
    /// Whether two values can denote the same behavior.
    Overlap {
        mode: OverlapMode,
        lhs: Term,
        rhs: Term,
    },
    /// True iff no count satisfies the required bound while escaping the
    /// forbidden one. A missing bound is unconstrained.
    CountConflict {
        required: Option<CountBound>,
        forbidden: Option<CountBound>,
    },
    Not {
        arg: Box<Formula>,
    },
    And {
        args: Vec<Formula>,
    },
    Or {
        args: Vec<Formula>,
    },
}

pub const TRUE: Formula = Formula::Const { value: true };
pub const FALSE: Formula = Formula::Const { value: false };

impl Formula {
    pub fn atom(atom: Atom) -> Formula {
        Formula::Atom { atom }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Formula::Const { value: true })
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Formula::Const { value: false })
    }

    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut args = Vec::new();
        for p in parts {
            match p {
                Formula::Const { value: true } => {}
                Formula::Const { value: false } => return FALSE,
                Formula::And { args: inner } => args.extend(inner),
                other => args.push(other),
            }
        }
        match args.len() {
            0 => TRUE,
            1 => args.pop().unwrap(),
            _ => Formula::And { args },
        }
    }

    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut args = Vec::new();
        for p in parts {
            match p {
                Formula::Const { value: false } => {}
                Formula::Const { value: true } => return TRUE,
                Formula::Or { args: inner } => args.extend(inner),
                other => args.push(other),
            }
        }
        match args.len() {
            0 => FALSE,
            1 => args.pop().unwrap(),
            _ => Formula::Or { args },
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::Const { value } => Formula::Const { value: !value },
            Formula::Not { arg } => *arg,
            other => Formula::Not { arg: Box::new(other) },
        }
    }

    /// Comparison, folded when both sides are constants.
    pub fn cmp(op: CmpOp, lhs: Term, rhs: Term) -> Formula {
        match (&lhs, &rhs) {
            (Term::Const(a), Term::Const(b)) => Formula::Const { value: op.apply(a, b) },
            _ => Formula::Cmp { op, lhs, rhs },
        }
    }

    /// Count conflict, folded when every bound is constant.
    pub fn count_conflict(required: Option<CountBound>, forbidden: Option<CountBound>) -> Formula {
        let concrete = |b: &Option<CountBound>| b.as_ref().is_none_or(|b| b.n.as_const().is_some());
        if concrete(&required) && concrete(&forbidden) {
            let value = count_conflict_holds(required.as_ref(), forbidden.as_ref(), |t| t.as_const().cloned());
            return Formula::Const { value: value.unwrap_or(false) };
        }
        Formula::CountConflict { required, forbidden }
    }

    /// Evaluates under an environment. `None` if some variable is unassigned.
    pub fn eval(&self, env: &dyn Env) -> Option<bool> {
        Some(match self {
            Formula::Const { value } => *value,
            Formula::Atom { atom } => env.atom(atom)?,
            Formula::Cmp { op, lhs, rhs } => op.apply(&resolve(lhs, env)?, &resolve(rhs, env)?),
            Formula::Overlap { mode, lhs, rhs } => {
                overlap_values(*mode, &resolve(lhs, env)?, &resolve(rhs, env)?)
            }
            Formula::CountConflict { required, forbidden } => {
                count_conflict_holds(required.as_ref(), forbidden.as_ref(), |t| resolve(t, env))?
            }
            Formula::Not { arg } => !arg.eval(env)?,
            Formula::And { args } => {
                let mut all = true;
                for a in args {
                    all &= a.eval(env)?;
                }
                all
            }
            Formula::Or { args } => {
                let mut any = false;
                for a in args {
                    any |= a.eval(env)?;
                }
                any
            }
        })
    }

    /// Pushes negations down to literals.
    pub fn to_nnf(&self) -> Formula {
        fn go(f: &Formula, negate: bool) -> Formula {
            match f {
                Formula::Const { value } => Formula::Const { value: *value != negate },
                Formula::Not { arg } => go(arg, !negate),
                Formula::And { args } => {
                    let parts = args.iter().map(|a| go(a, negate));
                    if negate {
                        Formula::or(parts)
                    } else {
                        Formula::and(parts)
                    }
                }
                Formula::Or { args } => {
                    let parts = args.iter().map(|a| go(a, negate));
                    if negate {
                        Formula::and(parts)
                    } else {
                        Formula::or(parts)
                    }
                }
                // Ordering negation is only exact on integers, so it stays a negated literal.
                Formula::Cmp { op, lhs, rhs } if negate && !op.is_ordering() => Formula::Cmp {
                    op: op.negate(),
                    lhs: lhs.clone(),
                    rhs: rhs.clone(),
                },
                lit if negate => Formula::Not { arg: Box::new(lit.clone()) },
                lit => lit.clone(),
            }
        }
        go(self, false)
    }

    pub fn is_nnf(&self) -> bool {
        match self {
            Formula::Not { arg } => !matches!(
                **arg,
                Formula::Not { .. } | Formula::And { .. } | Formula::Or { .. } | Formula::Const { .. }
            ),
            Formula::And { args } | Formula::Or { args } => args.iter().all(Formula::is_nnf),
            _ => true,
        }
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Atom { atom } = f {
                out.insert(atom.clone());
            }
        });
        out
    }

    pub fn slots(&self) -> BTreeSet<Slot> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            for t in f.own_terms() {
                if let Term::Slot(s) = t {
                    out.insert(s.clone());
                }
            }
        });
        out
    }

    /// Every constant value appearing in a term position.
    pub fn constants(&self) -> BTreeSet<Value> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            for t in f.own_terms() {
                if let Term::Const(v) = t {
                    for e in v.elements() {
                        out.insert(e.clone());
                    }
                }
            }
        });
        out
    }

    /// Literals that mention slots and need a theory check.
    pub fn theory_literals(&self) -> BTreeSet<Formula> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if f.is_theory_literal() {
                out.insert(f.clone());
            }
        });
        out
    }

    pub fn is_theory_literal(&self) -> bool {
        matches!(
            self,
            Formula::Cmp { .. } | Formula::Overlap { .. } | Formula::CountConflict { .. }
        )
    }

    fn own_terms(&self) -> Vec<&Term> {
        match self {
            Formula::Cmp { lhs, rhs, .. } | Formula::Overlap { lhs, rhs, .. } => vec![lhs, rhs],
            Formula::CountConflict { required, forbidden } => {
                required.iter().chain(forbidden.iter()).map(|b| &b.n).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Formula)) {
        f(self);
        match self {
            Formula::Not { arg } => arg.visit(f),
            Formula::And { args } | Formula::Or { args } => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Const { value: true } => f.write_str("true"),
            Formula::Const { value: false } => f.write_str("false"),
            Formula::Atom { atom } => write!(f, "{atom}"),
            Formula::Cmp { op, lhs, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            Formula::Overlap { mode, lhs, rhs } => {
                let name = match mode {
                    OverlapMode::Set => "overlap",
                    OverlapMode::Pattern => "pattern_overlap",
                };
                write!(f, "{name}({lhs}, {rhs})")
            }
            Formula::CountConflict { required, forbidden } => {
                let show = |b: &Option<CountBound>| match b {
                    Some(b) => format!("x {} {}", b.op.symbol(), b.n),
                    None => "any".to_string(),
                };
                write!(f, "count_conflict(require {}, forbid {})", show(required), show(forbidden))
            }
            Formula::Not { arg } => write!(f, "!({arg})"),
            Formula::And { args } => join(f, args, " & "),
            Formula::Or { args } => join(f, args, " | "),
        }
    }
}

fn join(f: &mut fmt::Formatter<'_>, args: &[Formula], sep: &str) -> fmt::Result {
    f.write_str("(")?;
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        write!(f, "{a}")?;
    }
    f.write_str(")")
}

/// Variable lookup for evaluation.
pub trait Env {
    fn atom(&self, atom: &Atom) -> Option<bool>;
    fn slot(&self, slot: &Slot) -> Option<Value>;
}

/// A plain assignment keyed by atom and slot identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapEnv {
    pub atoms: BTreeMap<Atom, bool>,
    pub slots: BTreeMap<Slot, Value>,
}

impl Env for MapEnv {
    fn atom(&self, atom: &Atom) -> Option<bool> {
        self.atoms.get(atom).copied()
    }
    fn slot(&self, slot: &Slot) -> Option<Value> {
        self.slots.get(slot).cloned()
    }
}

fn resolve(term: &Term, env: &dyn Env) -> Option<Value> {
    match term {
        Term::Const(v) => Some(v.clone()),
        Term::Slot(s) => env.slot(s),
    }
}

/// Decides whether no count `x >= 0` meets `required` and escapes `forbidden`.
pub fn count_conflict_holds(
    required: Option<&CountBound>,
    forbidden: Option<&CountBound>,
    mut value_of: impl FnMut(&Term) -> Option<Value>,
) -> Option<bool> {
    let mut bound = |b: Option<&CountBound>| -> Option<Option<(CmpOp, i64)>> {
        match b {
            None => Some(None),
            Some(b) => Some(value_of(&b.n)?.as_int().map(|n| (b.op, n))),
        }
    };
    let req = bound(required)?;
    let forb = bound(forbidden)?;
    // Past the largest threshold every bound is constant, so one value
    // beyond it stands for all larger counts.
    let limit = [req, forb]
        .iter()
        .flatten()
        .map(|(_, n)| n.unsigned_abs() as i64)
        .max()
        .unwrap_or(0)
        + 1;
    let holds = |b: Option<(CmpOp, i64)>, x: i64| b.is_none_or(|(op, n)| op.apply(&Value::Int(x), &Value::Int(n)));
    let escapable = (0..=limit).any(|x| holds(req, x) && !(forb.is_none() || holds(forb, x)));
    Some(!escapable)
}

/// Deterministic overlap on concrete values.
pub fn overlap_values(mode: OverlapMode, a: &Value, b: &Value) -> bool {
    let left = a.elements();
    let right = b.elements();
    left.iter().any(|x| {
        right.iter().any(|y| match (x, y) {
            (Value::Str(s), Value::Str(t)) => overlap_strings(mode, s, t),
            (x, y) => x == y,
        })
    })
}

fn overlap_strings(mode: OverlapMode, a: &str, b: &str) -> bool {
    let fa = a.starts_with(FRESH_PREFIX);
    let fb = b.starts_with(FRESH_PREFIX);
    if fa || fb {
        return a == b;
    }
    if normalize_label(a) == normalize_label(b) {
        return true;
    }
    match mode {
        OverlapMode::Set => !token_set(a).is_disjoint(&token_set(b)),
        OverlapMode::Pattern => patterns_overlap(a, b),
    }
}

/// Command-pattern overlap with `*` and `?` wildcards.
pub fn patterns_overlap(a: &str, b: &str) -> bool {
    let a = a.split_whitespace().collect::<Vec<_>>().join(" ");
    let b = b.split_whitespace().collect::<Vec<_>>().join(" ");
    let wild = |s: &str| s.contains(['*', '?']);
    match (wild(&a), wild(&b)) {
        (false, false) => a == b,
        (true, false) => glob_match(&a, &b),
        (false, true) => glob_match(&b, &a),
        (true, true) => {
            // Conservative: the literal prefixes and suffixes must agree.
            let lit_prefix = |s: &str| s.split(['*', '?']).next().unwrap_or("").to_string();
            let lit_suffix = |s: &str| s.rsplit(['*', '?']).next().unwrap_or("").to_string();
            let (pa, pb) = (lit_prefix(&a), lit_prefix(&b));
            let (sa, sb) = (lit_suffix(&a), lit_suffix(&b));
            (pa.starts_with(&pb) || pb.starts_with(&pa)) && (sa.ends_with(&sb) || sb.ends_with(&sa))
        }
    }
}

pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}
