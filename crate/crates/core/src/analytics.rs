//! Support sets, resolution profiles, count pooling, and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{Regime, TrialRecord};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("profile `{0}` carries no raw counts; fractions alone cannot be pooled")]
    MissingCounts(String),
    #[error("refusing to pool POT and TAH trials without the mixed-regime override")]
    MixedRegimes,
    #[error("counts for `{label}` sum to {sum}, not G = {g}")]
    CountMismatch { label: String, sum: u64, g: u64 },
}

/// Resolution-cell counts (N_11, N_10, N_01, N_00).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    pub fn add(&mut self, o: &Counts) {
        self.n11 += o.n11;
        self.n10 += o.n10;
        self.n01 += o.n01;
        self.n00 += o.n00;
    }

    pub fn record(&mut self, j_a: bool, j_b: bool) {
        match (j_a, j_b) {
            (true, true) => self.n11 += 1,
            (true, false) => self.n10 += 1,
            (false, true) => self.n01 += 1,
            (false, false) => self.n00 += 1,
        }
    }
}

/// Fractions (q_11, q_10, q_01, q_00) over G.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub q11: f64,
    pub q10: f64,
    pub q01: f64,
    pub q00: f64,
}

impl Fractions {
    pub fn cells(&self) -> [f64; 4] {
        [self.q11, self.q10, self.q01, self.q00]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionProfile {
    pub scope: String,
    pub regimes: BTreeSet<Regime>,
    pub g: u64,
    pub n: Counts,
    /// `None` marks the profile undefined (G = 0).
    pub q: Option<Fractions>,
    pub non_joint: Option<f64>,
    pub delta_src: Option<f64>,
}

impl ResolutionProfile {
    pub fn from_counts(scope: impl Into<String>, regimes: BTreeSet<Regime>, n: Counts) -> Self {
        let g = n.total();
        let q = (g > 0).then(|| {
            let f = |x: u64| x as f64 / g as f64;
            Fractions { q11: f(n.n11), q10: f(n.n10), q01: f(n.n01), q00: f(n.n00) }
        });
        ResolutionProfile {
            scope: scope.into(),
            regimes,
            g,
            n,
            non_joint: q.map(|q| 1.0 - q.q11),
            delta_src: q.map(|q| q.q10 - q.q01),
            q,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.q.is_some()
    }
}

pub fn support(trials: &[TrialRecord]) -> Vec<&TrialRecord> {
    trials.iter().filter(|t| t.in_support()).collect()
}

fn check_regimes(regimes: &BTreeSet<Regime>, allow_mixed: bool) -> Result<(), AnalyticsError> {
    if regimes.len() > 1 && !allow_mixed {
        Err(AnalyticsError::MixedRegimes)
    } else {
        Ok(())
    }
}

/// Profile over the support of `trials`. Rule A is always the earlier
/// rule, as fixed at triage.
pub fn profile(trials: &[TrialRecord], scope: &str, allow_mixed: bool) -> Result<ResolutionProfile, AnalyticsError> {
    let regimes: BTreeSet<Regime> = trials.iter().map(|t| t.cell.regime).collect();
    check_regimes(&regimes, allow_mixed)?;
    let mut n = Counts::default();
    for t in support(trials) {
        let l = t.labels.expect("support implies labels");
        n.record(l.j_a.unwrap_or(false), l.j_b.unwrap_or(false));
    }
    Ok(ResolutionProfile::from_counts(scope, regimes, n))
}

/// Sums counts component-wise and normalizes once.
pub fn pool(profiles: &[ResolutionProfile], scope: &str, allow_mixed: bool) -> Result<ResolutionProfile, AnalyticsError> {
    let regimes: BTreeSet<Regime> = profiles.iter().flat_map(|p| p.regimes.iter().copied()).collect();
    check_regimes(&regimes, allow_mixed)?;
    let mut n = Counts::default();
    for p in profiles {
        n.add(&p.n);
    }
    Ok(ResolutionProfile::from_counts(scope, regimes, n))
}

/// A profile as published: G and percentages, with raw counts only when
/// they are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedRow {
    pub label: String,
    pub g: u64,
    pub q_percent: [f64; 4],
    #[serde(default)]
    pub counts: Option<Counts>,
}

/// Integer counts from G and rounded percentages by largest remainder, so
/// the counts always sum to G.
pub fn reconstruct_counts(g: u64, q_percent: [f64; 4]) -> Counts {
    let exact: Vec<f64> = q_percent.iter().map(|q| g as f64 * q / 100.0).collect();
    let mut n: Vec<u64> = exact.iter().map(|x| x.floor().max(0.0) as u64).collect();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut short = g.saturating_sub(n.iter().sum());
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        n[i] += 1;
        short -= 1;
    }
    // Rounded percentages can sum past 100; trim the smallest remainders.
    let mut over = n.iter().sum::<u64>().saturating_sub(g);
    for &i in order.iter().rev().cycle() {
        if over == 0 {
            break;
        }
        if n[i] > 0 {
            n[i] -= 1;
            over -= 1;
        }
    }
    Counts { n11: n[0], n10: n[1], n01: n[2], n00: n[3] }
}

pub fn pool_reported(rows: &[ReportedRow], scope: &str) -> Result<ResolutionProfile, AnalyticsError> {
    let mut n = Counts::default();
    for r in rows {
        let c = r.counts.ok_or_else(|| AnalyticsError::MissingCounts(r.label.clone()))?;
        if c.total() != r.g {
            return Err(AnalyticsError::CountMismatch { label: r.label.clone(), sum: c.total(), g: r.g });
        }
        n.add(&c);
    }
    Ok(ResolutionProfile::from_counts(scope, BTreeSet::new(), n))
}

/// Cell filter for matched-subset comparisons.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialFilter {
    pub models: Option<BTreeSet<String>>,
    pub policies: Option<BTreeSet<String>>,
    pub regime: Option<Regime>,
}

impl TrialFilter {
    pub fn keep(&self, t: &TrialRecord) -> bool {
        self.models.as_ref().is_none_or(|m| m.contains(&t.cell.model_id))
            && self.policies.as_ref().is_none_or(|p| p.contains(&t.cell.policy_id))
            && self.regime.is_none_or(|r| r == t.cell.regime)
    }

    pub fn apply(&self, trials: &[TrialRecord]) -> Vec<TrialRecord> {
        trials.iter().filter(|t| self.keep(t)).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Policy,
    Model,
    Pair,
    Regime,
}

impl FromStr for GroupBy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "policy" => Ok(GroupBy::Policy),
            "model" => Ok(GroupBy::Model),
            "pair" => Ok(GroupBy::Pair),
            "regime" => Ok(GroupBy::Regime),
            _ => Err(format!("unknown grouping `{s}`; expected policy, model, pair, or regime")),
        }
    }
}

/// One profile per group. Groups are always split by regime, so grouping
/// never pools POT with TAH.
pub fn group_profiles(trials: &[TrialRecord], by: GroupBy) -> Vec<ResolutionProfile> {
    let mut groups: BTreeMap<(String, Regime), Vec<TrialRecord>> = BTreeMap::new();
    for t in trials {
        let key = match by {
            GroupBy::Policy => t.cell.policy_id.clone(),
            GroupBy::Model => t.cell.model_id.clone(),
            GroupBy::Pair => format!("{}:{}x{}@{}", t.cell.policy_id, t.rule_a, t.rule_b, t.cell.model_id),
            GroupBy::Regime => t.cell.regime.to_string(),
        };
        groups.entry((key, t.cell.regime)).or_default().push(t.clone());
    }
    groups
        .into_iter()
        .map(|((key, _), ts)| profile(&ts, &key, false).expect("single-regime group"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldSummary {
    pub policy_id: String,
    pub rules: u64,
    pub clauses: u64,
    /// Classified clause pairs, the clause budget B.
    pub classified: u64,
    pub candidates: u64,
    pub witnesses: u64,
}

impl YieldSummary {
    pub fn yield_percent(&self) -> Option<f64> {
        (self.classified > 0).then(|| 100.0 * self.candidates as f64 / self.classified as f64)
    }

    pub fn total(rows: &[YieldSummary]) -> YieldSummary {
        let sum = |f: fn(&YieldSummary) -> u64| rows.iter().map(f).sum();
        YieldSummary {
            policy_id: "Total".into(),
            rules: sum(|r| r.rules),
            clauses: sum(|r| r.clauses),
            classified: sum(|r| r.classified),
            candidates: sum(|r| r.candidates),
            witnesses: sum(|r| r.witnesses),
        }
    }
}

/// Rounds half away from zero at `digits` decimals. The small nudge keeps
/// binary representation error from flipping a tie downward.
pub fn round_half_up(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    let y = x * s;
    (y + y.signum() * 1e-9).round() / s
}

pub fn pct(fraction: f64) -> String {
    let v = round_half_up(fraction * 100.0, 1);
    format!("{:.1}", if v == 0.0 { 0.0 } else { v })
}

pub fn signed_pct(fraction: f64) -> String {
    let v = round_half_up(fraction * 100.0, 1);
    if v == 0.0 {
        "+0.0".into()
    } else {
        format!("{v:+.1}")
    }
}

pub const UNDEFINED: &str = "—";

/// `q11 q10 q01 q00 | 1-q11 | Δsrc` as percentages.
pub fn profile_cells(p: &ResolutionProfile) -> String {
    match p.q {
        Some(q) => format!(
            "{} | {} | {}",
            q.cells().map(pct).join(" "),
            pct(p.non_joint.unwrap_or_default()),
            signed_pct(p.delta_src.unwrap_or_default())
        ),
        None => format!("{0} {0} {0} {0} | {0} | {0}", UNDEFINED),
    }
}

pub fn range_cell(values: &[f64]) -> String {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        UNDEFINED.into()
    } else {
        format!("{}\u{2013}{}", pct(min), pct(max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Txt,
    Csv,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "txt" => Ok(Format::Txt),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format `{s}`; expected txt or csv")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Txt => "txt",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(title: &str, header: &[&str]) -> Self {
        Table { title: title.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let line = |cells: &[String]| cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
                let mut out = line(&self.header) + "\n";
                for r in &self.rows {
                    out += &(line(r) + "\n");
                }
                out
            }
            Format::Txt => {
                let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
                for r in &self.rows {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.chars().count());
                    }
                }
                let line = |cells: &[String]| {
                    let padded: Vec<String> = cells
                        .iter()
                        .zip(&widths)
                        .enumerate()
                        .map(|(i, (c, &w))| {
                            let pad = " ".repeat(w - c.chars().count());
                            if i == 0 {
                                format!("{c}{pad}")
                            } else {
                                format!("{pad}{c}")
                            }
                        })
                        .collect();
                    padded.join("  ").trim_end().to_string()
                };
                let head = line(&self.header);
                let mut out = format!("{}\n{}\n{}\n", self.title, head, "-".repeat(head.chars().count()));
                for r in &self.rows {
                    out += &(line(r) + "\n");
                }
                out
            }
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn q_cells(p: &ResolutionProfile) -> Vec<String> {
    match p.q {
        Some(q) => q.cells().map(pct).to_vec(),
        None => vec![UNDEFINED.to_string(); 4],
    }
}

/// Per-policy static-to-concrete yield with a total row.
pub fn yield_table(rows: &[YieldSummary]) -> Table {
    let mut t = Table::new("Static-to-concrete yield", &["Policy", "Rules", "Cl.", "Pairs", "Cand.", "Wit."]);
    let fmt_row = |r: &YieldSummary| {
        let cand = match r.yield_percent() {
            Some(y) => format!("{} ({:.2})", r.candidates, round_half_up(y, 2)),
            None => format!("{} ({UNDEFINED})", r.candidates),
        };
        vec![
            r.policy_id.clone(),
            r.rules.to_string(),
            r.clauses.to_string(),
            r.classified.to_string(),
            cand,
            r.witnesses.to_string(),
        ]
    };
    t.rows = rows.iter().map(fmt_row).collect();
    if !rows.is_empty() {
        t.rows.push(fmt_row(&YieldSummary::total(rows)));
    }
    t
}

fn profile_row(label: &str, p: &ResolutionProfile) -> Vec<String> {
    let mut row = vec![label.to_string(), p.g.to_string()];
    row.extend(q_cells(p));
    match p.q {
        Some(_) => {
            row.push(pct(p.non_joint.unwrap_or_default()));
            row.push(signed_pct(p.delta_src.unwrap_or_default()));
        }
        None => row.extend([UNDEFINED.to_string(), UNDEFINED.to_string()]),
    }
    row
}

/// One row per profile and a final row that pools their counts.
pub fn profile_table(profiles: &[ResolutionProfile], title: &str) -> Table {
    let mut t = Table::new(title, &["Policy", "G", "q11", "q10", "q01", "q00", "1-q11", "Δsrc"]);
    for p in profiles {
        t.rows.push(profile_row(&p.scope, p));
    }
    if !profiles.is_empty() {
        if let Ok(all) = pool(profiles, "All", false) {
            t.rows.push(profile_row("All", &all));
        }
    }
    t
}

/// POT against TAH per policy on a matched model subset.
pub fn regime_table(trials: &[TrialRecord], models: Option<&BTreeSet<String>>) -> Table {
    let mut t = Table::new("POT-TAH comparison", &["Policy", "Mode", "G", "q11", "q10", "q01", "q00", "Δsrc"]);
    let filter = TrialFilter { models: models.cloned(), ..TrialFilter::default() };
    let kept = filter.apply(trials);
    let policies: BTreeSet<&str> = kept.iter().map(|t| t.cell.policy_id.as_str()).collect();
    for policy in policies {
        for regime in [Regime::Pot, Regime::Tah] {
            let f = TrialFilter { policies: Some([policy.to_string()].into()), regime: Some(regime), ..TrialFilter::default() };
            let subset = f.apply(&kept);
            if subset.is_empty() {
                continue;
            }
            let p = profile(&subset, policy, false).expect("single regime");
            let mut row = vec![policy.to_string(), regime.to_string(), p.g.to_string()];
            row.extend(q_cells(&p));
            row.push(p.delta_src.map_or(UNDEFINED.to_string(), signed_pct));
            t.rows.push(row);
        }
    }
    t
}

/// Policy by q-cell rows with one column per model and a min-max range.
pub fn model_table(trials: &[TrialRecord], regime: Regime) -> Table {
    let kept = TrialFilter { regime: Some(regime), ..TrialFilter::default() }.apply(trials);
    let models: Vec<String> = kept.iter().map(|t| t.cell.model_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut header = vec!["Policy".to_string(), "Cell".to_string()];
    header.extend(models.iter().cloned());
    header.push("Range".into());
    let mut t = Table { title: format!("Per-model profiles ({regime})"), header, rows: Vec::new() };
    let policies: BTreeSet<&str> = kept.iter().map(|t| t.cell.policy_id.as_str()).collect();
    for policy in policies {
        let per_model: Vec<ResolutionProfile> = models
            .iter()
            .map(|m| {
                let f = TrialFilter {
                    models: Some([m.clone()].into()),
                    policies: Some([policy.to_string()].into()),
                    regime: Some(regime),
                };
                profile(&f.apply(&kept), m, false).expect("single regime")
            })
            .collect();
        for (i, cell) in ["q11", "q10", "q01", "q00"].iter().enumerate() {
            let mut row = vec![if i == 0 { policy.to_string() } else { String::new() }, cell.to_string()];
            let vals: Vec<f64> = per_model.iter().filter_map(|p| p.q.map(|q| q.cells()[i])).collect();
            row.extend(per_model.iter().map(|p| p.q.map_or(UNDEFINED.to_string(), |q| pct(q.cells()[i]))));
            row.push(range_cell(&vals));
            t.rows.push(row);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{Cell, Labels, TrialStatus};

    pub(crate) fn trial(model: &str, regime: Regime, gates: [bool; 4], j: (bool, bool)) -> TrialRecord {
        let all = gates.iter().all(|g| *g);
        TrialRecord {
            trial_id: String::new(),
            witness_id: "w".into(),
            rule_a: "r1".into(),
            rule_b: "r2".into(),
            cell: Cell { model_id: model.into(), policy_id: "p".into(), regime },
            rollout_index: 0,
            response: None,
            labels: Some(Labels {
                h_a: gates[0],
                h_b: gates[1],
                l_a: gates[2],
                l_b: gates[3],
                j_a: all.then_some(j.0),
                j_b: all.then_some(j.1),
            }),
            status: TrialStatus::Judged,
            judge_payload: None,
            error: None,
        }
    }

    #[test]
    fn mixed_batch_support_count() {
        let mut ts = Vec::new();
        for i in 0..10 {
            let ok = i < 7;
            ts.push(trial("m", Regime::Pot, [true, ok, true, true], (true, true)));
        }
        // Brute-force oracle over the fixture's gate bits.
        let oracle = ts.iter().filter(|t| { let l = t.labels.unwrap(); l.h_a && l.h_b && l.l_a && l.l_b }).count();
        assert_eq!(support(&ts).len(), oracle);
        assert_eq!(oracle, 7);
    }

    #[test]
    fn manus_profile_row() {
        let n = Counts { n11: 670, n10: 769, n01: 596, n00: 581 };
        let p = ResolutionProfile::from_counts("Manus", BTreeSet::new(), n);
        assert_eq!(p.g, 2616);
        assert_eq!(profile_cells(&p), "25.6 29.4 22.8 22.2 | 74.4 | +6.6");
    }

    #[test]
    fn undefined_profile() {
        let p = profile(&[], "x", false).unwrap();
        assert!(!p.is_defined());
        assert_eq!(profile_cells(&p), "— — — — | — | —");
        assert!(profile_row("x", &p).iter().skip(2).all(|c| c == UNDEFINED));
    }

    #[test]
    fn all_joint_compliance() {
        let ts: Vec<_> = (0..4).map(|_| trial("m", Regime::Pot, [true; 4], (true, true))).collect();
        let p = profile(&ts, "x", false).unwrap();
        assert_eq!(p.q.unwrap().cells(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.delta_src, Some(0.0));
    }

    #[test]
    fn pooling_identity_and_symmetry() {
        let a = ResolutionProfile::from_counts("a", BTreeSet::new(), Counts { n11: 0, n10: 3, n01: 1, n00: 0 });
        let b = ResolutionProfile::from_counts("b", BTreeSet::new(), Counts { n11: 4, n10: 0, n01: 0, n00: 0 });
        let one = pool(std::slice::from_ref(&a), "a", false).unwrap();
        assert_eq!((one.n, one.q), (a.n, a.q));
        assert_eq!(pool(&[a, b], "ab", false).unwrap().q.unwrap().q11, 0.5);
    }

    #[test]
    fn pooling_refuses_mixed_regimes() {
        let a = ResolutionProfile::from_counts("a", [Regime::Pot].into(), Counts::default());
        let b = ResolutionProfile::from_counts("b", [Regime::Tah].into(), Counts::default());
        assert_eq!(pool(&[a.clone(), b.clone()], "x", false), Err(AnalyticsError::MixedRegimes));
        assert!(pool(&[a, b], "x", true).is_ok());
        let ts = [trial("m", Regime::Pot, [true; 4], (true, true)), trial("m", Regime::Tah, [true; 4], (true, true))];
        assert_eq!(profile(&ts, "x", false), Err(AnalyticsError::MixedRegimes));
    }

    #[test]
    fn reported_rows_need_counts() {
        let row = ReportedRow { label: "Manus".into(), g: 2616, q_percent: [25.6, 29.4, 22.8, 22.2], counts: None };
        assert_eq!(pool_reported(std::slice::from_ref(&row), "x"), Err(AnalyticsError::MissingCounts("Manus".into())));
        let counts = reconstruct_counts(row.g, row.q_percent);
        assert_eq!(counts, Counts { n11: 670, n10: 769, n01: 596, n00: 581 });
    }

    #[test]
    fn range_and_rounding() {
        assert_eq!(range_cell(&[0.108, 0.25, 0.287, 0.359]), "10.8–35.9");
        assert_eq!(pct(0.12345), "12.3");
        assert_eq!(pct(0.12350), "12.4");
        assert_eq!(signed_pct(-0.0662), "-6.6");
        assert_eq!(signed_pct(0.0), "+0.0");
    }

    #[test]
    fn empty_tables_are_headers_only() {
        for t in [yield_table(&[]), profile_table(&[], "t"), regime_table(&[], None), model_table(&[], Regime::Pot)] {
            assert!(t.rows.is_empty());
            assert_eq!(t.render(Format::Csv).lines().count(), 1);
        }
    }

    #[test]
    fn yield_row_uses_two_decimals() {
        let y = YieldSummary { policy_id: "mini-SWE".into(), rules: 12, clauses: 18, classified: 140, candidates: 4, witnesses: 27 };
        let t = yield_table(&[y]);
        assert_eq!(t.rows[0][4], "4 (2.86)");
        assert_eq!(t.rows.len(), 2);
    }

    #[test]
    fn grouping_never_mixes_regimes() {
        let ts = [
            trial("m", Regime::Pot, [true; 4], (true, false)),
            trial("m", Regime::Tah, [true; 4], (false, true)),
        ];
        let ps = group_profiles(&ts, GroupBy::Policy);
        assert_eq!(ps.len(), 2);
        assert!(ps.iter().all(|p| p.regimes.len() == 1 && p.g == 1));
    }
}
