//! Witness realization: retrieved seeds used unchanged, then append-only
//! elaborations of those seeds, then full synthesis. Every attempt is
//! logged whether or not the verifier accepts it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::adapters::{exec_json, with_retries, AdapterError, Endpoint};
use crate::compiler::Clause;
use crate::formula::{is_fresh, Atom};
use crate::store::RuleRecord;
use crate::triage::{CandidatePair, ClauseWitness, SymbolicAssignment};
use crate::value::{token_set, Value};

/// What the verifier and synthesizer see about one source rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleContext {
    pub rule_id: String,
    pub quote: String,
    pub gist: String,
    /// Labels of the activation atoms the assignment sets true.
    pub cues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub concrete: bool,
    pub governs_a: bool,
    pub governs_b: bool,
    pub score_a: f64,
    pub score_b: f64,
    pub rationale_a: String,
    pub rationale_b: String,
}

impl VerifierVerdict {
    /// x ∈ X_ij iff x is concrete and both rules govern it.
    pub fn accepts(&self) -> bool {
        self.concrete && self.governs_a && self.governs_b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub rule_a: RuleContext,
    pub rule_b: RuleContext,
    pub queries: Vec<String>,
    pub variant: usize,
}

pub trait RetrievalAdapter {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, AdapterError>;
}

pub trait SynthesisAdapter {
    /// Text appended to a seed; the seed itself is never edited.
    fn elaborate(&self, seed: &str, req: &SynthesisRequest) -> Result<String, AdapterError>;
    fn synthesize(&self, req: &SynthesisRequest) -> Result<String, AdapterError>;
}

pub trait VerifierAdapter {
    fn verify(&self, text: &str, a: &RuleContext, b: &RuleContext) -> Result<VerifierVerdict, AdapterError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Tier {
    Seed = 1,
    Elaborated = 2,
    Synthesized = 3,
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t as u8
    }
}

impl TryFrom<u8> for Tier {
    type Error = String;
    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            1 => Ok(Tier::Seed),
            2 => Ok(Tier::Elaborated),
            3 => Ok(Tier::Synthesized),
            _ => Err(format!("tier must be 1, 2, or 3, got {n}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub witness_id: String,
    pub policy_id: String,
    pub rule_a: String,
    pub rule_b: String,
    /// `clause_a::clause_b` of the symbolic assignment realized.
    pub assignment_ref: String,
    pub tier: Tier,
    pub seed_text: Option<String>,
    pub suffix_text: Option<String>,
    pub final_text: String,
    pub verifier_scores: (f64, f64),
    pub verifier_rationales: (String, String),
    pub concrete: bool,
    pub governs_a: bool,
    pub governs_b: bool,
    pub accepted: bool,
    /// Seconds since construction for this pair began.
    pub construction_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RealizationStatus {
    Realized,
    Unrealized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRealization {
    pub policy_id: String,
    pub rule_a: String,
    pub rule_b: String,
    pub status: RealizationStatus,
    pub accepted: usize,
    pub attempts: usize,
    /// Set when an adapter failed hard and the cascade stopped early.
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessBudget {
    pub max_witnesses: usize,
    pub max_seconds: f64,
    /// Ranked seeds taken from retrieval per assignment.
    pub top_k: usize,
    /// Tier-3 attempts per assignment.
    pub synthesis_attempts: usize,
    pub verifier_attempts: u32,
}

impl Default for WitnessBudget {
    fn default() -> Self {
        WitnessBudget { max_witnesses: 10, max_seconds: 300.0, top_k: 5, synthesis_attempts: 4, verifier_attempts: 2 }
    }
}

pub struct WitnessAdapters<'a> {
    pub retrieval: &'a dyn RetrievalAdapter,
    pub synthesis: &'a dyn SynthesisAdapter,
    pub verifier: &'a dyn VerifierAdapter,
}

fn label_of(atom: &Atom) -> String {
    atom.label().unwrap_or_else(|| atom.predicate.clone())
}

/// Retrieval queries from true activation labels, concrete slot values,
/// and the colliding primitive arguments. Deterministic.
pub fn derive_queries(assignment: &SymbolicAssignment, witness: &ClauseWitness) -> Vec<String> {
    let mut terms: Vec<String> = Vec::new();
    let mut push = |t: String| {
        if !t.trim().is_empty() && !terms.contains(&t) {
            terms.push(t);
        }
    };
    for atom in assignment.true_atoms() {
        push(label_of(atom));
    }
    for s in &assignment.slot_values {
        if is_fresh(&s.value) {
            continue;
        }
        push(match &s.value {
            Value::Str(v) => v.clone(),
            other => other.to_string(),
        });
    }
    for arg in &witness.colliding_args {
        push(arg.split_once('=').map_or(arg.as_str(), |(_, v)| v).to_string());
    }
    let mut queries = Vec::new();
    if terms.len() > 1 {
        queries.push(terms.join(" "));
    }
    queries.extend(terms);
    queries
}

fn cues(clause: Option<&Clause>, assignment: &SymbolicAssignment) -> Vec<String> {
    let Some(clause) = clause else { return Vec::new() };
    let active: BTreeSet<&Atom> = assignment.true_atoms().collect();
    clause.activation.atoms().iter().filter(|a| active.contains(*a)).map(label_of).collect()
}

pub fn rule_context(rule_id: &str, rules: &BTreeMap<String, RuleRecord>, cues: Vec<String>) -> RuleContext {
    let (quote, gist) = rules.get(rule_id).map(|r| (r.quote.clone(), r.gist.clone())).unwrap_or_default();
    RuleContext { rule_id: rule_id.to_string(), quote, gist, cues }
}

struct Job {
    assignment_ref: String,
    request: SynthesisRequest,
    seeds: Vec<String>,
}

/// Runs the tier cascade for one candidate pair. Tiers run in order over
/// all of the pair's assignments; the cascade stops at `max_witnesses`
/// accepted witnesses or when the time budget runs out.
pub fn realize(
    policy_id: &str,
    pair: &CandidatePair,
    clauses: &BTreeMap<String, Clause>,
    rules: &BTreeMap<String, RuleRecord>,
    adapters: &WitnessAdapters<'_>,
    budget: &WitnessBudget,
) -> (PairRealization, Vec<WitnessRecord>) {
    let start = Instant::now();
    let deadline = Duration::from_secs_f64(budget.max_seconds.max(0.0));
    let mut log: Vec<WitnessRecord> = Vec::new();
    let mut accepted = 0usize;
    let mut error: Option<String> = None;

    let mut jobs = Vec::new();
    for w in &pair.witnesses {
        let queries = derive_queries(&w.assignment, w);
        let request = SynthesisRequest {
            rule_a: rule_context(&pair.rule_a, rules, cues(clauses.get(&w.clause_a), &w.assignment)),
            rule_b: rule_context(&pair.rule_b, rules, cues(clauses.get(&w.clause_b), &w.assignment)),
            queries,
            variant: 0,
        };
        jobs.push(Job { assignment_ref: format!("{}::{}", w.clause_a, w.clause_b), request, seeds: Vec::new() });
    }

    let out_of_budget = |accepted: usize| accepted >= budget.max_witnesses || start.elapsed() >= deadline;

    'cascade: {
        // Retrieval happens once per assignment and feeds tiers 1 and 2.
        for job in &mut jobs {
            if out_of_budget(accepted) {
                break 'cascade;
            }
            let mut ranked = Vec::new();
            for q in &job.request.queries {
                match adapters.retrieval.retrieve(q, budget.top_k) {
                    Ok(seeds) => ranked.extend(seeds),
                    Err(e) => {
                        error = Some(format!("retrieval: {e}"));
                        break 'cascade;
                    }
                }
            }
            let mut seen = BTreeSet::new();
            job.seeds = ranked.into_iter().filter(|s| seen.insert(s.clone())).take(budget.top_k).collect();
        }
        for tier in [Tier::Seed, Tier::Elaborated, Tier::Synthesized] {
            for job in &jobs {
                let n = if tier == Tier::Synthesized { budget.synthesis_attempts } else { job.seeds.len() };
                for i in 0..n {
                    if out_of_budget(accepted) {
                        break 'cascade;
                    }
                    let built = match tier {
                        Tier::Seed => Ok((Some(job.seeds[i].clone()), None, job.seeds[i].clone())),
                        Tier::Elaborated => {
                            let seed = &job.seeds[i];
                            adapters.synthesis.elaborate(seed, &job.request).map(|suffix| {
                                (Some(seed.clone()), Some(suffix.clone()), format!("{seed}{suffix}"))
                            })
                        }
                        Tier::Synthesized => {
                            let req = SynthesisRequest { variant: i, ..job.request.clone() };
                            adapters.synthesis.synthesize(&req).map(|t| (None, None, t))
                        }
                    };
                    let (seed_text, suffix_text, final_text) = match built {
                        Ok(b) => b,
                        Err(e) => {
                            error = Some(format!("synthesis: {e}"));
                            break 'cascade;
                        }
                    };
                    let rec = verify_attempt(
                        adapters.verifier,
                        budget.verifier_attempts,
                        &job.request,
                        WitnessRecord {
                            witness_id: format!("{policy_id}:{}x{}:w{:03}", pair.rule_a, pair.rule_b, log.len()),
                            policy_id: policy_id.to_string(),
                            rule_a: pair.rule_a.clone(),
                            rule_b: pair.rule_b.clone(),
                            assignment_ref: job.assignment_ref.clone(),
                            tier,
                            seed_text,
                            suffix_text,
                            final_text,
                            verifier_scores: (0.0, 0.0),
                            verifier_rationales: (String::new(), String::new()),
                            concrete: false,
                            governs_a: false,
                            governs_b: false,
                            accepted: false,
                            construction_time: 0.0,
                            provenance: None,
                        },
                    );
                    let rec = WitnessRecord { construction_time: start.elapsed().as_secs_f64(), ..rec };
                    accepted += rec.accepted as usize;
                    log.push(rec);
                }
            }
        }
    }

    let summary = PairRealization {
        policy_id: policy_id.to_string(),
        rule_a: pair.rule_a.clone(),
        rule_b: pair.rule_b.clone(),
        status: if accepted > 0 { RealizationStatus::Realized } else { RealizationStatus::Unrealized },
        accepted,
        attempts: log.len(),
        incomplete: error.is_some(),
        error,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    (summary, log)
}

fn verify_attempt(
    verifier: &dyn VerifierAdapter,
    attempts: u32,
    req: &SynthesisRequest,
    rec: WitnessRecord,
) -> WitnessRecord {
    if rec.final_text.trim().is_empty() {
        return WitnessRecord { provenance: Some("empty-text".into()), ..rec };
    }
    match with_retries(attempts, || verifier.verify(&rec.final_text, &req.rule_a, &req.rule_b)) {
        Ok(v) => WitnessRecord {
            verifier_scores: (v.score_a, v.score_b),
            verifier_rationales: (v.rationale_a.clone(), v.rationale_b.clone()),
            concrete: v.concrete,
            governs_a: v.governs_a,
            governs_b: v.governs_b,
            accepted: v.accepts(),
            ..rec
        },
        Err(e) => WitnessRecord { provenance: Some(format!("verifier-error: {e}")), ..rec },
    }
}

/// Ranks corpus lines by token overlap with the query; ties keep corpus
/// order. Lines sharing no token are never returned.
pub struct CorpusRetrieval {
    seeds: Vec<String>,
}

impl CorpusRetrieval {
    pub fn new(seeds: Vec<String>) -> Self {
        CorpusRetrieval { seeds }
    }

    pub fn from_text(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?))
    }
}

impl RetrievalAdapter for CorpusRetrieval {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, AdapterError> {
        let q = token_set(query);
        let mut scored: Vec<(usize, usize, &String)> = self
            .seeds
            .iter()
            .enumerate()
            .map(|(i, s)| (token_set(s).intersection(&q).count(), i, s))
            .filter(|(n, _, _)| *n > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, _, s)| s.clone()).collect())
    }
}

fn humanize(label: &str) -> String {
    label.replace(['_', '-'], " ")
}

/// Deterministic offline synthesizer built from activation cues.
pub struct StubSynthesis;

impl SynthesisAdapter for StubSynthesis {
    fn elaborate(&self, _seed: &str, req: &SynthesisRequest) -> Result<String, AdapterError> {
        let cues: Vec<String> = req.rule_a.cues.iter().chain(&req.rule_b.cues).map(|c| humanize(c)).collect();
        Ok(if cues.is_empty() {
            " Please handle this carefully in one reply.".to_string()
        } else {
            format!(" Also, this request involves {}.", cues.join(" and "))
        })
    }

    fn synthesize(&self, req: &SynthesisRequest) -> Result<String, AdapterError> {
        let mut parts: Vec<String> = req.rule_a.cues.iter().chain(&req.rule_b.cues).map(|c| humanize(c)).collect();
        if parts.is_empty() {
            parts = req.queries.iter().take(2).map(|q| humanize(q)).collect();
        }
        let topic = if parts.is_empty() { "my current task".to_string() } else { parts.join(" and ") };
        Ok(format!(
            "I need help with a request that involves {topic}; please work through it for me now (variant {}).",
            req.variant + 1
        ))
    }
}

/// Offline verifier. A rule governs when every token of each of its
/// activation cues appears in the text; unconditional rules always govern.
/// Text is concrete when it has at least five words and no placeholder.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubVerifier {
    /// Accepts every nonempty text; used to exercise the stop rule.
    pub accept_all: bool,
}

impl StubVerifier {
    fn governs(text_tokens: &BTreeSet<String>, rule: &RuleContext) -> bool {
        rule.cues.iter().all(|c| token_set(c).is_subset(text_tokens))
    }
}

impl VerifierAdapter for StubVerifier {
    fn verify(&self, text: &str, a: &RuleContext, b: &RuleContext) -> Result<VerifierVerdict, AdapterError> {
        let tokens = token_set(text);
        let concrete = self.accept_all || (text.split_whitespace().count() >= 5 && !text.contains(crate::formula::FRESH_PREFIX));
        let ga = self.accept_all || Self::governs(&tokens, a);
        let gb = self.accept_all || Self::governs(&tokens, b);
        let why = |g: bool, r: &RuleContext| {
            if g {
                format!("activation cues of {} present", r.rule_id)
            } else {
                format!("missing activation cues of {}", r.rule_id)
            }
        };
        Ok(VerifierVerdict {
            concrete,
            governs_a: ga,
            governs_b: gb,
            score_a: if ga { 1.0 } else { 0.0 },
            score_b: if gb { 1.0 } else { 0.0 },
            rationale_a: why(ga, a),
            rationale_b: why(gb, b),
        })
    }
}

fn call<R: serde::de::DeserializeOwned>(cmd: &str, task: &str, mut body: serde_json::Value) -> Result<R, AdapterError> {
    body["task"] = serde_json::Value::from(task);
    exec_json(cmd, &body)
}

pub struct ExecWitnessAdapter(pub String);

#[derive(Deserialize)]
struct SeedsResponse {
    seeds: Vec<String>,
}

#[derive(Deserialize)]
struct SuffixResponse {
    suffix: String,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

impl RetrievalAdapter for ExecWitnessAdapter {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, AdapterError> {
        let r: SeedsResponse = call(&self.0, "retrieve", serde_json::json!({ "query": query, "k": k }))?;
        Ok(r.seeds)
    }
}

impl SynthesisAdapter for ExecWitnessAdapter {
    fn elaborate(&self, seed: &str, req: &SynthesisRequest) -> Result<String, AdapterError> {
        let r: SuffixResponse = call(&self.0, "elaborate", serde_json::json!({ "seed": seed, "request": req }))?;
        Ok(r.suffix)
    }

    fn synthesize(&self, req: &SynthesisRequest) -> Result<String, AdapterError> {
        let r: TextResponse = call(&self.0, "synthesize", serde_json::json!({ "request": req }))?;
        Ok(r.text)
    }
}

impl VerifierAdapter for ExecWitnessAdapter {
    fn verify(&self, text: &str, a: &RuleContext, b: &RuleContext) -> Result<VerifierVerdict, AdapterError> {
        call(&self.0, "verify", serde_json::json!({ "text": text, "rule_a": a, "rule_b": b }))
    }
}

pub fn retrieval_for(endpoint: &Endpoint, default_corpus: &str) -> Result<Box<dyn RetrievalAdapter>, AdapterError> {
    Ok(match endpoint {
        Endpoint::Stub => Box::new(CorpusRetrieval::from_text(default_corpus)),
        Endpoint::Fixture(p) => Box::new(CorpusRetrieval::load(p)?),
        Endpoint::Exec(c) => Box::new(ExecWitnessAdapter(c.clone())),
    })
}

pub fn synthesis_for(endpoint: &Endpoint) -> Result<Box<dyn SynthesisAdapter>, AdapterError> {
    match endpoint {
        Endpoint::Stub => Ok(Box::new(StubSynthesis)),
        Endpoint::Exec(c) => Ok(Box::new(ExecWitnessAdapter(c.clone()))),
        Endpoint::Fixture(_) => Err(AdapterError::Endpoint("synthesis has no fixture form".into())),
    }
}

pub fn verifier_for(endpoint: &Endpoint) -> Result<Box<dyn VerifierAdapter>, AdapterError> {
    match endpoint {
        Endpoint::Stub => Ok(Box::new(StubVerifier::default())),
        Endpoint::Exec(c) => Ok(Box::new(ExecWitnessAdapter(c.clone()))),
        Endpoint::Fixture(_) => Err(AdapterError::Endpoint("verifier has no fixture form".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::compile;
    use crate::pyrule::parse_file;
    use crate::registry::builtin_registry;
    use crate::triage::{triage_policy, OverlapResolver, SolverLimits};

    const SRC: &str = r#"
@rule("r66")
def r66(ctx):
    if has_intent(ctx.msg, "nonself_image_request"):
        require(image_generate())

@rule("r67")
def r67(ctx):
    if has_intent(ctx.msg, "self_image_request"):
        forbid(image_generate())
"#;

    fn setup() -> (CandidatePair, BTreeMap<String, Clause>) {
        let reg = builtin_registry();
        let sets: Vec<_> = parse_file(SRC, &reg).unwrap().iter().map(|a| compile(a, &reg).unwrap()).collect();
        let r = triage_policy(&sets, &reg, &OverlapResolver::default(), &SolverLimits::default());
        let clauses = sets.iter().flat_map(|s| s.clauses.iter().map(|c| (c.clause_id.clone(), c.clone()))).collect();
        (r.candidates[0].clone(), clauses)
    }

    struct Failing;
    impl RetrievalAdapter for Failing {
        fn retrieve(&self, _: &str, _: usize) -> Result<Vec<String>, AdapterError> {
            Err(AdapterError::Failed("down".into()))
        }
    }

    #[test]
    fn queries_mention_both_intents() {
        let (pair, _) = setup();
        let w = &pair.witnesses[0];
        let q = derive_queries(&w.assignment, w);
        assert!(q.iter().any(|s| s == "nonself_image_request"));
        assert!(q.iter().any(|s| s == "self_image_request"));
        assert_eq!(q, derive_queries(&w.assignment, w));
    }

    #[test]
    fn cascade_escalates_and_stays_append_only() {
        let (pair, clauses) = setup();
        let corpus = CorpusRetrieval::from_text("Make an image request for a poster of a cat\nWhat is the weather?\n");
        let verifier = StubVerifier::default();
        let adapters = WitnessAdapters { retrieval: &corpus, synthesis: &StubSynthesis, verifier: &verifier };
        let (summary, log) = realize("p", &pair, &clauses, &BTreeMap::new(), &adapters, &WitnessBudget::default());
        assert_eq!(summary.status, RealizationStatus::Realized);
        let tiers: Vec<Tier> = log.iter().map(|r| r.tier).collect();
        assert!(tiers.windows(2).all(|w| w[0] <= w[1]), "{tiers:?}");
        assert_eq!(log[0].tier, Tier::Seed);
        assert!(!log[0].accepted);
        for r in &log {
            assert_eq!(r.accepted, r.concrete && r.governs_a && r.governs_b);
            match r.tier {
                Tier::Seed => assert_eq!(Some(&r.final_text), r.seed_text.as_ref()),
                Tier::Elaborated => assert!(r.final_text.starts_with(r.seed_text.as_deref().unwrap())),
                Tier::Synthesized => assert!(r.seed_text.is_none()),
            }
        }
        assert!(log.iter().any(|r| r.tier == Tier::Elaborated && r.accepted));
    }

    #[test]
    fn stop_rule_caps_accepted_witnesses() {
        let (pair, clauses) = setup();
        let corpus = CorpusRetrieval::from_text("image request number\n");
        let verifier = StubVerifier { accept_all: true };
        let adapters = WitnessAdapters { retrieval: &corpus, synthesis: &StubSynthesis, verifier: &verifier };
        let budget = WitnessBudget { synthesis_attempts: 50, ..WitnessBudget::default() };
        let (summary, log) = realize("p", &pair, &clauses, &BTreeMap::new(), &adapters, &budget);
        assert_eq!(summary.accepted, 10);
        assert_eq!(log.len(), 10);
    }

    #[test]
    fn rejecting_verifier_leaves_pair_unrealized() {
        struct No;
        impl VerifierAdapter for No {
            fn verify(&self, _: &str, _: &RuleContext, _: &RuleContext) -> Result<VerifierVerdict, AdapterError> {
                Ok(VerifierVerdict {
                    concrete: true,
                    governs_a: true,
                    governs_b: false,
                    score_a: 1.0,
                    score_b: 0.0,
                    rationale_a: String::new(),
                    rationale_b: String::new(),
                })
            }
        }
        let (pair, clauses) = setup();
        let corpus = CorpusRetrieval::new(vec![]);
        let adapters = WitnessAdapters { retrieval: &corpus, synthesis: &StubSynthesis, verifier: &No };
        let (summary, log) = realize("p", &pair, &clauses, &BTreeMap::new(), &adapters, &WitnessBudget::default());
        assert_eq!(summary.status, RealizationStatus::Unrealized);
        assert!(!log.is_empty() && log.iter().all(|r| !r.accepted));
    }

    #[test]
    fn adapter_failure_flags_incomplete() {
        let (pair, clauses) = setup();
        let v = StubVerifier::default();
        let adapters = WitnessAdapters { retrieval: &Failing, synthesis: &StubSynthesis, verifier: &v };
        let (summary, _) = realize("p", &pair, &clauses, &BTreeMap::new(), &adapters, &WitnessBudget::default());
        assert!(summary.incomplete);
    }

    #[test]
    fn zero_time_budget_makes_no_attempts() {
        let (pair, clauses) = setup();
        let v = StubVerifier::default();
        let corpus = CorpusRetrieval::new(vec!["image".into()]);
        let adapters = WitnessAdapters { retrieval: &corpus, synthesis: &StubSynthesis, verifier: &v };
        let budget = WitnessBudget { max_seconds: 0.0, ..WitnessBudget::default() };
        let (summary, log) = realize("p", &pair, &clauses, &BTreeMap::new(), &adapters, &budget);
        assert!(log.is_empty());
        assert_eq!(summary.status, RealizationStatus::Unrealized);
    }

    #[test]
    fn acceptance_is_the_conjunction() {
        let v = |c, a, b| VerifierVerdict {
            concrete: c,
            governs_a: a,
            governs_b: b,
            score_a: 0.0,
            score_b: 0.0,
            rationale_a: String::new(),
            rationale_b: String::new(),
        };
        for mask in 0..8u8 {
            let (c, a, b) = (mask & 1 == 1, mask & 2 == 2, mask & 4 == 4);
            assert_eq!(v(c, a, b).accepts(), mask == 7);
        }
    }
}
