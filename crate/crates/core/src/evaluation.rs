//! Subject rollouts over accepted witnesses and post-generation judging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::{exec_json, stable_hash, with_retries, AdapterError, CallCounter, Endpoint};
use crate::store::RuleRecord;
use crate::witness::WitnessRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "POT")]
    Pot,
    #[serde(rename = "TAH")]
    Tah,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Pot => "POT",
            Regime::Tah => "TAH",
        })
    }
}

impl FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pot" => Ok(Regime::Pot),
            "tah" => Ok(Regime::Tah),
            _ => Err(format!("unknown regime `{s}`; expected pot or tah")),
        }
    }
}

/// An evaluation cell α = (model, policy, regime).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub model_id: String,
    pub policy_id: String,
    pub regime: Regime,
}

/// One tool call in a TAH action trace with its stubbed observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolStep {
    pub tool: String,
    pub args: serde_json::Value,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Text { text: String },
    Trace { steps: Vec<ToolStep> },
}

/// Gate labels H (governs) and L (judgeable) for both rules, plus
/// compliance J only when all four gates hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub h_a: bool,
    pub h_b: bool,
    pub l_a: bool,
    pub l_b: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_a: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_b: Option<bool>,
}

impl Labels {
    pub fn gates(&self) -> bool {
        self.h_a && self.h_b && self.l_a && self.l_b
    }

    /// J present iff all four gates hold.
    pub fn is_consistent(&self) -> bool {
        let has_j = self.j_a.is_some() && self.j_b.is_some();
        let no_j = self.j_a.is_none() && self.j_b.is_none();
        if self.gates() {
            has_j
        } else {
            no_j
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Judged,
    Refusal,
    Malformed,
    JudgeError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub witness_id: String,
    pub rule_a: String,
    pub rule_b: String,
    pub cell: Cell,
    pub rollout_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Response>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
    pub status: TrialStatus,
    /// Judge payload as returned, kept verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_payload: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    /// Membership in the post-generation support set.
    pub fn in_support(&self) -> bool {
        self.status == TrialStatus::Judged && self.labels.is_some_and(|l| l.gates())
    }
}

pub fn trial_id(witness_id: &str, rollout_index: u32, cell: &Cell) -> String {
    let h = stable_hash(&[
        witness_id,
        &rollout_index.to_string(),
        &cell.model_id,
        &cell.policy_id,
        &cell.regime.to_string(),
    ]);
    format!("t{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRequest {
    pub model_id: String,
    pub policy_text: String,
    pub witness_text: String,
    pub temperature: f64,
    pub rollout_index: u32,
}

pub trait SubjectAdapter {
    fn respond(&self, req: &SubjectRequest) -> Result<String, AdapterError>;
}

pub trait ToolHarnessAdapter {
    fn act(&self, req: &SubjectRequest, tools: &[String]) -> Result<Vec<ToolStep>, AdapterError>;
}

/// Self-contained judge packet: the witness, the output, and the quoted
/// source rules. Never the PyRule encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePacket {
    pub witness_text: String,
    pub response: Response,
    pub quote_a: String,
    pub gist_a: String,
    pub quote_b: String,
    pub gist_b: String,
}

pub trait JudgeAdapter {
    /// Returns the raw judge payload; the runner validates its schema.
    fn judge(&self, packet: &JudgePacket) -> Result<serde_json::Value, AdapterError>;
}

/// Schema the judge payload must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutput {
    pub status: JudgeStatus,
    #[serde(flatten)]
    pub labels: Labels,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeStatus {
    Judged,
    Refusal,
    Malformed,
}

fn parse_judge(payload: &serde_json::Value) -> Result<JudgeOutput, String> {
    let out: JudgeOutput = serde_json::from_value(payload.clone()).map_err(|e| e.to_string())?;
    if !out.labels.is_consistent() {
        return Err("compliance labels must be present exactly when all four gates hold".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub k: u32,
    pub temperature: f64,
    /// Transport attempts per subject or judge call.
    pub attempts: u32,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { k: 5, temperature: 1.0, attempts: 3 }
    }
}

pub struct EvalAdapters<'a> {
    pub subject: &'a dyn SubjectAdapter,
    pub harness: &'a dyn ToolHarnessAdapter,
    pub judge: &'a dyn JudgeAdapter,
    pub tools: Vec<String>,
    pub subject_calls: CallCounter,
    pub judge_calls: CallCounter,
}

impl<'a> EvalAdapters<'a> {
    pub fn new(subject: &'a dyn SubjectAdapter, harness: &'a dyn ToolHarnessAdapter, judge: &'a dyn JudgeAdapter) -> Self {
        EvalAdapters {
            subject,
            harness,
            judge,
            tools: default_tools(),
            subject_calls: CallCounter::default(),
            judge_calls: CallCounter::default(),
        }
    }
}

pub fn default_tools() -> Vec<String> {
    ["read_file", "edit_file", "run_shell", "web_search", "image_generate", "ask_clarify"]
        .map(String::from)
        .to_vec()
}

/// Judges one output: transport retries are bounded by `attempts`, and a
/// schema-invalid payload gets exactly one re-ask.
pub fn judge_trial(
    packet: &JudgePacket,
    judge: &dyn JudgeAdapter,
    attempts: u32,
    calls: &CallCounter,
) -> Result<(JudgeOutput, serde_json::Value), String> {
    let mut last = String::new();
    for _ in 0..2 {
        let payload = with_retries(attempts, || {
            calls.bump();
            judge.judge(packet)
        })
        .map_err(|e| format!("judge transport: {e}"))?;
        match parse_judge(&payload) {
            Ok(out) => return Ok((out, payload)),
            Err(e) => last = format!("schema-invalid judge output: {e}"),
        }
    }
    Err(last)
}

/// Runs K rollouts per accepted witness in one cell and judges each once.
/// Trials whose ids are in `done` are skipped, which makes reruns resume.
pub fn run_cell(
    witnesses: &[WitnessRecord],
    rules: &BTreeMap<String, RuleRecord>,
    policy_text: &str,
    cell: &Cell,
    params: &EvalParams,
    adapters: &EvalAdapters<'_>,
    done: &BTreeSet<String>,
) -> Vec<TrialRecord> {
    let mut out = Vec::new();
    for w in witnesses.iter().filter(|w| w.accepted && w.policy_id == cell.policy_id) {
        for r in 0..params.k {
            let id = trial_id(&w.witness_id, r, cell);
            if done.contains(&id) {
                continue;
            }
            let mut trial = TrialRecord {
                trial_id: id,
                witness_id: w.witness_id.clone(),
                rule_a: w.rule_a.clone(),
                rule_b: w.rule_b.clone(),
                cell: cell.clone(),
                rollout_index: r,
                response: None,
                labels: None,
                status: TrialStatus::Malformed,
                judge_payload: None,
                error: None,
            };
            let req = SubjectRequest {
                model_id: cell.model_id.clone(),
                policy_text: policy_text.to_string(),
                witness_text: w.final_text.clone(),
                temperature: params.temperature,
                rollout_index: r,
            };
            let response = with_retries(params.attempts, || {
                adapters.subject_calls.bump();
                match cell.regime {
                    Regime::Pot => adapters.subject.respond(&req).map(|text| Response::Text { text }),
                    Regime::Tah => adapters.harness.act(&req, &adapters.tools).map(|steps| Response::Trace { steps }),
                }
            });
            let response = match response {
                Ok(resp) => resp,
                Err(e) => {
                    trial.error = Some(format!("subject: {e}"));
                    out.push(trial);
                    continue;
                }
            };
            let rule = |id: &str| rules.get(id).map(|r| (r.quote.clone(), r.gist.clone())).unwrap_or_default();
            let ((quote_a, gist_a), (quote_b, gist_b)) = (rule(&w.rule_a), rule(&w.rule_b));
            let packet = JudgePacket { witness_text: w.final_text.clone(), response: response.clone(), quote_a, gist_a, quote_b, gist_b };
            trial.response = Some(response);
            match judge_trial(&packet, adapters.judge, params.attempts, &adapters.judge_calls) {
                Ok((judged, payload)) => {
                    trial.labels = Some(judged.labels);
                    trial.status = match judged.status {
                        JudgeStatus::Judged => TrialStatus::Judged,
                        JudgeStatus::Refusal => TrialStatus::Refusal,
                        JudgeStatus::Malformed => TrialStatus::Malformed,
                    };
                    trial.judge_payload = Some(payload);
                }
                Err(e) => {
                    trial.status = TrialStatus::JudgeError;
                    trial.error = Some(e);
                }
            }
            out.push(trial);
        }
    }
    out
}

const REFUSAL: &str = "I can't help with that request.";

/// Deterministic offline subject; about one rollout in sixteen refuses.
pub struct StubSubject;

impl SubjectAdapter for StubSubject {
    fn respond(&self, req: &SubjectRequest) -> Result<String, AdapterError> {
        let h = stable_hash(&[&req.model_id, &req.witness_text, &req.rollout_index.to_string()]);
        Ok(if h.is_multiple_of(16) {
            REFUSAL.to_string()
        } else {
            format!("[{}] Handling the request with plan {:04x}.", req.model_id, h & 0xffff)
        })
    }
}

impl ToolHarnessAdapter for StubSubject {
    fn act(&self, req: &SubjectRequest, tools: &[String]) -> Result<Vec<ToolStep>, AdapterError> {
        let h = stable_hash(&[&req.model_id, &req.witness_text, &req.rollout_index.to_string(), "tah"]);
        if tools.is_empty() {
            return Ok(Vec::new());
        }
        let n = 1 + (h % 3) as usize;
        Ok((0..n)
            .map(|i| {
                let tool = tools[((h >> (8 * i)) as usize) % tools.len()].clone();
                ToolStep { tool, args: serde_json::json!({ "step": i }), observation: "ok".into() }
            })
            .collect())
    }
}

/// Deterministic offline judge. Each gate fails with probability about
/// 1/8 and compliance bits come from the response hash.
pub struct StubJudge;

impl JudgeAdapter for StubJudge {
    fn judge(&self, p: &JudgePacket) -> Result<serde_json::Value, AdapterError> {
        let body = serde_json::to_string(&p.response)?;
        if matches!(&p.response, Response::Text { text } if text == REFUSAL) {
            return Ok(serde_json::json!({
                "status": "refusal", "h_a": true, "h_b": true, "l_a": false, "l_b": false,
                "rationale": "provider refusal"
            }));
        }
        let h = stable_hash(&[&p.witness_text, &body, &p.quote_a, &p.quote_b]);
        let gate = |i: u32| (h >> (3 * i)) & 7 != 0;
        let mut labels = Labels { h_a: gate(0), h_b: gate(1), l_a: gate(2), l_b: gate(3), j_a: None, j_b: None };
        if labels.gates() {
            labels.j_a = Some(h >> 40 & 1 == 1);
            labels.j_b = Some(h >> 41 & 1 == 1);
        }
        let mut v = serde_json::to_value(labels)?;
        v["status"] = "judged".into();
        v["rationale"] = "stub judgment".into();
        Ok(v)
    }
}

pub struct ExecEvalAdapter(pub String);

impl SubjectAdapter for ExecEvalAdapter {
    fn respond(&self, req: &SubjectRequest) -> Result<String, AdapterError> {
        #[derive(Deserialize)]
        struct R {
            text: String,
        }
        let r: R = exec_json(&self.0, &serde_json::json!({ "task": "respond", "request": req }))?;
        Ok(r.text)
    }
}

impl ToolHarnessAdapter for ExecEvalAdapter {
    fn act(&self, req: &SubjectRequest, tools: &[String]) -> Result<Vec<ToolStep>, AdapterError> {
        #[derive(Deserialize)]
        struct R {
            steps: Vec<ToolStep>,
        }
        let r: R = exec_json(&self.0, &serde_json::json!({ "task": "act", "request": req, "tools": tools }))?;
        Ok(r.steps)
    }
}

impl JudgeAdapter for ExecEvalAdapter {
    fn judge(&self, packet: &JudgePacket) -> Result<serde_json::Value, AdapterError> {
        exec_json(&self.0, &serde_json::json!({ "task": "judge", "packet": packet }))
    }
}

fn no_fixture(what: &str) -> AdapterError {
    AdapterError::Endpoint(format!("{what} has no fixture form"))
}

pub fn subject_for(e: &Endpoint) -> Result<Box<dyn SubjectAdapter>, AdapterError> {
    match e {
        Endpoint::Stub => Ok(Box::new(StubSubject)),
        Endpoint::Exec(c) => Ok(Box::new(ExecEvalAdapter(c.clone()))),
        Endpoint::Fixture(_) => Err(no_fixture("subject")),
    }
}

pub fn harness_for(e: &Endpoint) -> Result<Box<dyn ToolHarnessAdapter>, AdapterError> {
    match e {
        Endpoint::Stub => Ok(Box::new(StubSubject)),
        Endpoint::Exec(c) => Ok(Box::new(ExecEvalAdapter(c.clone()))),
        Endpoint::Fixture(_) => Err(no_fixture("tool harness")),
    }
}

pub fn judge_for(e: &Endpoint) -> Result<Box<dyn JudgeAdapter>, AdapterError> {
    match e {
        Endpoint::Stub => Ok(Box::new(StubJudge)),
        Endpoint::Exec(c) => Ok(Box::new(ExecEvalAdapter(c.clone()))),
        Endpoint::Fixture(_) => Err(no_fixture("judge")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::witness::Tier;
    use std::cell::Cell as StdCell;

    fn witness(id: &str, accepted: bool) -> WitnessRecord {
        WitnessRecord {
            witness_id: id.into(),
            policy_id: "p".into(),
            rule_a: "r1".into(),
            rule_b: "r2".into(),
            assignment_ref: "r1#0::r2#0".into(),
            tier: Tier::Synthesized,
            seed_text: None,
            suffix_text: None,
            final_text: format!("please do {id}"),
            verifier_scores: (1.0, 1.0),
            verifier_rationales: Default::default(),
            concrete: true,
            governs_a: true,
            governs_b: true,
            accepted,
            construction_time: 0.0,
            provenance: None,
        }
    }

    fn cell(regime: Regime) -> Cell {
        Cell { model_id: "m".into(), policy_id: "p".into(), regime }
    }

    #[test]
    fn three_witnesses_five_rollouts_fifteen_trials() {
        let ws: Vec<_> = ["a", "b", "c"].iter().map(|i| witness(i, true)).chain([witness("x", false)]).collect();
        let ad = EvalAdapters::new(&StubSubject, &StubSubject, &StubJudge);
        let trials = run_cell(&ws, &BTreeMap::new(), "policy", &cell(Regime::Pot), &EvalParams::default(), &ad, &BTreeSet::new());
        assert_eq!(trials.len(), 15);
        assert_eq!(ad.subject_calls.get(), 15);
        let ids: BTreeSet<_> = trials.iter().map(|t| t.trial_id.clone()).collect();
        assert_eq!(ids.len(), 15);
        for t in &trials {
            assert!(t.labels.unwrap().is_consistent());
        }
        // Resuming with every id done produces nothing new.
        let again = run_cell(&ws, &BTreeMap::new(), "policy", &cell(Regime::Pot), &EvalParams::default(), &ad, &ids);
        assert!(again.is_empty());
    }

    #[test]
    fn tah_trials_carry_traces() {
        let ad = EvalAdapters::new(&StubSubject, &StubSubject, &StubJudge);
        let trials = run_cell(&[witness("a", true)], &BTreeMap::new(), "", &cell(Regime::Tah), &EvalParams::default(), &ad, &BTreeSet::new());
        assert!(trials.iter().all(|t| matches!(t.response, Some(Response::Trace { .. }))));
        assert!(trials.iter().all(|t| t.cell.regime == Regime::Tah));
    }

    struct Flaky(StdCell<u32>);
    impl JudgeAdapter for Flaky {
        fn judge(&self, _: &JudgePacket) -> Result<serde_json::Value, AdapterError> {
            self.0.set(self.0.get() + 1);
            Ok(serde_json::json!({ "status": "judged", "h_a": true }))
        }
    }

    #[test]
    fn schema_invalid_judge_gets_one_reask() {
        let j = Flaky(StdCell::new(0));
        let ad = EvalAdapters::new(&StubSubject, &StubSubject, &j);
        let p = EvalParams { k: 1, ..EvalParams::default() };
        let trials = run_cell(&[witness("a", true)], &BTreeMap::new(), "", &cell(Regime::Pot), &p, &ad, &BTreeSet::new());
        assert_eq!(trials[0].status, TrialStatus::JudgeError);
        assert_eq!(j.0.get(), 2);
        assert!(!trials[0].in_support());
    }

    struct Down;
    impl SubjectAdapter for Down {
        fn respond(&self, _: &SubjectRequest) -> Result<String, AdapterError> {
            Err(AdapterError::Failed("timeout".into()))
        }
    }

    #[test]
    fn subject_exhaustion_is_malformed() {
        let ad = EvalAdapters::new(&Down, &StubSubject, &StubJudge);
        let p = EvalParams { k: 2, attempts: 3, ..EvalParams::default() };
        let trials = run_cell(&[witness("a", true)], &BTreeMap::new(), "", &cell(Regime::Pot), &p, &ad, &BTreeSet::new());
        assert!(trials.iter().all(|t| t.status == TrialStatus::Malformed));
        assert_eq!(ad.subject_calls.get(), 6);
    }

    #[test]
    fn refusals_are_judged_out_of_support() {
        let p = JudgePacket {
            witness_text: "w".into(),
            response: Response::Text { text: REFUSAL.into() },
            quote_a: String::new(),
            gist_a: String::new(),
            quote_b: String::new(),
            gist_b: String::new(),
        };
        let (out, _) = judge_trial(&p, &StubJudge, 1, &CallCounter::default()).unwrap();
        assert_eq!(out.status, JudgeStatus::Refusal);
        assert!(!out.labels.l_a);
    }

    #[test]
    fn trial_ids_depend_on_every_component() {
        let c = cell(Regime::Pot);
        let base = trial_id("w", 0, &c);
        assert_eq!(base, trial_id("w", 0, &c));
        assert_ne!(base, trial_id("w", 1, &c));
        assert_ne!(base, trial_id("v", 0, &c));
        assert_ne!(base, trial_id("w", 0, &cell(Regime::Tah)));
    }
}
