//! Stage orchestration: ingest, compile, triage, realize, evaluate, report.
//!
//! Every stage records the sha256 of its inputs and outputs in a run
//! manifest. A stage is skipped when its input hash is unchanged and its
//! recorded outputs are intact, unless forced.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapters::Endpoint;
use crate::analytics::{self, Format, ResolutionProfile, YieldSummary};
use crate::compiler::{compile, Clause, ClauseRecord, ClauseSet};
use crate::evaluation::{self, Cell, EvalAdapters, EvalParams, Regime, TrialRecord};
use crate::pyrule::{parse_file, validate_vocabulary_use};
use crate::registry::{builtin_registry, SurfaceRegistry};
use crate::store::{self, read_jsonl, write_jsonl, write_text, PolicyStore, RuleRecord};
use crate::triage::{triage_policy, CandidatePair, OverlapResolver, SolverLimits, TriageStats};
use crate::witness::{self, WitnessAdapters, WitnessBudget, WitnessRecord};

pub const TOOL_VERSION: &str = concat!("wire ", env!("CARGO_PKG_VERSION"));

/// Seed corpus used by the stub retrieval adapter when a policy names none.
pub const DEFAULT_CORPUS: &str = include_str!("../fixtures/mini-swe/corpus.txt");

/// The synthetic policy bundled for offline runs.
pub const BUNDLED: &[(&str, &str)] = &[
    ("policy.txt", include_str!("../fixtures/mini-swe/policy.txt")),
    ("rules.jsonl", include_str!("../fixtures/mini-swe/rules.jsonl")),
    ("rules.pyrule", include_str!("../fixtures/mini-swe/rules.pyrule")),
    ("corpus.txt", include_str!("../fixtures/mini-swe/corpus.txt")),
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Compile,
    Triage,
    Realize,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Compile, Stage::Triage, Stage::Realize, Stage::Evaluate, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Compile => "compile",
            Stage::Triage => "triage",
            Stage::Realize => "realize",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyInput {
    pub id: String,
    pub text: PathBuf,
    /// Verified rule records; when absent the extractor adapter runs.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    pub pyrule: PathBuf,
    /// Seed corpus for the stub retrieval adapter.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub extractor: Endpoint,
    pub overlap: Endpoint,
    pub retrieval: Endpoint,
    pub synthesis: Endpoint,
    pub verifier: Endpoint,
    pub subject: Endpoint,
    pub harness: Endpoint,
    pub judge: Endpoint,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            extractor: Endpoint::Stub,
            overlap: Endpoint::Stub,
            retrieval: Endpoint::Stub,
            synthesis: Endpoint::Stub,
            verifier: Endpoint::Stub,
            subject: Endpoint::Stub,
            harness: Endpoint::Stub,
            judge: Endpoint::Stub,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_atoms: usize,
    pub max_theory_steps: u64,
    pub max_models: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let l = SolverLimits::default();
        SolverConfig { max_atoms: l.max_atoms, max_theory_steps: l.max_theory_steps, max_models: l.max_models }
    }
}

impl SolverConfig {
    pub fn limits(&self) -> SolverLimits {
        SolverLimits { max_atoms: self.max_atoms, max_theory_steps: self.max_theory_steps, max_models: self.max_models }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WitnessConfig {
    pub max_witnesses: usize,
    pub budget_seconds: f64,
    pub top_k: usize,
    pub synthesis_attempts: usize,
    pub verifier_attempts: u32,
}

impl Default for WitnessConfig {
    fn default() -> Self {
        let b = WitnessBudget::default();
        WitnessConfig {
            max_witnesses: b.max_witnesses,
            budget_seconds: b.max_seconds,
            top_k: b.top_k,
            synthesis_attempts: b.synthesis_attempts,
            verifier_attempts: b.verifier_attempts,
        }
    }
}

impl WitnessConfig {
    pub fn budget(&self) -> WitnessBudget {
        WitnessBudget {
            max_witnesses: self.max_witnesses,
            max_seconds: self.budget_seconds,
            top_k: self.top_k,
            synthesis_attempts: self.synthesis_attempts,
            verifier_attempts: self.verifier_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub models: Vec<String>,
    pub regimes: Vec<Regime>,
    /// Models that also run under TAH; all models when absent.
    pub tah_models: Option<Vec<String>>,
    pub k: u32,
    pub temperature: f64,
    pub attempts: u32,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let p = EvalParams::default();
        EvaluationConfig {
            models: vec!["stub-alpha".into(), "stub-beta".into(), "stub-gamma".into()],
            regimes: vec![Regime::Pot, Regime::Tah],
            tah_models: Some(vec!["stub-beta".into(), "stub-gamma".into()]),
            k: p.k,
            temperature: p.temperature,
            attempts: p.attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub formats: Vec<String>,
    /// Model subset for the POT-TAH comparison; defaults to the TAH models.
    pub matched_models: Option<Vec<String>>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { formats: vec!["txt".into(), "csv".into()], matched_models: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub registry: Option<PathBuf>,
    pub policies: Vec<PolicyInput>,
    pub adapters: AdapterConfig,
    pub solver: SolverConfig,
    pub witness: WitnessConfig,
    pub evaluation: EvaluationConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("wire-out"),
            registry: None,
            policies: Vec::new(),
            adapters: AdapterConfig::default(),
            solver: SolverConfig::default(),
            witness: WitnessConfig::default(),
            evaluation: EvaluationConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.output_dir);
        if let Some(r) = cfg.registry.as_mut() {
            fix(r);
        }
        for p in &mut cfg.policies {
            fix(&mut p.text);
            fix(&mut p.pyrule);
            if let Some(r) = p.rules.as_mut() {
                fix(r);
            }
            if let Some(c) = p.corpus.as_mut() {
                fix(c);
            }
        }
        for e in [
            &mut cfg.adapters.extractor,
            &mut cfg.adapters.overlap,
            &mut cfg.adapters.retrieval,
            &mut cfg.adapters.synthesis,
            &mut cfg.adapters.verifier,
            &mut cfg.adapters.subject,
            &mut cfg.adapters.harness,
            &mut cfg.adapters.judge,
        ] {
            if let Endpoint::Fixture(p) = e {
                fix(p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Writes the bundled policy under `dir` and returns a config for it.
    pub fn bundled(dir: &Path, output_dir: PathBuf) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?;
        for (name, body) in BUNDLED {
            let path = dir.join(name);
            let same = fs::read_to_string(&path).is_ok_and(|old| old == *body);
            if !same {
                fs::write(&path, body).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(PipelineConfig {
            output_dir,
            policies: vec![PolicyInput {
                id: "mini-swe".into(),
                text: dir.join("policy.txt"),
                rules: Some(dir.join("rules.jsonl")),
                pyrule: dir.join("rules.pyrule"),
                corpus: Some(dir.join("corpus.txt")),
            }],
            ..PipelineConfig::default()
        })
    }

    pub fn stub_all(&mut self) {
        self.adapters = AdapterConfig::default();
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.policies.is_empty() {
            return err("no policies configured".into());
        }
        let mut ids = BTreeSet::new();
        for p in &self.policies {
            if p.id.is_empty() || p.id.contains(['/', '\\']) || p.id.starts_with('.') {
                return err(format!("policy id `{}` is not a valid directory name", p.id));
            }
            if !ids.insert(&p.id) {
                return err(format!("policy `{}` listed twice", p.id));
            }
        }
        if self.evaluation.k == 0 {
            return err("evaluation.k must be at least 1".into());
        }
        if self.evaluation.models.is_empty() {
            return err("evaluation.models is empty".into());
        }
        for f in &self.report.formats {
            f.parse::<Format>().map_err(PipelineError::Config)?;
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<SurfaceRegistry, PipelineError> {
        let mut reg = builtin_registry();
        if let Some(path) = &self.registry {
            reg.extend_from_manifest(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest { tool_version: TOOL_VERSION.to_string(), stages: BTreeMap::new() }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Self {
        fs::read_to_string(path).ok().and_then(|s| serde_json::from_str(&s).ok()).unwrap_or_default()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<(Stage, StageStatus)>,
    pub output_dir: PathBuf,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub registry: SurfaceRegistry,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    pub force: bool,
}

type StageResult<T> = Result<T, String>;

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

impl Pipeline {
    pub fn new(config: PipelineConfig, manifest_path: Option<PathBuf>, force: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        let registry = config.registry()?;
        let manifest_path = manifest_path.unwrap_or_else(|| config.output_dir.join("manifest.json"));
        let manifest = RunManifest::load(&manifest_path);
        Ok(Pipeline { config, registry, manifest_path, manifest, force })
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.config.output_dir).unwrap_or(p).display().to_string()
    }

    fn policy_paths(&self, stage: &str, file: &str) -> Vec<PathBuf> {
        self.config.policies.iter().map(|p| self.out(&format!("{stage}/{}/{file}", p.id))).collect()
    }

    fn inputs_for(&self, stage: Stage) -> (Vec<PathBuf>, String) {
        let c = &self.config;
        let registry: Vec<PathBuf> = c.registry.iter().cloned().collect();
        match stage {
            Stage::Ingest => {
                let mut v = Vec::new();
                for p in &c.policies {
                    v.push(p.text.clone());
                    v.extend(p.rules.clone());
                }
                (v, fingerprint(&(&c.policies, &c.adapters.extractor)))
            }
            Stage::Compile => {
                let mut v = self.policy_paths("store", "rules.jsonl");
                v.extend(c.policies.iter().map(|p| p.pyrule.clone()));
                v.extend(registry);
                (v, fingerprint(&c.policies))
            }
            Stage::Triage => {
                let mut v = self.policy_paths("compile", "clauses.jsonl");
                v.extend(registry);
                (v, fingerprint(&(&c.solver, &c.adapters.overlap)))
            }
            Stage::Realize => {
                let mut v = self.policy_paths("triage", "candidates.jsonl");
                v.extend(self.policy_paths("compile", "clauses.jsonl"));
                v.extend(self.policy_paths("store", "rules.jsonl"));
                v.extend(c.policies.iter().filter_map(|p| p.corpus.clone()));
                let a = &c.adapters;
                (v, fingerprint(&(&c.witness, &a.retrieval, &a.synthesis, &a.verifier)))
            }
            Stage::Evaluate => {
                let mut v = self.policy_paths("realize", "witnesses.jsonl");
                v.extend(self.policy_paths("store", "policy.txt"));
                v.extend(self.policy_paths("store", "rules.jsonl"));
                let a = &c.adapters;
                (v, fingerprint(&(&c.evaluation, &a.subject, &a.harness, &a.judge)))
            }
            Stage::Report => {
                let mut v = vec![self.out("evaluate/trials.jsonl")];
                v.extend(self.policy_paths("triage", "stats.json"));
                v.extend(self.policy_paths("realize", "witnesses.jsonl"));
                (v, fingerprint(&(&c.report, &c.evaluation.tah_models)))
            }
        }
    }

    fn input_hash(&self, stage: Stage, inputs: &[PathBuf], fingerprint: &str) -> Result<(String, BTreeMap<String, String>), String> {
        let mut h = Sha256::new();
        h.update(TOOL_VERSION.as_bytes());
        h.update(stage.name().as_bytes());
        h.update(fingerprint.as_bytes());
        let mut files = BTreeMap::new();
        for p in inputs {
            let d = sha256_file(p).map_err(|e| format!("{}: {e}", p.display()))?;
            h.update(d.as_bytes());
            files.insert(self.rel(p), d);
        }
        Ok((hex::encode(h.finalize()), files))
    }

    fn is_current(&self, stage: Stage, hash: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(&stage) else { return false };
        rec.input_hash == hash
            && !rec.outputs.is_empty()
            && rec.outputs.iter().all(|(p, d)| sha256_file(&self.out(p)).is_ok_and(|x| &x == d))
    }

    /// Runs `stage` unless its manifest entry is current.
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageStatus, PipelineError> {
        let fail = |message: String| PipelineError::Stage { stage, message };
        let (inputs, fingerprint) = self.inputs_for(stage);
        let (hash, input_files) = self.input_hash(stage, &inputs, &fingerprint).map_err(fail)?;
        if !self.force && self.is_current(stage, &hash) {
            return Ok(StageStatus::Skipped);
        }
        let outputs = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Compile => self.compile(),
            Stage::Triage => self.triage(),
            Stage::Realize => self.realize(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
        .map_err(fail)?;
        let mut out_files = BTreeMap::new();
        for p in outputs {
            let d = sha256_file(&p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
            out_files.insert(self.rel(&p), d);
        }
        self.manifest.tool_version = TOOL_VERSION.to_string();
        self.manifest.stages.insert(stage, StageRecord { input_hash: hash, inputs: input_files, outputs: out_files });
        self.manifest.save(&self.manifest_path).map_err(|e| fail(format!("manifest: {e}")))?;
        Ok(StageStatus::Ran)
    }

    pub fn run(&mut self, stages: &[Stage]) -> Result<RunSummary, PipelineError> {
        let mut done = Vec::new();
        for &st in stages {
            done.push((st, self.run_stage(st)?));
        }
        Ok(RunSummary { stages: done, output_dir: self.config.output_dir.clone() })
    }

    fn ingest(&self) -> StageResult<Vec<PathBuf>> {
        let mut st = PolicyStore::default();
        let mut outputs = Vec::new();
        let extractor = store::extractor_for(&self.config.adapters.extractor);
        for p in &self.config.policies {
            let mut policy = store::load_policy(&p.text, Some(&p.id)).map_err(s)?;
            let rules = match &p.rules {
                Some(path) => store::load_rules(&mut policy, path).map_err(s)?,
                None => {
                    let ex = store::extract_rules(&mut policy, extractor.as_ref(), 3).map_err(s)?;
                    let path = self.out(&format!("store/{}/rejections.jsonl", p.id));
                    write_jsonl(&path, &ex.rejections).map_err(s)?;
                    outputs.push(path);
                    ex.rules
                }
            };
            st.insert(policy, rules).map_err(s)?;
        }
        st.persist(&self.out("store")).map_err(s)?;
        outputs.extend(self.policy_paths("store", "policy.txt"));
        outputs.extend(self.policy_paths("store", "rules.jsonl"));
        Ok(outputs)
    }

    fn compile(&self) -> StageResult<Vec<PathBuf>> {
        let mut outputs = Vec::new();
        for p in &self.config.policies {
            let rules: Vec<RuleRecord> = read_jsonl(&self.out(&format!("store/{}/rules.jsonl", p.id))).map_err(s)?;
            let sets = compile_file(&p.pyrule, &self.registry, Some(&rules))?;
            let records: Vec<ClauseRecord> = sets.iter().flat_map(|s| s.clauses.iter().map(ClauseRecord::from)).collect();
            let path = self.out(&format!("compile/{}/clauses.jsonl", p.id));
            write_jsonl(&path, &records).map_err(s)?;
            outputs.push(path);
        }
        Ok(outputs)
    }

    fn triage(&self) -> StageResult<Vec<PathBuf>> {
        let resolver = OverlapResolver::from_endpoint(Some(&self.config.adapters.overlap)).map_err(s)?;
        let mut outputs = Vec::new();
        for p in &self.config.policies {
            let sets = load_clause_sets(&self.out(&format!("compile/{}/clauses.jsonl", p.id)))?;
            let r = triage_policy(&sets, &self.registry, &resolver, &self.config.solver.limits());
            let dir = self.out(&format!("triage/{}", p.id));
            write_jsonl(&dir.join("candidates.jsonl"), &r.candidates).map_err(s)?;
            write_jsonl(&dir.join("verdicts.jsonl"), &r.verdicts).map_err(s)?;
            write_text(&dir.join("stats.json"), &(serde_json::to_string_pretty(&r.stats).map_err(s)? + "\n")).map_err(s)?;
            outputs.extend(["candidates.jsonl", "verdicts.jsonl", "stats.json"].map(|f| dir.join(f)));
        }
        Ok(outputs)
    }

    fn realize(&self) -> StageResult<Vec<PathBuf>> {
        let a = &self.config.adapters;
        let synthesis = witness::synthesis_for(&a.synthesis).map_err(s)?;
        let verifier = witness::verifier_for(&a.verifier).map_err(s)?;
        let mut outputs = Vec::new();
        for p in &self.config.policies {
            let corpus = match &p.corpus {
                Some(c) => fs::read_to_string(c).map_err(|e| format!("{}: {e}", c.display()))?,
                None => DEFAULT_CORPUS.to_string(),
            };
            let retrieval = witness::retrieval_for(&a.retrieval, &corpus).map_err(s)?;
            let adapters = WitnessAdapters { retrieval: retrieval.as_ref(), synthesis: synthesis.as_ref(), verifier: verifier.as_ref() };
            let candidates: Vec<CandidatePair> = read_jsonl(&self.out(&format!("triage/{}/candidates.jsonl", p.id))).map_err(s)?;
            let clauses = clause_index(&self.out(&format!("compile/{}/clauses.jsonl", p.id)))?;
            let rules = rule_index(&self.out(&format!("store/{}/rules.jsonl", p.id)))?;
            let mut log = Vec::new();
            let mut summaries = Vec::new();
            for pair in &candidates {
                let (summary, records) = witness::realize(&p.id, pair, &clauses, &rules, &adapters, &self.config.witness.budget());
                summaries.push(summary);
                log.extend(records);
            }
            let dir = self.out(&format!("realize/{}", p.id));
            write_jsonl(&dir.join("witnesses.jsonl"), &log).map_err(s)?;
            write_jsonl(&dir.join("realizations.jsonl"), &summaries).map_err(s)?;
            outputs.extend([dir.join("witnesses.jsonl"), dir.join("realizations.jsonl")]);
        }
        Ok(outputs)
    }

    fn evaluate(&self) -> StageResult<Vec<PathBuf>> {
        let a = &self.config.adapters;
        let e = &self.config.evaluation;
        let subject = evaluation::subject_for(&a.subject).map_err(s)?;
        let harness = evaluation::harness_for(&a.harness).map_err(s)?;
        let judge = evaluation::judge_for(&a.judge).map_err(s)?;
        let adapters = EvalAdapters::new(subject.as_ref(), harness.as_ref(), judge.as_ref());
        let params = EvalParams { k: e.k, temperature: e.temperature, attempts: e.attempts };
        let path = self.out("evaluate/trials.jsonl");
        let previous: Vec<TrialRecord> = if path.exists() && !self.force { read_jsonl(&path).map_err(s)? } else { Vec::new() };
        let mut by_id: BTreeMap<String, TrialRecord> = previous.into_iter().map(|t| (t.trial_id.clone(), t)).collect();
        let mut trials = Vec::new();
        for p in &self.config.policies {
            let witnesses: Vec<WitnessRecord> = read_jsonl(&self.out(&format!("realize/{}/witnesses.jsonl", p.id))).map_err(s)?;
            let policy_text = fs::read_to_string(self.out(&format!("store/{}/policy.txt", p.id))).map_err(s)?;
            let rules = rule_index(&self.out(&format!("store/{}/rules.jsonl", p.id)))?;
            for regime in &e.regimes {
                for model in &e.models {
                    if *regime == Regime::Tah && e.tah_models.as_ref().is_some_and(|t| !t.contains(model)) {
                        continue;
                    }
                    let cell = Cell { model_id: model.clone(), policy_id: p.id.clone(), regime: *regime };
                    // Expected ids for this cell; completed ones are reused.
                    let done: BTreeSet<String> = by_id.keys().cloned().collect();
                    let fresh = evaluation::run_cell(&witnesses, &rules, &policy_text, &cell, &params, &adapters, &done);
                    for w in witnesses.iter().filter(|w| w.accepted) {
                        for r in 0..e.k {
                            let id = evaluation::trial_id(&w.witness_id, r, &cell);
                            if let Some(t) = by_id.remove(&id) {
                                trials.push(t);
                            }
                        }
                    }
                    trials.extend(fresh);
                }
            }
        }
        trials.sort_by(|x, y| (&x.cell, &x.witness_id, x.rollout_index).cmp(&(&y.cell, &y.witness_id, y.rollout_index)));
        write_jsonl(&path, &trials).map_err(s)?;
        let calls = self.out("evaluate/calls.json");
        let counts = serde_json::json!({
            "subject_calls": adapters.subject_calls.get(),
            "judge_calls": adapters.judge_calls.get(),
        });
        write_text(&calls, &(serde_json::to_string_pretty(&counts).map_err(s)? + "\n")).map_err(s)?;
        Ok(vec![path])
    }

    fn report(&self) -> StageResult<Vec<PathBuf>> {
        let trials: Vec<TrialRecord> = read_jsonl(&self.out("evaluate/trials.jsonl")).map_err(s)?;
        let mut yields = Vec::new();
        for p in &self.config.policies {
            let stats: TriageStats = serde_json::from_str(
                &fs::read_to_string(self.out(&format!("triage/{}/stats.json", p.id))).map_err(s)?,
            )
            .map_err(s)?;
            let witnesses: Vec<WitnessRecord> = read_jsonl(&self.out(&format!("realize/{}/witnesses.jsonl", p.id))).map_err(s)?;
            yields.push(yield_summary(&p.id, &stats, &witnesses));
        }
        let matched: Option<BTreeSet<String>> = self
            .config
            .report
            .matched_models
            .clone()
            .or_else(|| self.config.evaluation.tah_models.clone())
            .map(|v| v.into_iter().collect());
        let tables = standard_reports(&trials, &yields, matched.as_ref());
        let mut outputs = Vec::new();
        for f in &self.config.report.formats {
            let fmt: Format = f.parse()?;
            for (name, table) in &tables {
                let path = self.out(&format!("reports/{name}.{}", fmt.extension()));
                write_text(&path, &table.render(fmt)).map_err(s)?;
                outputs.push(path);
            }
        }
        Ok(outputs)
    }
}

/// Config sections a stage reads, so a config edit re-runs that stage.
fn fingerprint<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

pub fn yield_summary(policy_id: &str, stats: &TriageStats, witnesses: &[WitnessRecord]) -> YieldSummary {
    YieldSummary {
        policy_id: policy_id.to_string(),
        rules: stats.rules,
        clauses: stats.clauses,
        classified: stats.classified,
        candidates: stats.candidate_pairs,
        witnesses: witnesses.iter().filter(|w| w.accepted).count() as u64,
    }
}

/// The four report shapes: yield, POT profiles by policy, POT-TAH on the
/// matched models, and per-model POT profiles.
pub fn standard_reports(
    trials: &[TrialRecord],
    yields: &[YieldSummary],
    matched_models: Option<&BTreeSet<String>>,
) -> Vec<(&'static str, analytics::Table)> {
    let pot = analytics::TrialFilter { regime: Some(Regime::Pot), ..Default::default() }.apply(trials);
    let by_policy: Vec<ResolutionProfile> = analytics::group_profiles(&pot, analytics::GroupBy::Policy);
    vec![
        ("yield", analytics::yield_table(yields)),
        ("profiles", analytics::profile_table(&by_policy, "POT resolution profiles")),
        ("regimes", analytics::regime_table(trials, matched_models)),
        ("models", analytics::model_table(trials, Regime::Pot)),
    ]
}

/// Parses, lints, and compiles one PyRule file. When `rules` is given,
/// clause sets come back in policy order and every encoded rule must exist.
pub fn compile_file(path: &Path, registry: &SurfaceRegistry, rules: Option<&[RuleRecord]>) -> StageResult<Vec<ClauseSet>> {
    let src = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let asts = parse_file(&src, registry).map_err(|e| format!("{}:{e}", path.display()))?;
    let diagnostics: Vec<String> = asts
        .iter()
        .flat_map(|a| validate_vocabulary_use(a, registry))
        .map(|d| format!("{}:{d}", path.display()))
        .collect();
    if !diagnostics.is_empty() {
        return Err(diagnostics.join("\n"));
    }
    let mut sets: Vec<ClauseSet> = asts.iter().map(|a| compile(a, registry).map_err(s)).collect::<Result<_, _>>()?;
    if let Some(rules) = rules {
        let order: BTreeMap<&str, usize> = rules.iter().enumerate().map(|(i, r)| (r.rule_id.as_str(), i)).collect();
        if let Some(missing) = sets.iter().find(|s| !order.contains_key(s.rule_id.as_str())) {
            return Err(format!("{}: rule {} has no source-rule record", path.display(), missing.rule_id));
        }
        sets.sort_by_key(|s| order[s.rule_id.as_str()]);
    }
    Ok(sets)
}

pub fn load_clause_sets(path: &Path) -> StageResult<Vec<ClauseSet>> {
    let records: Vec<ClauseRecord> = read_jsonl(path).map_err(s)?;
    let mut sets: Vec<ClauseSet> = Vec::new();
    for r in records {
        match sets.last_mut() {
            Some(last) if last.rule_id == r.clause.rule_id => last.clauses.push(r.clause),
            _ => sets.push(ClauseSet { rule_id: r.clause.rule_id.clone(), clauses: vec![r.clause] }),
        }
    }
    Ok(sets)
}

pub fn clause_index(path: &Path) -> StageResult<BTreeMap<String, Clause>> {
    Ok(load_clause_sets(path)?
        .into_iter()
        .flat_map(|s| s.clauses)
        .map(|c| (c.clause_id.clone(), c))
        .collect())
}

pub fn rule_index(path: &Path) -> StageResult<BTreeMap<String, RuleRecord>> {
    let rules: Vec<RuleRecord> = read_jsonl(path).map_err(s)?;
    Ok(rules.into_iter().map(|r| (r.rule_id.clone(), r)).collect())
}

/// Runs every stage in order.
pub fn run_pipeline(config: PipelineConfig, manifest: Option<PathBuf>, force: bool) -> Result<RunSummary, PipelineError> {
    Pipeline::new(config, manifest, force)?.run(&Stage::ALL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled(tmp: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::bundled(&tmp.join("fixture"), tmp.join("out")).unwrap();
        c.evaluation.k = 2;
        c
    }

    #[test]
    fn bundled_run_then_rerun_skips_everything() {
        let tmp = tempfile::tempdir().unwrap();
        let first = run_pipeline(bundled(tmp.path()), None, false).unwrap();
        assert!(first.stages.iter().all(|(_, s)| *s == StageStatus::Ran));
        for f in ["yield", "profiles", "regimes", "models"] {
            assert!(tmp.path().join(format!("out/reports/{f}.txt")).is_file());
            assert!(tmp.path().join(format!("out/reports/{f}.csv")).is_file());
        }
        let again = run_pipeline(bundled(tmp.path()), None, false).unwrap();
        assert!(again.stages.iter().all(|(_, s)| *s == StageStatus::Skipped), "{:?}", again.stages);
        let forced = run_pipeline(bundled(tmp.path()), None, true).unwrap();
        assert!(forced.stages.iter().all(|(_, s)| *s == StageStatus::Ran));
    }

    #[test]
    fn bundled_candidates_match_the_design() {
        let tmp = tempfile::tempdir().unwrap();
        let mut p = Pipeline::new(bundled(tmp.path()), None, false).unwrap();
        p.run(&[Stage::Ingest, Stage::Compile, Stage::Triage]).unwrap();
        let c: Vec<CandidatePair> = read_jsonl(&tmp.path().join("out/triage/mini-swe/candidates.jsonl")).unwrap();
        let pairs: Vec<(&str, &str)> = c.iter().map(|c| (c.rule_a.as_str(), c.rule_b.as_str())).collect();
        assert_eq!(pairs, [("r1", "r8"), ("r2", "r7"), ("r4", "r6"), ("r11", "r12")]);
        let stats: TriageStats =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("out/triage/mini-swe/stats.json")).unwrap()).unwrap();
        assert_eq!((stats.rules, stats.clauses, stats.classified), (12, 18, 140));
    }

    #[test]
    fn config_errors_exit_two() {
        let e = PipelineConfig::from_toml("bogus = 1", Path::new(".")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = Pipeline::new(PipelineConfig::default(), None, false).err().unwrap();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn stage_failure_names_the_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = bundled(tmp.path());
        c.policies[0].pyrule = tmp.path().join("missing.pyrule");
        let e = run_pipeline(c, None, false).unwrap_err();
        assert!(matches!(e, PipelineError::Stage { stage: Stage::Compile, .. }), "{e}");
        assert_eq!(e.exit_code(), 1);
        // Ingest output survives the failure.
        assert!(tmp.path().join("out/store/mini-swe/rules.jsonl").is_file());
    }

    #[test]
    fn toml_config_round_trip() {
        let text = r#"
output_dir = "out"
[[policies]]
id = "p"
text = "p.txt"
pyrule = "p.pyrule"
[adapters]
verifier = "exec:./verify.sh"
[evaluation]
models = ["m"]
regimes = ["POT"]
k = 3
"#;
        let c = PipelineConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/base/out"));
        assert_eq!(c.policies[0].text, PathBuf::from("/base/p.txt"));
        assert_eq!(c.adapters.verifier, Endpoint::Exec("./verify.sh".into()));
        assert_eq!(c.evaluation.k, 3);
        assert_eq!(c.witness.max_witnesses, 10);
    }
}
