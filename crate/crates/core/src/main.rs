use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wire::adapters::Endpoint;
use wire::analytics::{self, Format, GroupBy};
use wire::compiler::{ClauseRecord, ClauseSet};
use wire::evaluation::{self, Cell, EvalAdapters, EvalParams, Regime, TrialRecord};
use wire::pipeline::{self, PipelineConfig, PipelineError, StageStatus};
use wire::registry::{builtin_registry, SurfaceRegistry};
use wire::store::{self, append_jsonl, read_jsonl, write_jsonl, PolicyStore, RuleRecord};
use wire::triage::{triage_policy, CandidatePair, OverlapResolver, SolverLimits};
use wire::witness::{self, WitnessAdapters, WitnessBudget, WitnessRecord};

#[derive(Parser)]
#[command(name = "wire", version, about = "Find and measure hard rule conflicts in prompt policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a policy and verified rule records into a store directory.
    Ingest(IngestArgs),
    /// Parse, lint, and compile PyRule encodings into clauses.
    Compile(CompileArgs),
    /// Classify clause pairs and write hard-collision candidates.
    Triage(TriageArgs),
    /// Build concrete witnesses for candidate pairs.
    Realize(RealizeArgs),
    /// Run subject rollouts on accepted witnesses and judge them.
    Evaluate(EvaluateArgs),
    /// Aggregate trials into resolution-profile tables.
    Report(ReportArgs),
    /// Run every stage from a config file, resuming from the manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct RegistryArg {
    /// Extra primitive specs, one JSON object per line.
    #[arg(long)]
    registry: Option<PathBuf>,
}

impl RegistryArg {
    fn load(&self) -> Result<SurfaceRegistry> {
        let mut reg = builtin_registry();
        if let Some(p) = &self.registry {
            reg.extend_from_manifest(p)?;
        }
        Ok(reg)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    policy_id: Option<String>,
    /// Verified rule records; the extractor runs when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value = "stub")]
    extractor: Endpoint,
    #[arg(long, default_value = "store")]
    out: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    pyrule: PathBuf,
    #[command(flatten)]
    registry: RegistryArg,
    /// Source-rule records; clauses follow their policy order.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Report diagnostics only.
    #[arg(long)]
    check_only: bool,
    #[arg(long, default_value = "clauses.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct TriageArgs {
    #[arg(long)]
    clauses: PathBuf,
    #[command(flatten)]
    registry: RegistryArg,
    #[arg(long, default_value = "stub")]
    overlap_adapter: Endpoint,
    #[arg(long, default_value_t = SolverLimits::default().max_atoms)]
    max_atoms: usize,
    #[arg(long, default_value = "triage")]
    out: PathBuf,
}

#[derive(Args)]
struct RealizeArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    clauses: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value = "policy")]
    policy_id: String,
    /// `stub` uses the bundled seed corpus; `fixture:<path>` reads another.
    #[arg(long, default_value = "stub")]
    retrieval: Endpoint,
    #[arg(long, default_value = "stub")]
    synthesis: Endpoint,
    #[arg(long, default_value = "stub")]
    verifier: Endpoint,
    #[arg(long, default_value_t = 10)]
    max_witnesses: usize,
    #[arg(long, default_value_t = 300.0)]
    budget_seconds: f64,
    #[arg(long, default_value = "witnesses.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    witnesses: PathBuf,
    /// Policy text shown to the subject.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "pot")]
    regime: Regime,
    #[arg(long, default_value_t = 5)]
    k: u32,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value = "stub")]
    subject: Endpoint,
    #[arg(long, default_value = "stub")]
    harness: Endpoint,
    #[arg(long, default_value = "stub")]
    judge: Endpoint,
    /// Appended to; existing trial ids are not re-run.
    #[arg(long, default_value = "trials.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, default_value = "policy")]
    group_by: GroupBy,
    #[arg(long, default_value = "txt")]
    format: Format,
    /// Comma-separated model subset applied before grouping.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long)]
    regime: Option<Regime>,
    /// Pool POT and TAH trials into one profile.
    #[arg(long)]
    allow_mixed_regimes: bool,
}

#[derive(Args)]
struct RunArgs {
    /// TOML pipeline config; the bundled synthetic policy when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace every adapter with its offline stub.
    #[arg(long)]
    stub_all: bool,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => return run(a),
        Command::Ingest(a) => ingest(a),
        Command::Compile(a) => compile(a),
        Command::Triage(a) => triage(a),
        Command::Realize(a) => realize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(a: RunArgs) -> ExitCode {
    let outcome = (|| -> Result<pipeline::RunSummary, PipelineError> {
        let mut config = match &a.config {
            Some(p) => PipelineConfig::load(p)?,
            None => {
                let out = a.out.clone().unwrap_or_else(|| PathBuf::from("wire-out"));
                PipelineConfig::bundled(&out.join("fixture"), out.clone())?
            }
        };
        if let Some(out) = &a.out {
            config.output_dir = out.clone();
        }
        if a.stub_all {
            config.stub_all();
        }
        pipeline::run_pipeline(config, a.manifest.clone(), a.force)
    })();
    match outcome {
        Ok(summary) => {
            for (stage, status) in &summary.stages {
                let verb = if *status == StageStatus::Ran { "ran" } else { "skipped (unchanged)" };
                println!("{:<9} {verb}", stage.name());
            }
            println!("reports in {}", summary.output_dir.join("reports").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut policy = store::load_policy(&a.policy, a.policy_id.as_deref())?;
    let rules = match &a.rules {
        Some(p) => store::load_rules(&mut policy, p)?,
        None => {
            let ex = store::extract_rules(&mut policy, store::extractor_for(&a.extractor).as_ref(), 3)?;
            for r in &ex.rejections {
                eprintln!("rejected {}: {}", r.rule_id, r.reason);
            }
            ex.rules
        }
    };
    let id = policy.policy_id.clone();
    let n = rules.len();
    let mut st = PolicyStore::default();
    st.insert(policy, rules)?;
    st.persist(&a.out)?;
    println!("{id}: {n} rules -> {}", a.out.join(&id).display());
    Ok(())
}

fn load_rules_map(path: Option<&Path>) -> Result<BTreeMap<String, RuleRecord>> {
    Ok(match path {
        Some(p) => read_jsonl::<RuleRecord>(p)?.into_iter().map(|r| (r.rule_id.clone(), r)).collect(),
        None => BTreeMap::new(),
    })
}

fn compile(a: CompileArgs) -> Result<()> {
    let reg = a.registry.load()?;
    let rules: Option<Vec<RuleRecord>> = a.rules.as_deref().map(read_jsonl).transpose()?;
    let sets: Vec<ClauseSet> = pipeline::compile_file(&a.pyrule, &reg, rules.as_deref()).map_err(|e| anyhow!(e))?;
    let n: usize = sets.iter().map(|s| s.clauses.len()).sum();
    if a.check_only {
        println!("{}: ok, {} rules, {n} clauses", a.pyrule.display(), sets.len());
        return Ok(());
    }
    let records: Vec<ClauseRecord> = sets.iter().flat_map(|s| s.clauses.iter().map(ClauseRecord::from)).collect();
    write_jsonl(&a.out, &records)?;
    println!("{} rules, {n} clauses -> {}", sets.len(), a.out.display());
    Ok(())
}

fn triage(a: TriageArgs) -> Result<()> {
    let reg = a.registry.load()?;
    let sets = pipeline::load_clause_sets(&a.clauses).map_err(|e| anyhow!(e))?;
    let resolver = OverlapResolver::from_endpoint(Some(&a.overlap_adapter))?;
    let limits = SolverLimits { max_atoms: a.max_atoms, ..SolverLimits::default() };
    let r = triage_policy(&sets, &reg, &resolver, &limits);
    write_jsonl(&a.out.join("candidates.jsonl"), &r.candidates)?;
    write_jsonl(&a.out.join("verdicts.jsonl"), &r.verdicts)?;
    store::write_text(&a.out.join("stats.json"), &(serde_json::to_string_pretty(&r.stats)? + "\n"))?;
    let st = r.stats;
    println!(
        "{} clause pairs: {} surface-skipped, {} sign-skipped, {} sat, {} unsat, {} undecided; {} candidates",
        st.classified, st.skipped_surface, st.skipped_hard_sign, st.sat, st.unsat, st.undecided, st.candidate_pairs
    );
    Ok(())
}

fn realize(a: RealizeArgs) -> Result<()> {
    let candidates: Vec<CandidatePair> = read_jsonl(&a.candidates)?;
    let clauses = pipeline::clause_index(&a.clauses).map_err(|e| anyhow!(e))?;
    let rules = load_rules_map(a.rules.as_deref())?;
    let retrieval = witness::retrieval_for(&a.retrieval, pipeline::DEFAULT_CORPUS)?;
    let synthesis = witness::synthesis_for(&a.synthesis)?;
    let verifier = witness::verifier_for(&a.verifier)?;
    let adapters = WitnessAdapters { retrieval: retrieval.as_ref(), synthesis: synthesis.as_ref(), verifier: verifier.as_ref() };
    let budget = WitnessBudget { max_witnesses: a.max_witnesses, max_seconds: a.budget_seconds, ..WitnessBudget::default() };
    let mut log = Vec::new();
    for pair in &candidates {
        let (summary, records) = witness::realize(&a.policy_id, pair, &clauses, &rules, &adapters, &budget);
        println!(
            "{} x {}: {} accepted of {} attempts{}",
            summary.rule_a,
            summary.rule_b,
            summary.accepted,
            summary.attempts,
            if summary.incomplete { " (incomplete)" } else { "" }
        );
        log.extend(records);
    }
    write_jsonl(&a.out, &log)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let witnesses: Vec<WitnessRecord> = read_jsonl(&a.witnesses)?;
    let policy_text = std::fs::read_to_string(&a.policy).with_context(|| a.policy.display().to_string())?;
    let rules = load_rules_map(a.rules.as_deref())?;
    let subject = evaluation::subject_for(&a.subject)?;
    let harness = evaluation::harness_for(&a.harness)?;
    let judge = evaluation::judge_for(&a.judge)?;
    let adapters = EvalAdapters::new(subject.as_ref(), harness.as_ref(), judge.as_ref());
    let params = EvalParams { k: a.k, temperature: a.temperature, ..EvalParams::default() };
    let done: BTreeSet<String> = if a.out.exists() {
        read_jsonl::<TrialRecord>(&a.out)?.into_iter().map(|t| t.trial_id).collect()
    } else {
        BTreeSet::new()
    };
    let policies: BTreeSet<&str> = witnesses.iter().map(|w| w.policy_id.as_str()).collect();
    let mut n = 0;
    for policy_id in policies {
        let cell = Cell { model_id: a.model.clone(), policy_id: policy_id.to_string(), regime: a.regime };
        for t in evaluation::run_cell(&witnesses, &rules, &policy_text, &cell, &params, &adapters, &done) {
            append_jsonl(&a.out, &t)?;
            n += 1;
        }
    }
    println!(
        "{n} new trials -> {}; subject calls {}, judge calls {}",
        a.out.display(),
        adapters.subject_calls.get(),
        adapters.judge_calls.get()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let trials: Vec<TrialRecord> = read_jsonl(&a.trials)?;
    let filter = analytics::TrialFilter {
        models: (!a.models.is_empty()).then(|| a.models.iter().cloned().collect()),
        policies: None,
        regime: a.regime,
    };
    let kept = filter.apply(&trials);
    let profiles = if a.allow_mixed_regimes {
        // One profile per group with POT and TAH pooled together.
        let mut groups: BTreeMap<String, Vec<TrialRecord>> = BTreeMap::new();
        for t in kept {
            let key = match a.group_by {
                GroupBy::Policy => t.cell.policy_id.clone(),
                GroupBy::Model => t.cell.model_id.clone(),
                GroupBy::Pair => format!("{}:{}x{}@{}", t.cell.policy_id, t.rule_a, t.rule_b, t.cell.model_id),
                GroupBy::Regime => t.cell.regime.to_string(),
            };
            groups.entry(key).or_default().push(t);
        }
        groups
            .iter()
            .map(|(k, ts)| analytics::profile(ts, k, true))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        analytics::group_profiles(&kept, a.group_by)
    };
    let mut table = analytics::Table {
        title: "Resolution profiles".into(),
        header: ["Group", "Regime", "G", "q11", "q10", "q01", "q00", "1-q11", "Δsrc"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for p in &profiles {
        let regimes: Vec<String> = p.regimes.iter().map(|r| r.to_string()).collect();
        let mut row = vec![p.scope.clone(), regimes.join("+"), p.g.to_string()];
        match p.q {
            Some(q) => {
                row.extend(q.cells().map(analytics::pct));
                row.push(analytics::pct(p.non_joint.unwrap_or_default()));
                row.push(analytics::signed_pct(p.delta_src.unwrap_or_default()));
            }
            None => row.extend(std::iter::repeat_n(analytics::UNDEFINED.to_string(), 6)),
        }
        table.rows.push(row);
    }
    print!("{}", table.render(a.format));
    Ok(())
}
