//! Prompt policies, source-rule records, and line-delimited artifact files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{exec_json, with_retries, AdapterError, Endpoint};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not valid UTF-8")]
    Encoding { path: PathBuf },
    #[error("policy `{0}` is already in the store")]
    DuplicatePolicy(String),
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("rule {rule_id}: {reason}")]
    InvalidRule { rule_id: String, reason: RuleViolation },
    #[error("extraction failed: {0}")]
    Extraction(#[source] AdapterError),
    #[error("extractor returned {0} records and all were rejected")]
    AllRejected(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// A line-numbered policy text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPolicy {
    pub policy_id: String,
    /// Line `n` (1-based) is `lines[n - 1]`.
    pub lines: Vec<String>,
    pub rule_ids: Vec<String>,
}

impl PromptPolicy {
    pub fn from_text(policy_id: &str, text: &str) -> Self {
        let text = normalize_newlines(text);
        let mut lines: Vec<String> = text.split('\n').map(String::from).collect();
        if text.is_empty() || text.ends_with('\n') {
            lines.pop();
        }
        PromptPolicy { policy_id: policy_id.to_string(), lines, rule_ids: Vec::new() }
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        if !self.lines.is_empty() {
            s.push('\n');
        }
        s
    }

    /// Text of lines `start..=end`, joined with LF.
    pub fn span_text(&self, start: usize, end: usize) -> Option<String> {
        if start == 0 || start > end || end > self.lines.len() {
            return None;
        }
        Some(self.lines[start - 1..end].join("\n"))
    }

    /// Lines prefixed with their numbers, as handed to extractors.
    pub fn numbered(&self) -> String {
        self.lines.iter().enumerate().map(|(i, l)| format!("{:>4} | {l}\n", i + 1)).collect()
    }
}

pub fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// ρ = (id, span, quote, gist). The quote is authoritative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub rule_id: String,
    pub span: (usize, usize),
    pub quote: String,
    pub gist: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum RuleViolation {
    BadId,
    SpanOutOfRange { lines: usize },
    QuoteMismatch { diff: String },
    EmptyQuote,
    DuplicateId,
}

impl std::fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RuleViolation::BadId => f.write_str("id must match r<N> with N a positive integer"),
            RuleViolation::SpanOutOfRange { lines } => write!(f, "span outside the policy's {lines} lines"),
            RuleViolation::QuoteMismatch { diff } => write!(f, "quote not found at span\n{diff}"),
            RuleViolation::EmptyQuote => f.write_str("empty quote"),
            RuleViolation::DuplicateId => f.write_str("duplicate rule id"),
        }
    }
}

pub fn valid_rule_id(id: &str) -> bool {
    id.strip_prefix('r')
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) && !n.starts_with('0'))
}

impl RuleRecord {
    pub fn check(&self, policy: &PromptPolicy) -> Result<(), RuleViolation> {
        if !valid_rule_id(&self.rule_id) {
            return Err(RuleViolation::BadId);
        }
        let (start, end) = self.span;
        let spanned = policy
            .span_text(start, end)
            .ok_or(RuleViolation::SpanOutOfRange { lines: policy.lines.len() })?;
        let quote = normalize_newlines(&self.quote);
        if quote.trim().is_empty() {
            return Err(RuleViolation::EmptyQuote);
        }
        if !spanned.contains(&quote) {
            return Err(RuleViolation::QuoteMismatch { diff: line_diff(&spanned, &quote, start) });
        }
        Ok(())
    }
}

/// First differing line between the spanned text and the quote.
fn line_diff(spanned: &str, quote: &str, start: usize) -> String {
    let s: Vec<&str> = spanned.lines().collect();
    let q: Vec<&str> = quote.lines().collect();
    for i in 0..s.len().max(q.len()) {
        let (a, b) = (s.get(i).copied().unwrap_or(""), q.get(i).copied().unwrap_or(""));
        if !a.contains(b) {
            return format!("line {}:\n- {a}\n+ {b}", start + i);
        }
    }
    format!("- {spanned}\n+ {quote}")
}

/// Total order: span start, then end line, then id.
pub fn sort_rules(rules: &mut [RuleRecord]) {
    rules.sort_by(|a, b| (a.span, &a.rule_id).cmp(&(b.span, &b.rule_id)));
}

pub fn load_policy(path: &Path, policy_id: Option<&str>) -> Result<PromptPolicy, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes).map_err(|_| StoreError::Encoding { path: path.to_path_buf() })?;
    let id = match policy_id {
        Some(id) => id.to_string(),
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into()),
    };
    Ok(PromptPolicy::from_text(&id, &text))
}

/// Loads and verifies a rule file; any invalid record is an error.
pub fn load_rules(policy: &mut PromptPolicy, path: &Path) -> Result<Vec<RuleRecord>, StoreError> {
    let mut rules: Vec<RuleRecord> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for r in &rules {
        r.check(policy).map_err(|reason| StoreError::InvalidRule { rule_id: r.rule_id.clone(), reason })?;
        if !seen.insert(r.rule_id.clone()) {
            return Err(StoreError::InvalidRule { rule_id: r.rule_id.clone(), reason: RuleViolation::DuplicateId });
        }
    }
    sort_rules(&mut rules);
    policy.rule_ids = rules.iter().map(|r| r.rule_id.clone()).collect();
    Ok(rules)
}

/// Maps a line-numbered policy to candidate rule records.
pub trait ExtractionAdapter {
    fn extract(&self, policy: &PromptPolicy) -> Result<Vec<RuleRecord>, AdapterError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub rule_id: String,
    pub reason: RuleViolation,
    pub record: RuleRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub rules: Vec<RuleRecord>,
    pub rejections: Vec<Rejection>,
}

/// Runs the extractor with bounded retries and rejects, never repairs,
/// records that fail verification.
pub fn extract_rules(
    policy: &mut PromptPolicy,
    extractor: &dyn ExtractionAdapter,
    attempts: u32,
) -> Result<Extraction, StoreError> {
    let raw = with_retries(attempts, || extractor.extract(policy)).map_err(StoreError::Extraction)?;
    let total = raw.len();
    let mut rules = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = BTreeSet::new();
    for record in raw {
        let verdict = record
            .check(policy)
            .and_then(|_| if seen.contains(&record.rule_id) { Err(RuleViolation::DuplicateId) } else { Ok(()) });
        match verdict {
            Ok(()) => {
                seen.insert(record.rule_id.clone());
                rules.push(record);
            }
            Err(reason) => rejections.push(Rejection { rule_id: record.rule_id.clone(), reason, record }),
        }
    }
    if total > 0 && rules.is_empty() {
        return Err(StoreError::AllRejected(total));
    }
    sort_rules(&mut rules);
    policy.rule_ids = rules.iter().map(|r| r.rule_id.clone()).collect();
    Ok(Extraction { rules, rejections })
}

/// Offline extractor: each non-blank line that is not a heading becomes
/// one rule quoting that line.
pub struct StubExtractor;

impl ExtractionAdapter for StubExtractor {
    fn extract(&self, policy: &PromptPolicy) -> Result<Vec<RuleRecord>, AdapterError> {
        Ok(policy
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .enumerate()
            .map(|(k, (i, l))| RuleRecord {
                rule_id: format!("r{}", k + 1),
                span: (i + 1, i + 1),
                quote: l.trim().to_string(),
                gist: l.trim().trim_start_matches(['-', '*', ' ']).to_string(),
            })
            .collect())
    }
}

/// Replays a rules file as extractor output.
pub struct FixtureExtractor(pub PathBuf);

impl ExtractionAdapter for FixtureExtractor {
    fn extract(&self, _policy: &PromptPolicy) -> Result<Vec<RuleRecord>, AdapterError> {
        read_jsonl(&self.0).map_err(|e| AdapterError::Failed(e.to_string()))
    }
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    task: &'static str,
    policy_id: &'a str,
    numbered_text: String,
}

#[derive(Deserialize)]
struct ExtractResponse {
    rules: Vec<RuleRecord>,
}

pub struct ExecExtractor(pub String);

impl ExtractionAdapter for ExecExtractor {
    fn extract(&self, policy: &PromptPolicy) -> Result<Vec<RuleRecord>, AdapterError> {
        let req = ExtractRequest { task: "extract", policy_id: &policy.policy_id, numbered_text: policy.numbered() };
        let resp: ExtractResponse = exec_json(&self.0, &req)?;
        Ok(resp.rules)
    }
}

pub fn extractor_for(endpoint: &Endpoint) -> Box<dyn ExtractionAdapter> {
    match endpoint {
        Endpoint::Stub => Box::new(StubExtractor),
        Endpoint::Fixture(p) => Box::new(FixtureExtractor(p.clone())),
        Endpoint::Exec(c) => Box::new(ExecExtractor(c.clone())),
    }
}

/// Policies and rules persisted under one directory, one subdirectory per
/// policy holding `policy.txt` and `rules.jsonl`.
#[derive(Debug, Default)]
pub struct PolicyStore {
    pub policies: BTreeMap<String, (PromptPolicy, Vec<RuleRecord>)>,
}

impl PolicyStore {
    pub fn insert(&mut self, policy: PromptPolicy, rules: Vec<RuleRecord>) -> Result<(), StoreError> {
        if self.policies.contains_key(&policy.policy_id) {
            return Err(StoreError::DuplicatePolicy(policy.policy_id));
        }
        self.policies.insert(policy.policy_id.clone(), (policy, rules));
        Ok(())
    }

    pub fn persist(&self, root: &Path) -> Result<(), StoreError> {
        for (id, (policy, rules)) in &self.policies {
            let dir = root.join(id);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_text(&dir.join("policy.txt"), &policy.text())?;
            write_jsonl(&dir.join("rules.jsonl"), rules)?;
        }
        Ok(())
    }

    pub fn reload(root: &Path) -> Result<PolicyStore, StoreError> {
        let mut store = PolicyStore::default();
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io_err(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("policy.txt").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let id = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut policy = load_policy(&dir.join("policy.txt"), Some(&id))?;
            let rules = load_rules(&mut policy, &dir.join("rules.jsonl"))?;
            store.insert(policy, rules)?;
        }
        Ok(store)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| StoreError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends one record; used for attempt and trial logs.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<(), StoreError> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let line = serde_json::to_string(record)
        .map_err(|e| StoreError::Malformed { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
    writeln!(file, "{line}").map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "# Rules\nBe concise.\nNever sing.\nUse markdown for\nexplanations.\n";

    fn rule(id: &str, span: (usize, usize), quote: &str) -> RuleRecord {
        RuleRecord { rule_id: id.into(), span, quote: quote.into(), gist: quote.into() }
    }

    #[test]
    fn line_index_is_one_based() {
        let p = PromptPolicy::from_text("p", "a\nb\nc\n");
        assert_eq!(p.lines, ["a", "b", "c"]);
        assert_eq!(p.span_text(2, 3).unwrap(), "b\nc");
        assert!(p.span_text(0, 1).is_none());
        assert!(PromptPolicy::from_text("p", "").lines.is_empty());
        assert_eq!(PromptPolicy::from_text("p", "a\r\nb").lines, ["a", "b"]);
    }

    #[test]
    fn quote_checks() {
        let p = PromptPolicy::from_text("p", TEXT);
        assert!(rule("r1", (4, 5), "Use markdown for\nexplanations.").check(&p).is_ok());
        assert!(rule("r1", (3, 3), "sing").check(&p).is_ok());
        let err = rule("r1", (3, 3), "Never dance.").check(&p).unwrap_err();
        let RuleViolation::QuoteMismatch { diff } = err else { panic!() };
        assert!(diff.contains("line 3") && diff.contains("Never dance."));
        assert_eq!(rule("r1", (5, 9), "x").check(&p), Err(RuleViolation::SpanOutOfRange { lines: 5 }));
        assert_eq!(rule("rule1", (2, 2), "Be").check(&p), Err(RuleViolation::BadId));
        assert!(!valid_rule_id("r0") && !valid_rule_id("r") && valid_rule_id("r12"));
    }

    struct Canned(Vec<RuleRecord>);
    impl ExtractionAdapter for Canned {
        fn extract(&self, _: &PromptPolicy) -> Result<Vec<RuleRecord>, AdapterError> {
            Ok(self.0.clone())
        }
    }

    struct Flaky(std::cell::Cell<u32>);
    impl ExtractionAdapter for Flaky {
        fn extract(&self, _: &PromptPolicy) -> Result<Vec<RuleRecord>, AdapterError> {
            self.0.set(self.0.get() + 1);
            Err(AdapterError::Failed("timeout".into()))
        }
    }

    #[test]
    fn extraction_rejects_fabricated_quotes() {
        let mut p = PromptPolicy::from_text("p", TEXT);
        let ok = Canned(vec![rule("r2", (3, 3), "Never sing."), rule("r1", (2, 2), "Be concise.")]);
        let e = extract_rules(&mut p, &ok, 3).unwrap();
        assert_eq!(e.rules.len(), 2);
        assert_eq!(p.rule_ids, ["r1", "r2"]);
        let bad = Canned(vec![rule("r1", (2, 2), "Be concise."), rule("r2", (3, 3), "Always sing.")]);
        let e = extract_rules(&mut p, &bad, 3).unwrap();
        assert_eq!((e.rules.len(), e.rejections.len()), (1, 1));
        let all_bad = Canned(vec![rule("r2", (3, 3), "Always sing.")]);
        assert!(matches!(extract_rules(&mut p, &all_bad, 3), Err(StoreError::AllRejected(1))));
    }

    #[test]
    fn extraction_retries_are_bounded() {
        let mut p = PromptPolicy::from_text("p", TEXT);
        let flaky = Flaky(std::cell::Cell::new(0));
        assert!(matches!(extract_rules(&mut p, &flaky, 3), Err(StoreError::Extraction(_))));
        assert_eq!(flaky.0.get(), 3);
    }

    #[test]
    fn persist_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = PromptPolicy::from_text("demo", TEXT);
        let rules = extract_rules(&mut p, &StubExtractor, 1).unwrap().rules;
        assert_eq!(rules.len(), 4);
        let mut store = PolicyStore::default();
        store.insert(p.clone(), rules.clone()).unwrap();
        assert!(matches!(store.insert(p, vec![]), Err(StoreError::DuplicatePolicy(_))));
        store.persist(dir.path()).unwrap();
        let back = PolicyStore::reload(dir.path()).unwrap();
        assert_eq!(back.policies, store.policies);
    }

    #[test]
    fn load_rules_sorts_and_reports_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        write_jsonl(&path, &[rule("r2", (3, 3), "Never sing."), rule("r1", (2, 2), "Be concise.")]).unwrap();
        let mut p = PromptPolicy::from_text("p", TEXT);
        let rules = load_rules(&mut p, &path).unwrap();
        assert_eq!(rules[0].rule_id, "r1");
        fs::write(&path, "{\"rule_id\": 3}\n").unwrap();
        assert!(matches!(load_rules(&mut p, &path), Err(StoreError::Malformed { line: 1, .. })));
    }
}
