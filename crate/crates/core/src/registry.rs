//! Closed vocabularies, sorts, and per-surface metadata.
//!
//! The builtin primitive set is a declarative manifest embedded in the
//! binary; extra manifests can add or override primitives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::Clause;
use crate::formula::{Formula, Slot};
use crate::value::Value;

const BUILTIN_MANIFEST: &str = include_str!("../assets/builtin_registry.jsonl");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("primitive `{primitive}`: {message}")]
    Arity { primitive: String, message: String },
    #[error("primitive `{primitive}` argument `{arg}`: expected sort {expected}, found {found}")]
    SortMismatch { primitive: String, arg: String, expected: SortName, found: String },
    #[error("invalid primitive spec `{name}`: {message}")]
    InvalidSpec { name: String, message: String },
    #[error("manifest line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
    #[error("reading manifest: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SortName {
    Bool,
    Int,
    String,
    Format,
    Language,
    Tool,
    Command,
    Path,
    FileKind,
    Schema,
    Policy,
    Event,
    #[serde(rename = "open-string")]
    OpenString,
}

impl SortName {
    pub const ALL: [SortName; 13] = [
        SortName::Bool,
        SortName::Int,
        SortName::String,
        SortName::Format,
        SortName::Language,
        SortName::Tool,
        SortName::Command,
        SortName::Path,
        SortName::FileKind,
        SortName::Schema,
        SortName::Policy,
        SortName::Event,
        SortName::OpenString,
    ];

    pub fn parse(name: &str) -> Option<SortName> {
        SortName::ALL.into_iter().find(|s| s.as_str() == name)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SortName::Bool => "Bool",
            SortName::Int => "Int",
            SortName::String => "String",
            SortName::Format => "Format",
            SortName::Language => "Language",
            SortName::Tool => "Tool",
            SortName::Command => "Command",
            SortName::Path => "Path",
            SortName::FileKind => "FileKind",
            SortName::Schema => "Schema",
            SortName::Policy => "Policy",
            SortName::Event => "Event",
            SortName::OpenString => "open-string",
        }
    }

    pub fn is_textual(self) -> bool {
        !matches!(self, SortName::Bool | SortName::Int)
    }
}

impl fmt::Display for SortName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Deontic strength of a clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ForceSign {
    Require,
    Forbid,
    Prefer,
    Avoid,
    Permit,
}

impl ForceSign {
    pub const ALL: [ForceSign; 5] = [
        ForceSign::Require,
        ForceSign::Forbid,
        ForceSign::Prefer,
        ForceSign::Avoid,
        ForceSign::Permit,
    ];

    pub fn from_name(name: &str) -> Option<ForceSign> {
        ForceSign::ALL.into_iter().find(|s| s.name() == name)
    }

    /// The PyRule spelling.
    pub fn name(self) -> &'static str {
        match self {
            ForceSign::Require => "require",
            ForceSign::Forbid => "forbid",
            ForceSign::Prefer => "prefer",
            ForceSign::Avoid => "avoid",
            ForceSign::Permit => "permit",
        }
    }

    pub fn is_hard(self) -> bool {
        matches!(self, ForceSign::Require | ForceSign::Forbid)
    }
}

impl fmt::Display for ForceSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_uppercase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sort {
    pub name: SortName,
    /// Present only for closed sorts.
    pub enum_values: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cardinality {
    SingleValued,
    MultiValued,
    EventLike,
    CountValued,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonMode {
    Equality,
    SetOverlap,
    Numeric,
    PatternOverlap,
    Ordering,
    Custom,
}

impl ComparisonMode {
    pub fn allowed_for(self, card: Cardinality) -> bool {
        use Cardinality::*;
        use ComparisonMode::*;
        match card {
            SingleValued => matches!(self, Equality | Custom),
            MultiValued => matches!(self, SetOverlap | PatternOverlap | Custom),
            EventLike => matches!(self, Equality | SetOverlap | PatternOverlap | Custom),
            CountValued => matches!(self, Numeric),
            Temporal => matches!(self, Ordering | Custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub sort: SortName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub name: String,
    pub args: Vec<ArgSpec>,
    pub surface_key_args: Vec<String>,
    pub cardinality: Cardinality,
    pub comparison_mode: ComparisonMode,
}

impl PrimitiveSpec {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |message: String| RegistryError::InvalidSpec { name: self.name.clone(), message };
        let names: BTreeSet<&str> = self.args.iter().map(|a| a.name.as_str()).collect();
        if names.len() != self.args.len() {
            return Err(invalid("duplicate argument name".into()));
        }
        if let Some(k) = self.surface_key_args.iter().find(|k| !names.contains(k.as_str())) {
            return Err(invalid(format!("surface key `{k}` is not an argument")));
        }
        if !self.comparison_mode.allowed_for(self.cardinality) {
            return Err(invalid(format!(
                "comparison mode {:?} is inconsistent with cardinality {:?}",
                self.comparison_mode, self.cardinality
            )));
        }
        if self.comparison_mode == ComparisonMode::Numeric && self.arg("n").map(|a| a.sort) != Some(SortName::Int) {
            return Err(invalid("numeric surfaces need an Int argument `n`".into()));
        }
        if self.comparison_mode == ComparisonMode::Ordering && (self.arg("first").is_none() || self.arg("second").is_none()) {
            return Err(invalid("ordering surfaces need `first` and `second` arguments".into()));
        }
        Ok(())
    }

    pub fn arg(&self, name: &str) -> Option<&ArgSpec> {
        self.args.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateKind {
    Text,
    Semantic,
    Environment,
}

/// A primitive argument after canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgValue {
    Const(Value),
    Symbolic(Slot),
}

/// Canonical (name-sorted) argument map.
pub type ArgMap = BTreeMap<String, ArgValue>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPart {
    Value(Value),
    Any,
}

impl KeyPart {
    pub fn unifies(&self, other: &KeyPart) -> bool {
        match (self, other) {
            (KeyPart::Any, _) | (_, KeyPart::Any) => true,
            (KeyPart::Value(a), KeyPart::Value(b)) => a == b,
        }
    }
}

/// A projected decision surface. Structural equality is identity of the
/// projection; [`SurfaceDescriptor::unifies`] is the comparison used by
/// triage, where `Any` matches every key value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SurfaceDescriptor {
    pub primitive: String,
    pub key: Vec<KeyPart>,
}

impl SurfaceDescriptor {
    pub fn unifies(&self, other: &SurfaceDescriptor) -> bool {
        self.primitive == other.primitive
            && self.key.len() == other.key.len()
            && self.key.iter().zip(&other.key).all(|(a, b)| a.unifies(b))
    }
}

impl fmt::Display for SurfaceDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.primitive)?;
        for (i, k) in self.key.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match k {
                KeyPart::Any => f.write_str("ANY")?,
                KeyPart::Value(v) => write!(f, "{v}")?,
            }
        }
        f.write_str("]")
    }
}

/// Collision construction for `custom` comparison surfaces.
pub trait CustomComparator: Send + Sync + fmt::Debug {
    fn collide(&self, a: &Clause, b: &Clause) -> Formula;
}

#[derive(Debug, Clone)]
pub struct SurfaceRegistry {
    primitives: BTreeMap<String, PrimitiveSpec>,
    predicates: BTreeMap<String, PredicateKind>,
    extractors: BTreeSet<String>,
    sorts: BTreeMap<SortName, Sort>,
    comparators: BTreeMap<String, Arc<dyn CustomComparator>>,
}

/// The builtin vocabulary.
pub fn builtin_registry() -> SurfaceRegistry {
    let mut reg = SurfaceRegistry {
        primitives: BTreeMap::new(),
        predicates: BTreeMap::new(),
        extractors: BTreeSet::new(),
        sorts: BTreeMap::new(),
        comparators: BTreeMap::new(),
    };
    for spec in parse_manifest(BUILTIN_MANIFEST).expect("builtin manifest is valid") {
        reg.primitives.insert(spec.name.clone(), spec);
    }
    for (name, kind) in [
        ("contains", PredicateKind::Text),
        ("regex", PredicateKind::Text),
        ("exact_text", PredicateKind::Text),
        ("semantic", PredicateKind::Semantic),
        ("asks_for", PredicateKind::Semantic),
        ("has_intent", PredicateKind::Semantic),
        ("has_slot", PredicateKind::Semantic),
        ("tool_available", PredicateKind::Environment),
        ("file_exists", PredicateKind::Environment),
        ("permission_granted", PredicateKind::Environment),
        ("trace_has", PredicateKind::Environment),
    ] {
        reg.predicates.insert(name.to_string(), kind);
    }
    reg.extractors.insert("extract".to_string());
    for name in SortName::ALL {
        let enum_values = match name {
            SortName::Bool => Some(vec!["True".into(), "False".into()]),
            SortName::Format => Some(
                ["markdown", "plain", "json", "html", "yaml", "xml", "csv", "latex", "code"]
                    .map(String::from)
                    .to_vec(),
            ),
            _ => None,
        };
        reg.sorts.insert(name, Sort { name, enum_values });
    }
    reg
}

/// Parses a manifest: one primitive spec JSON object per line.
pub fn parse_manifest(text: &str) -> Result<Vec<PrimitiveSpec>, RegistryError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: PrimitiveSpec =
            serde_json::from_str(line).map_err(|source| RegistryError::Manifest { line: i + 1, source })?;
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}

impl SurfaceRegistry {
    /// Adds or overrides primitives from a manifest file.
    pub fn extend_from_manifest(&mut self, path: &Path) -> Result<usize, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        let specs = parse_manifest(&text)?;
        let n = specs.len();
        for spec in specs {
            self.primitives.insert(spec.name.clone(), spec);
        }
        Ok(n)
    }

    pub fn insert_primitive(&mut self, spec: PrimitiveSpec) -> Result<(), RegistryError> {
        spec.validate()?;
        self.primitives.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn register_comparator(&mut self, primitive: &str, comparator: Arc<dyn CustomComparator>) {
        self.comparators.insert(primitive.to_string(), comparator);
    }

    pub fn comparator(&self, primitive: &str) -> Option<&Arc<dyn CustomComparator>> {
        self.comparators.get(primitive)
    }

    pub fn primitive(&self, name: &str) -> Option<&PrimitiveSpec> {
        self.primitives.get(name)
    }

    pub fn primitives(&self) -> impl Iterator<Item = &PrimitiveSpec> {
        self.primitives.values()
    }

    pub fn predicate(&self, name: &str) -> Option<PredicateKind> {
        self.predicates.get(name).copied()
    }

    pub fn is_predicate(&self, name: &str) -> bool {
        self.predicates.contains_key(name)
    }

    pub fn is_extractor(&self, name: &str) -> bool {
        self.extractors.contains(name)
    }

    pub fn is_primitive(&self, name: &str) -> bool {
        self.primitives.contains_key(name)
    }

    pub fn is_sign(&self, name: &str) -> bool {
        ForceSign::from_name(name).is_some()
    }

    pub fn sort(&self, name: SortName) -> &Sort {
        &self.sorts[&name]
    }

    /// Whether a literal inhabits a sort.
    pub fn value_fits(&self, sort: SortName, value: &Value) -> bool {
        match (sort, value) {
            (SortName::Bool, Value::Bool(_)) => true,
            (SortName::Int, Value::Int(_)) => true,
            (s, Value::Str(text)) if s.is_textual() => match &self.sort(s).enum_values {
                Some(allowed) => allowed.iter().any(|a| a.eq_ignore_ascii_case(text)),
                None => true,
            },
            _ => false,
        }
    }

    /// Whether a slot of sort `slot` may stand in an argument of sort `arg`.
    pub fn slot_fits(arg: SortName, slot: SortName) -> bool {
        arg == slot || (slot.is_textual() && matches!(arg, SortName::String | SortName::OpenString))
    }

    /// Checks an argument map against the primitive schema.
    pub fn check_args(&self, primitive: &str, args: &ArgMap) -> Result<&PrimitiveSpec, RegistryError> {
        let spec = self
            .primitive(primitive)
            .ok_or_else(|| RegistryError::UnknownPrimitive(primitive.to_string()))?;
        for (name, value) in args {
            let arg = spec.arg(name).ok_or_else(|| RegistryError::Arity {
                primitive: primitive.to_string(),
                message: format!("no argument named `{name}`"),
            })?;
            let mismatch = |found: String| RegistryError::SortMismatch {
                primitive: primitive.to_string(),
                arg: name.clone(),
                expected: arg.sort,
                found,
            };
            match value {
                ArgValue::Const(Value::List(items)) => {
                    let listy = matches!(
                        spec.comparison_mode,
                        ComparisonMode::SetOverlap | ComparisonMode::PatternOverlap
                    );
                    if !listy {
                        return Err(mismatch("list".into()));
                    }
                    if let Some(bad) = items.iter().find(|v| !self.value_fits(arg.sort, v)) {
                        return Err(mismatch(bad.to_string()));
                    }
                }
                ArgValue::Const(v) => {
                    if !self.value_fits(arg.sort, v) {
                        return Err(mismatch(v.to_string()));
                    }
                }
                ArgValue::Symbolic(slot) => {
                    if !Self::slot_fits(arg.sort, slot.sort) {
                        return Err(mismatch(format!("slot of sort {}", slot.sort)));
                    }
                }
            }
        }
        Ok(spec)
    }
}

/// Projects a primitive call onto its decision surface. Only surface key
/// arguments contribute; symbolic or absent keys project to `Any`.
pub fn project_surface(
    primitive: &str,
    args: &ArgMap,
    registry: &SurfaceRegistry,
) -> Result<SurfaceDescriptor, RegistryError> {
    let spec = registry.check_args(primitive, args)?;
    let key = spec
        .surface_key_args
        .iter()
        .map(|k| match args.get(k) {
            Some(ArgValue::Const(v)) => KeyPart::Value(v.clone()),
            Some(ArgValue::Symbolic(_)) | None => KeyPart::Any,
        })
        .collect();
    Ok(SurfaceDescriptor { primitive: primitive.to_string(), key })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(pairs: &[(&str, Value)]) -> ArgMap {
        pairs.iter().map(|(k, v)| (k.to_string(), ArgValue::Const(v.clone()))).collect()
    }

    fn s(v: &str) -> Value {
        Value::Str(v.into())
    }

    #[test]
    fn builtin_has_required_vocabulary() {
        let reg = builtin_registry();
        for p in [
            "reply_format", "reply_style", "reply_contains", "question_count", "section_order",
            "citation_policy", "use_tool", "tool_call", "web_search", "run_shell", "read_file",
            "edit_file", "image_generate", "refuse", "ask_clarify", "disclose", "withhold",
            "trace_contains", "trace_order",
        ] {
            assert!(reg.is_primitive(p), "{p}");
        }
        for p in [
            "contains", "regex", "exact_text", "semantic", "asks_for", "has_intent", "has_slot",
            "tool_available", "file_exists", "permission_granted", "trace_has",
        ] {
            assert!(reg.is_predicate(p), "{p}");
        }
        for spec in reg.primitives() {
            spec.validate().unwrap();
        }
    }

    #[test]
    fn hard_signs_are_exactly_require_and_forbid() {
        for sign in ForceSign::ALL {
            assert_eq!(sign.is_hard(), matches!(sign, ForceSign::Require | ForceSign::Forbid), "{sign}");
            assert_eq!(ForceSign::from_name(sign.name()), Some(sign));
        }
    }

    #[test]
    fn metadata_lookups() {
        let reg = builtin_registry();
        let style = reg.primitive("reply_style").unwrap();
        assert_eq!((style.cardinality, style.comparison_mode), (Cardinality::SingleValued, ComparisonMode::Equality));
        let contains = reg.primitive("reply_contains").unwrap();
        assert_eq!((contains.cardinality, contains.comparison_mode), (Cardinality::MultiValued, ComparisonMode::SetOverlap));
        let qc = reg.primitive("question_count").unwrap();
        assert_eq!((qc.cardinality, qc.comparison_mode), (Cardinality::CountValued, ComparisonMode::Numeric));
        let shell = reg.primitive("run_shell").unwrap();
        assert_eq!((shell.cardinality, shell.comparison_mode), (Cardinality::EventLike, ComparisonMode::PatternOverlap));
        let order = reg.primitive("section_order").unwrap();
        assert_eq!((order.cardinality, order.comparison_mode), (Cardinality::Temporal, ComparisonMode::Ordering));
    }

    #[test]
    fn distinct_files_project_to_distinct_surfaces() {
        let reg = builtin_registry();
        let a = project_surface("edit_file", &args(&[("path", s("a.cfg"))]), &reg).unwrap();
        let b = project_surface("edit_file", &args(&[("path", s("b.cfg"))]), &reg).unwrap();
        assert_ne!(a, b);
        assert!(!a.unifies(&b));
    }

    #[test]
    fn format_values_share_one_surface() {
        let reg = builtin_registry();
        let a = project_surface("reply_format", &args(&[("format", s("markdown"))]), &reg).unwrap();
        let b = project_surface("reply_format", &args(&[("format", s("json"))]), &reg).unwrap();
        assert_eq!(a, b);
        assert!(a.unifies(&b));
    }

    #[test]
    fn symbolic_key_projects_to_any_and_unifies_both_ways() {
        let reg = builtin_registry();
        let slot = Slot { sort: SortName::Path, source: "extract(ctx.msg)".into() };
        let mut m = ArgMap::new();
        m.insert("path".into(), ArgValue::Symbolic(slot));
        let sym = project_surface("edit_file", &m, &reg).unwrap();
        assert_eq!(sym.key, vec![KeyPart::Any]);
        let concrete = project_surface("edit_file", &args(&[("path", s("a.cfg"))]), &reg).unwrap();
        assert!(sym.unifies(&concrete) && concrete.unifies(&sym));
        let shell = project_surface("run_shell", &ArgMap::new(), &reg).unwrap();
        assert!(!sym.unifies(&shell));
    }

    #[test]
    fn projection_errors() {
        let reg = builtin_registry();
        assert!(matches!(project_surface("fly", &ArgMap::new(), &reg), Err(RegistryError::UnknownPrimitive(_))));
        assert!(matches!(
            project_surface("question_count", &args(&[("n", s("two"))]), &reg),
            Err(RegistryError::SortMismatch { .. })
        ));
        assert!(matches!(
            project_surface("reply_style", &args(&[("tone", s("x"))]), &reg),
            Err(RegistryError::Arity { .. })
        ));
        assert!(matches!(
            project_surface("reply_format", &args(&[("format", s("klingon"))]), &reg),
            Err(RegistryError::SortMismatch { .. })
        ));
    }

    #[test]
    fn inconsistent_spec_rejected() {
        let spec = PrimitiveSpec {
            name: "bad".into(),
            args: vec![ArgSpec { name: "n".into(), sort: SortName::Int }],
            surface_key_args: vec![],
            cardinality: Cardinality::CountValued,
            comparison_mode: ComparisonMode::Equality,
        };
        assert!(spec.validate().is_err());
        let spec = PrimitiveSpec { surface_key_args: vec!["missing".into()], comparison_mode: ComparisonMode::Numeric, ..spec };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn manifest_extension_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.jsonl");
        std::fs::write(
            &path,
            r#"{"name":"deploy","args":[{"name":"target","sort":"String"}],"surface_key_args":["target"],"cardinality":"event-like","comparison_mode":"equality"}"#,
        )
        .unwrap();
        let mut reg = builtin_registry();
        assert_eq!(reg.extend_from_manifest(&path).unwrap(), 1);
        assert!(reg.is_primitive("deploy"));
    }
}
