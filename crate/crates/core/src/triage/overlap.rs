use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::adapters::{exec_json, AdapterError, Endpoint};
use crate::formula::{overlap_values, OverlapMode};
use crate::value::{normalize_label, token_set, Value};

/// Judges whether two open semantic values can denote the same behavior.
pub trait OverlapAdapter: Send + Sync {
    fn overlap(&self, a: &str, b: &str) -> Result<bool, AdapterError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Provenance {
    Deterministic,
    Adapter,
    AdapterFallback { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapChoice {
    pub mode: OverlapMode,
    pub lhs: Value,
    pub rhs: Value,
    pub overlap: bool,
    pub provenance: Provenance,
}

/// Deterministic default: overlap iff normalized token sets intersect.
pub fn token_overlap(a: &str, b: &str) -> bool {
    normalize_label(a) == normalize_label(b) || !token_set(a).is_disjoint(&token_set(b))
}

/// Decides constant-constant overlaps, consulting the adapter for open
/// semantic values and caching by normalized, order-free value pair.
#[derive(Default)]
pub struct OverlapResolver {
    adapter: Option<Box<dyn OverlapAdapter>>,
    cache: Mutex<BTreeMap<(String, String), (bool, Provenance)>>,
}

impl OverlapResolver {
    pub fn new(adapter: Option<Box<dyn OverlapAdapter>>) -> Self {
        OverlapResolver { adapter, cache: Mutex::new(BTreeMap::new()) }
    }

    pub fn from_endpoint(endpoint: Option<&Endpoint>) -> Result<Self, AdapterError> {
        let adapter: Option<Box<dyn OverlapAdapter>> = match endpoint {
            None | Some(Endpoint::Stub) => None,
            Some(Endpoint::Exec(cmd)) => Some(Box::new(ExecOverlap(cmd.clone()))),
            Some(Endpoint::Fixture(path)) => Some(Box::new(FixtureOverlap::load(path)?)),
        };
        Ok(Self::new(adapter))
    }

    /// Resolves a pair of concrete values; for lists, any element pair.
    pub fn resolve(&self, mode: OverlapMode, a: &Value, b: &Value) -> OverlapChoice {
        let choice = |overlap, provenance| OverlapChoice { mode, lhs: a.clone(), rhs: b.clone(), overlap, provenance };
        let semantic_pairs: Vec<(&str, &str)> = a
            .elements()
            .into_iter()
            .flat_map(|x| b.elements().into_iter().map(move |y| (x, y)))
            .filter_map(|(x, y)| Some((x.as_str()?, y.as_str()?)))
            .collect();
        if mode == OverlapMode::Pattern || self.adapter.is_none() || semantic_pairs.is_empty() {
            return choice(overlap_values(mode, a, b), Provenance::Deterministic);
        }
        let mut fallback = None;
        for (x, y) in semantic_pairs {
            let (v, p) = self.resolve_open(x, y);
            if matches!(p, Provenance::AdapterFallback { .. }) {
                fallback = Some(p.clone());
            }
            if v {
                return choice(true, p);
            }
        }
        choice(false, fallback.unwrap_or(Provenance::Adapter))
    }

    /// The local value-overlap subproblem for two open strings.
    pub fn resolve_open(&self, a: &str, b: &str) -> (bool, Provenance) {
        let (na, nb) = (normalize_label(a), normalize_label(b));
        if na == nb {
            return (true, Provenance::Deterministic);
        }
        let key = if na <= nb { (na, nb) } else { (nb, na) };
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let result = match &self.adapter {
            None => (token_overlap(a, b), Provenance::Deterministic),
            Some(adapter) => match adapter.overlap(&key.0, &key.1) {
                Ok(v) => (v, Provenance::Adapter),
                Err(e) => (token_overlap(a, b), Provenance::AdapterFallback { error: e.to_string() }),
            },
        };
        self.cache.lock().expect("cache lock").insert(key, result.clone());
        result
    }
}

#[derive(Serialize)]
struct OverlapRequest<'a> {
    task: &'static str,
    a: &'a str,
    b: &'a str,
}

#[derive(Deserialize)]
struct OverlapResponse {
    overlap: bool,
}

struct ExecOverlap(String);

impl OverlapAdapter for ExecOverlap {
    fn overlap(&self, a: &str, b: &str) -> Result<bool, AdapterError> {
        let r: OverlapResponse = exec_json(&self.0, &OverlapRequest { task: "overlap", a, b })?;
        Ok(r.overlap)
    }
}

/// Fixture file: JSON array of `{"a": .., "b": .., "overlap": bool}`.
pub struct FixtureOverlap(BTreeMap<(String, String), bool>);

#[derive(Deserialize)]
struct FixtureEntry {
    a: String,
    b: String,
    overlap: bool,
}

impl FixtureOverlap {
    pub fn load(path: &std::path::Path) -> Result<Self, AdapterError> {
        let entries: Vec<FixtureEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::from_pairs(entries.into_iter().map(|e| (e.a, e.b, e.overlap))))
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String, bool)>) -> Self {
        let mut map = BTreeMap::new();
        for (a, b, v) in pairs {
            let (a, b) = (normalize_label(&a), normalize_label(&b));
            map.insert((a.clone(), b.clone()), v);
            map.insert((b, a), v);
        }
        FixtureOverlap(map)
    }
}

impl OverlapAdapter for FixtureOverlap {
    fn overlap(&self, a: &str, b: &str) -> Result<bool, AdapterError> {
        self.0
            .get(&(normalize_label(a), normalize_label(b)))
            .copied()
            .ok_or_else(|| AdapterError::MissingFixture(format!("{a} / {b}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_default_is_token_intersection() {
        let r = OverlapResolver::default();
        assert_eq!(r.resolve_open("casual tone", "formal tone"), (true, Provenance::Deterministic));
        assert!(!r.resolve_open("singing", "formal").0);
        // Oracle: hand-computed token sets.
        for (a, b, want) in [("a b", "c d", false), ("Hello, World", "world peace", true), ("x-y", "y", true)] {
            assert_eq!(token_overlap(a, b), want, "{a} / {b}");
        }
    }

    #[test]
    fn adapter_verdict_wins_and_is_cached() {
        let fixture = FixtureOverlap::from_pairs([("casual tone".into(), "formal tone".into(), false)]);
        let r = OverlapResolver::new(Some(Box::new(fixture)));
        assert_eq!(r.resolve_open("formal tone", "casual  tone"), (false, Provenance::Adapter));
        assert_eq!(r.cache.lock().unwrap().len(), 1);
        let c = r.resolve(OverlapMode::Set, &Value::Str("casual tone".into()), &Value::Str("formal tone".into()));
        assert!(!c.overlap);
        assert_eq!(c.provenance, Provenance::Adapter);
    }

    #[test]
    fn adapter_failure_falls_back() {
        let r = OverlapResolver::new(Some(Box::new(FixtureOverlap::from_pairs([]))));
        let (v, p) = r.resolve_open("red apple", "apple pie");
        assert!(v);
        assert!(matches!(p, Provenance::AdapterFallback { .. }));
    }
}
