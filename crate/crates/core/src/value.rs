use std::fmt;

use serde::{Deserialize, Serialize};

/// A surface-level constant: the only literal sorts PyRule source can spell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<Value>),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    /// Flattens a list into its elements; scalars yield themselves.
    pub fn elements(&self) -> Vec<&Value> {
        match self {
            Value::List(items) => items.iter().flat_map(|v| v.elements()).collect(),
            other => vec![other],
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(true) => f.write_str("True"),
            Value::Bool(false) => f.write_str("False"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Case-folds, trims, and collapses internal whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lower-cased alphanumeric tokens of a value.
pub fn token_set(text: &str) -> std::collections::BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_normalization_collapses_whitespace_and_case() {
        assert_eq!(normalize_label("  Image   Request\t"), "image request");
    }

    #[test]
    fn untagged_json_round_trip() {
        let v = Value::List(vec![Value::Int(3), Value::Str("a".into()), Value::Bool(true)]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[3,"a",true]"#);
        assert_eq!(serde_json::from_str::<Value>(&s).unwrap(), v);
    }

    #[test]
    fn tokens_ignore_punctuation() {
        let t = token_set("Formal-tone, please!");
        assert!(t.contains("formal") && t.contains("tone") && t.contains("please"));
    }
}
