//! `key = value` text format shared by network specs and CLI config files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' anything
//! entry   := key ws* '=' ws* value ws* comment?
//! key     := [A-Za-z0-9_.-]+
//! value   := any text up to '#' or end of line, trimmed
//! ```
//!
//! Keys are unique; a repeated key is an error. Order is preserved.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(KvError::Syntax {
                    line: i + 1,
                    reason: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
            {
                return Err(KvError::Syntax {
                    line: i + 1,
                    reason: format!("invalid key `{key}`"),
                });
            }
            map.insert(key, value.trim())?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, key: &str, value: impl Into<String>) -> Result<(), KvError> {
        if self.get(key).is_some() {
            return Err(KvError::Duplicate(key.to_string()));
        }
        self.entries.push((key.to_string(), value.into()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse_value<V: FromStr>(&self, key: &str) -> Result<Option<V>, KvError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| KvError::BadValue {
                    key: key.into(),
                    value: v.into(),
                })
            })
            .transpose()
    }

    /// Comma-separated list value.
    pub fn parse_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>, KvError> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim().parse().map_err(|_| KvError::BadValue {
                            key: key.into(),
                            value: v.into(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fail on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), KvError> {
        match self.entries.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(KvError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let m = KvMap::parse("# net\nprofile = desk-32\nconv_channels = 1, 2,3 # trailing\n\n").unwrap();
        assert_eq!(m.get("profile"), Some("desk-32"));
        assert_eq!(m.parse_list::<usize>("conv_channels").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(KvMap::parse("a = 1\na = 2"), Err(KvError::Duplicate(_))));
        assert!(matches!(KvMap::parse("just words"), Err(KvError::Syntax { line: 1, .. })));
        let m = KvMap::parse("x = 1").unwrap();
        assert!(matches!(m.check_keys(&["y"]), Err(KvError::UnknownKey(_))));
        assert!(m.parse_value::<f64>("x").unwrap() == Some(1.0));
        assert!(KvMap::parse("x = abc").unwrap().parse_value::<u32>("x").is_err());
    }
}
