//! Plain `key = value` config files and run fingerprints.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Parse { key: String, value: String },
    #[error("key `{0}` must not be empty")]
    Empty(String),
}

/// Parsed key-value pairs. Blank lines and `#` comments are ignored; keys
/// and values are trimmed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: k.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    /// Comma-separated list; an absent key yields `default`.
    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                let items = v.split(',').map(str::trim).filter(|s| !s.is_empty());
                let out = items.map(|s| parse_value(key, s)).collect::<Result<Vec<T>, _>>()?;
                if out.is_empty() {
                    return Err(ConfigError::Empty(key.to_string()));
                }
                Ok(out)
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse { key: key.to_string(), value: value.to_string() })
}

/// Sixteen hex digits of the SHA-256 of the pairs sorted by key, one
/// `key=value` line each. Insensitive to argument order.
pub fn fingerprint<K: Display, V: Display>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    let mut lines: Vec<String> = pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    lines.sort();
    let digest = Sha256::digest(lines.concat().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
