//! `key=value` text used by config files, dataset metadata and checkpoint headers.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{key}: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

/// Non-empty lines outside `#` comments, split at the first `=` and trimmed.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| KvError::Syntax { line: idx + 1, text: raw.to_string() })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render<K: Display, V: Display>(entries: impl IntoIterator<Item = (K, V)>) -> String {
    entries.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn value<T: FromStr>(key: &str, value: &str) -> Result<T, KvError> {
    value.parse().map_err(|_| KvError::Value { key: key.to_string(), value: value.to_string() })
}

/// Comma-separated list.
pub fn list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>, KvError> {
    text.split(',').map(|v| value(key, v.trim())).collect()
}
