//! Flat `key = value` text used by run configs and checkpoint headers.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! paths (`model.d_model`, `conv.0.kernel`). Rendering is canonical: one
//! `key=value` per line in sorted key order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{NialError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            map.insert_assignment(line)
                .map_err(|msg| NialError::Parse { line: i + 1, msg })?;
        }
        Ok(map)
    }

    /// Applies one `key=value` assignment (as given to `--set`).
    pub fn insert_assignment(&mut self, assignment: &str) -> std::result::Result<(), String> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {assignment:?}"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("empty key in {assignment:?}"));
        }
        self.entries.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses `key` if present.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| NialError::Config(format!("{key}={v:?}: {e}")))
            })
            .transpose()
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse_opt(key)?
            .ok_or_else(|| NialError::Config(format!("missing required key {key}")))
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvMap {
        let p = format!("{prefix}.");
        KvMap {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
