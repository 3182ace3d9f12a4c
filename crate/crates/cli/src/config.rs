//! Settings resolution: built-in defaults, then a `key = value` config file,
//! then command-line flags.
//!
//! Config file syntax: one `key = value` per line, `#` starts a comment.
//! Keys use the flag names with underscores (`mask_ratio`, `max_words`, ...).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{input_err, CliError, CliResult};

pub const KNOWN_KEYS: &[&str] = &[
    "vocab",
    "input",
    "output",
    "preset",
    "phase",
    "mask_ratio",
    "seed",
    "shards",
    "steps",
    "grad_check",
    "words",
    "max_words",
    "format",
    "batch_size",
    "lr",
    "warmup",
    "resume",
    "checkpoint",
    "text",
    "grad_samples",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse_config(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
            let k = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("config line {}: unknown key {k:?}", i + 1)));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn load_config(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| input_err(path.display(), e))?;
        Self::parse_config(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Config(format!("invalid value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        self.path(key)
            .ok_or_else(|| CliError::Config(format!("missing required setting --{}", key.replace('_', "-"))))
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(CliError::Config(format!("invalid boolean {v:?} for {key}"))),
        }
    }

    /// Resolved values, for manifests.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}
