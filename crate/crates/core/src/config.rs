//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! case-sensitive; a repeated key is an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    file: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&content, &path.display().to_string())
    }

    pub fn parse(content: &str, file: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(file, n + 1, "<line>", "expected `key = value`"))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::parse(file, n + 1, "<key>", "empty key"));
            }
            if entries.insert(key.to_string(), (n + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(file, n + 1, key, "duplicate key"));
            }
        }
        Ok(Config {
            file: file.to_string(),
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Error naming the first key not in `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, (line, _))) => Err(Error::parse(
                &self.file,
                *line,
                k,
                format!("unknown key (expected one of: {})", known.join(", ")),
            )),
            None => Ok(()),
        }
    }

    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e: T::Err| Error::parse(&self.file, *line, key, e.to_string())),
        }
    }
}
