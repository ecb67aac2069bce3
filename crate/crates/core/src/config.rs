//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value settings. Lines starting with `#` are comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected `key = value`", n + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.get_str(key).ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get_str(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::config(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.get_str(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| Error::config(key, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Copies every entry of `other` over `self`.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_typed_access() {
        let c = Config::parse("# exp\nmodel = fst-cldnn\nseed=7\nsizes = 1, 2,3\n\n").unwrap();
        assert_eq!(c.require_str("model").unwrap(), "fst-cldnn");
        assert_eq!(c.require::<u64>("seed").unwrap(), 7);
        assert_eq!(c.get_list::<usize>("sizes").unwrap().unwrap(), vec![1, 2, 3]);
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
        let err = c.require::<u64>("epochs").unwrap_err();
        assert!(err.to_string().contains("epochs"));
        let err = Config::parse("seed = x").unwrap().require::<u64>("seed").unwrap_err();
        assert!(err.to_string().contains("seed"));
        assert!(Config::parse("novalue").is_err());
    }

    #[test]
    fn display_round_trips() {
        let c = Config::new().with("b", 2).with("a", "x y");
        assert_eq!(Config::parse(&c.to_string()).unwrap(), c);
    }
}
