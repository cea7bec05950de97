//! Flat `key = value` configuration with flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

pub const KEYS: &[&str] = &[
    "data",
    "templates",
    "params",
    "weights",
    "lm_corpus",
    "lm_endpoint",
    "lm_timeout_ms",
    "lenient",
    "planner",
    "k",
    "max_plans",
    "with_types",
    "seed",
    "temperature",
    "edge_cap",
    "out",
];

/// Raw settings; later `set` calls override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
            c.set(k.trim(), v.trim()).with_context(|| format!("config line {}", i + 1))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            bail!("unknown config key `{key}`");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.get(key) {
            None => Ok(None),
            Some(p) => {
                let p = PathBuf::from(p);
                if key != "out" && !p.exists() {
                    bail!("{key}: {} does not exist", p.display());
                }
                Ok(Some(p))
            }
        }
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("{key}: bad value `{v}`: {e}")),
        }
    }
}
