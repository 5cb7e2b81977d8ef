//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use diip_core::error::{Error, Result};

/// Name of the echoed configuration in every output directory.
pub const ECHO_FILE: &str = "config.txt";
pub const SEED_ENV: &str = "DIIP_SEED";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::invalid(format!("config line {}: empty key", n + 1)));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs; `--key=value` also works.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(a) = it.next() {
            let Some(key) = a.strip_prefix("--") else {
                return Err(Error::invalid(format!("expected --key, got {a:?}")));
            };
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v);
                continue;
            }
            let v = it
                .next()
                .ok_or_else(|| Error::invalid(format!("--{key} needs a value")))?;
            self.set(key, v);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.replace('-', "_"), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get_str(key)
            .ok_or_else(|| Error::invalid(format!("missing required setting `{key}`")))
    }

    /// Typed lookup with a default for absent keys.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::invalid(format!("setting `{key}` = {v:?}: {e}"))),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::invalid(format!("setting `{key}` item {s:?}: {e}"))))
                .collect(),
        }
    }

    /// `seed`, else `DIIP_SEED`, else 0.
    pub fn seed(&self) -> Result<u64> {
        if self.contains("seed") {
            return self.get("seed", 0);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| Error::invalid(format!("{SEED_ENV}={v:?}: {e}"))),
            Err(_) => Ok(0),
        }
    }

    /// Rejects keys outside `known`, so a typo cannot silently fall back to
    /// a default.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown setting(s): {}", unknown.join(", "))))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Reads settings from a [`RunConfig`] while recording every resolved value,
/// defaults included, so the echo reproduces the run.
#[derive(Debug)]
pub struct Resolver<'a> {
    src: &'a RunConfig,
    effective: RunConfig,
}

impl<'a> Resolver<'a> {
    pub fn new(src: &'a RunConfig) -> Self {
        Self {
            src,
            effective: RunConfig::new(),
        }
    }

    pub fn get<T: FromStr + fmt::Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.src.get(key, default)?;
        self.effective.set(key, v.to_string());
        Ok(v)
    }

    pub fn require(&mut self, key: &str) -> Result<String> {
        let v = self.src.require(key)?.to_string();
        self.effective.set(key, v.clone());
        Ok(v)
    }

    pub fn optional(&mut self, key: &str) -> Option<String> {
        let v = self.src.get_str(key)?.to_string();
        self.effective.set(key, v.clone());
        Some(v)
    }

    pub fn list<T: FromStr + fmt::Display + Clone>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let v = self.src.get_list(key, default)?;
        let text: Vec<String> = v.iter().map(ToString::to_string).collect();
        self.effective.set(key, text.join(","));
        Ok(v)
    }

    pub fn seed(&mut self) -> Result<u64> {
        let v = self.src.seed()?;
        self.effective.set("seed", v.to_string());
        Ok(v)
    }

    /// The effective configuration; fails on settings nobody asked for.
    pub fn finish(self) -> Result<RunConfig> {
        let known: Vec<&str> = self.effective.values.keys().map(String::as_str).collect();
        self.src.check_known(&known)?;
        Ok(self.effective)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
