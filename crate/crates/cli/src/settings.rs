//! Effective configuration: command-line flags layered over a flat `key=value` file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

/// Values from the config file, the keys consumed so far, and the resolved values in order.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    effective: Map<String, Value>,
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!(contract(format!("config line {}: expected key=value", n + 1))))?;
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!(contract(format!("config line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(out)
}

pub fn contract(msg: impl Into<String>) -> hessian_penalty::Error {
    hessian_penalty::Error::Contract(msg.into())
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings { file, ..Settings::default() })
    }

    /// Resolves `key`: the flag wins over the file, the file over `default`.
    pub fn resolve<T: Serialize>(
        &mut self,
        key: &str,
        flag: Option<&str>,
        default: T,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        self.used.insert(key.to_string());
        let raw = flag.map(str::to_string).or_else(|| self.file.get(key).cloned());
        let value = match raw {
            Some(s) => parse(&s).map_err(|e| anyhow!(contract(format!("invalid value {s:?} for {key}: {e}"))))?,
            None => default,
        };
        self.effective.insert(key.to_string(), serde_json::to_value(&value)?);
        Ok(value)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<&str>, default: T) -> Result<T>
    where
        T: Serialize + FromStr,
        T::Err: Display,
    {
        self.resolve(key, flag, default, |s| s.parse::<T>().map_err(|e| anyhow!("{e}")))
    }

    /// Optional value with no default.
    pub fn optional<T>(&mut self, key: &str, flag: Option<&str>) -> Result<Option<T>>
    where
        T: Serialize + FromStr,
        T::Err: Display,
    {
        self.resolve(key, flag, None, |s| s.parse::<T>().map(Some).map_err(|e| anyhow!("{e}")))
    }

    /// Comma-separated list; an empty string is the empty list.
    pub fn list<T>(&mut self, key: &str, flag: Option<&str>, default: Vec<T>) -> Result<Vec<T>>
    where
        T: Serialize + FromStr,
        T::Err: Display,
    {
        self.resolve(key, flag, default, parse_list)
    }

    /// Fails on config-file keys that the command never asked for.
    pub fn finish(self) -> Result<Map<String, Value>> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            bail!(contract(format!("unknown config keys {unknown:?}")));
        }
        Ok(self.effective)
    }
}

pub fn parse_list<T>(s: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow!("{p:?}: {e}")))
        .collect()
}

/// `a..b` (inclusive) or a single value.
pub fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?),
        None => {
            let v = s.trim().parse()?;
            (v, v)
        }
    };
    if a > b {
        bail!("empty range {a}..{b}");
    }
    Ok((a, b))
}
