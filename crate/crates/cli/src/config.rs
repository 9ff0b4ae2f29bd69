//! Flat `key = value` run configuration. Later sources override earlier
//! ones: built-in defaults, then a config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        let mut c = RunConfig::default();
        c.set("command", command);
        c
    }

    /// Parses `key = value` lines. Blank lines and lines starting with `#`
    /// are skipped; values run to the end of the line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", no + 1))?;
            let k = k.trim();
            if k.is_empty() {
                bail!("config line {}: empty key", no + 1);
            }
            c.set(k, v.trim());
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Copies every entry of `other` over this one, except `command`.
    pub fn merge(&mut self, other: &RunConfig) {
        for (k, v) in &other.values {
            if k != "command" {
                self.values.insert(k.clone(), v.clone());
            }
        }
    }

    pub fn set_opt<V: Display>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Fills `key` with `default` when unset, then parses it.
    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        if !self.values.contains_key(key) {
            self.set(key, &default);
            return Ok(default);
        }
        self.parsed(key)
    }

    pub fn opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.parsed(key).map(Some),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.raw(key).is_none() {
            bail!("missing required setting `{key}`");
        }
        self.parsed(key)
    }

    fn parsed<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key).unwrap_or_default();
        raw.parse().map_err(|e| anyhow!("setting `{key}` = `{raw}`: {e}"))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<PathBuf>(key)
    }

    /// Enum setting spelled like its serialized name, e.g. `point-only`.
    pub fn named<T: DeserializeOwned>(&mut self, key: &str, default: &str) -> Result<T> {
        let raw = self.get(key, default.to_string())?;
        serde_json::from_value(serde_json::Value::String(raw.clone()))
            .map_err(|_| anyhow!("setting `{key}`: unknown value `{raw}`"))
    }

    /// Comma-separated list, e.g. `64,128`.
    pub fn list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let joined = default.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let raw = self.get(key, joined)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("setting `{key}` item `{s}`: {e}")))
            .collect()
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders_round_trip() {
        let c = RunConfig::parse("# run\nepochs = 3\n\n  metric=cd \nop = {\"a\":\"x#1\"}\n").unwrap();
        assert_eq!(c.raw("epochs"), Some("3"));
        assert_eq!(c.raw("metric"), Some("cd"));
        assert_eq!(c.raw("op"), Some(r#"{"a":"x#1"}"#));
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::parse("seed = 1\nlr = 0.1").unwrap();
        c.set_opt("seed", Some(9));
        c.set_opt::<u64>("lr", None);
        assert_eq!(c.get("seed", 0u64).unwrap(), 9);
        assert_eq!(c.get("lr", 0.5).unwrap(), 0.1);
        assert_eq!(c.get("epochs", 200usize).unwrap(), 200);
        assert_eq!(c.raw("epochs"), Some("200"));
    }

    #[test]
    fn bad_lines_and_values_are_reported() {
        assert!(RunConfig::parse("just words").is_err());
        let mut c = RunConfig::parse("epochs = many").unwrap();
        let e = c.get("epochs", 1usize).unwrap_err().to_string();
        assert!(e.contains("epochs"), "{e}");
        assert!(c.require::<u64>("absent").is_err());
    }

    #[test]
    fn named_and_list_settings() {
        let mut c = RunConfig::parse("segmentation = point-only\nwidths = 8, 16").unwrap();
        let s: lpm_core::model::SegHead = c.named("segmentation", "joint").unwrap();
        assert_eq!(s, lpm_core::model::SegHead::PointOnly);
        assert_eq!(c.list::<usize>("widths", &[1]).unwrap(), vec![8, 16]);
        assert_eq!(c.list::<usize>("other", &[3, 4]).unwrap(), vec![3, 4]);
        assert!(c.named::<lpm_core::model::SegHead>("bogus", "sideways").is_err());
    }
}
