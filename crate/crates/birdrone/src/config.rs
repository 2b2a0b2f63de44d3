//! Flat `key = value` run configuration. File values fill in whatever the
//! command line leaves unset; every run writes the resolved set back out.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Name of the resolved configuration written into output directories.
pub const RESOLVED_FILE: &str = "config.resolved";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, keys must be unique.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Label { path: path.to_path_buf(), line: i + 1, reason };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(bad("empty key".into()));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(format!("duplicate key '{k}'")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Builds the effective configuration for one command: starts from
    /// `defaults`, applies the optional file, then every flag that was given.
    /// Keys outside `defaults` are rejected.
    pub fn resolve(defaults: &[(&str, Option<String>)], file: Option<&Path>, flags: &[(&str, Option<String>)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in defaults {
            if let Some(v) = v {
                cfg.values.insert(k.to_string(), v.clone());
            }
        }
        if let Some(path) = file {
            let from_file = Self::load(path)?;
            for (k, v) in from_file.values {
                if !defaults.iter().any(|(d, _)| *d == k) {
                    let known: Vec<&str> = defaults.iter().map(|(d, _)| *d).collect();
                    return Err(Error::Usage(format!(
                        "{}: unknown key '{k}', expected one of {}",
                        path.display(),
                        known.join(", ")
                    )));
                }
                cfg.values.insert(k, v);
            }
        }
        for (k, v) in flags {
            debug_assert!(defaults.iter().any(|(d, _)| d == k), "flag {k} missing from defaults");
            if let Some(v) = v {
                cfg.values.insert(k.to_string(), v.clone());
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Usage(format!("invalid value '{v}' for {key}: {e}"))))
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| Error::Usage(format!("missing required setting '{key}' (flag --{})", key.replace('_', "-"))))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(RESOLVED_FILE);
        fs::write(&p, self.render()).map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Vec<(&'static str, Option<String>)> {
        vec![("epochs", Some("10".into())), ("lr", Some("0.01".into())), ("data", None)]
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let dir = std::env::temp_dir().join(format!("bdrn-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let f = dir.join("run.cfg");
        fs::write(&f, "# comment\nepochs = 20\nlr=0.5 # trailing\n").unwrap();
        let cfg = RunConfig::resolve(&defaults(), Some(&f), &[("lr", Some("0.1".into())), ("data", None)]).unwrap();
        assert_eq!(cfg.require::<usize>("epochs").unwrap(), 20);
        assert_eq!(cfg.require::<f64>("lr").unwrap(), 0.1);
        assert!(matches!(cfg.require::<String>("data"), Err(Error::Usage(_))));
        let round = RunConfig::parse(&cfg.render(), &f).unwrap();
        assert_eq!(round, cfg);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_and_malformed_keys_are_errors() {
        let dir = std::env::temp_dir().join(format!("bdrn-cfg2-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let f = dir.join("run.cfg");
        fs::write(&f, "epoch = 20\n").unwrap();
        let err = RunConfig::resolve(&defaults(), Some(&f), &[]).unwrap_err();
        assert!(err.to_string().contains("unknown key 'epoch'"), "{err}");
        assert!(RunConfig::parse("lr 0.1", &f).is_err());
        assert!(RunConfig::parse("a = 1\na = 2", &f).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
