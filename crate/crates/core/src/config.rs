//! Flat `key = value` config files. Keys mirror `TrainConfig` and grid field
//! names. Precedence is command-line flag, then file, then built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::alignment::LossWeights;
use crate::audit;
use crate::error::{Error, Result};
use crate::pipeline::TrainConfig;

pub const TRAIN_KEYS: &[&str] = &[
    "batch_size",
    "learning_rate",
    "epochs",
    "alpha",
    "beta",
    "branch_c_enabled",
    "branch_a_enabled",
    "anchor",
    "prompt_levels",
    "seed",
    "trainable_scope",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key {k}")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        KeyValues::parse(&audit::read_to_string(path)?, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Invalid(format!("config key {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    /// Entries from `overrides` win over entries here.
    pub fn layered(&self, overrides: &KeyValues) -> KeyValues {
        let mut entries = self.entries.clone();
        entries.extend(overrides.entries.clone());
        KeyValues { entries }
    }

    /// Rejects keys outside `allowed`, naming the first one found.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Invalid(format!("unknown config key {k}"))),
            None => Ok(()),
        }
    }

    /// Applies the training keys present here on top of `base`.
    pub fn apply_train(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut c = base.clone();
        if let Some(v) = self.parsed("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = self.parsed("learning_rate")? {
            c.learning_rate = v;
        }
        if let Some(v) = self.parsed("epochs")? {
            c.epochs = v;
        }
        let alpha = self.parsed("alpha")?.unwrap_or(c.weights.alpha);
        let beta = self.parsed("beta")?.unwrap_or(c.weights.beta);
        c.weights = LossWeights::new(alpha, beta)?;
        if let Some(v) = self.parsed("branch_c_enabled")? {
            c.branch_c_enabled = v;
        }
        if let Some(v) = self.parsed("branch_a_enabled")? {
            c.branch_a_enabled = v;
        }
        if let Some(v) = self.parsed("anchor")? {
            c.anchor = v;
        }
        if let Some(v) = self.parsed("prompt_levels")? {
            c.prompt_levels = v;
        }
        if let Some(v) = self.parsed("seed")? {
            c.seed = v;
        }
        if let Some(v) = self.parsed("trainable_scope")? {
            c.trainable_scope = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::Anchor;

    #[test]
    fn flag_beats_file_beats_default() {
        let file = KeyValues::parse("epochs = 7\nalpha = 0.3\nbeta = 0.7\n# note\n", Path::new("c")).unwrap();
        let mut flags = KeyValues::default();
        flags.set("epochs", "9");
        let c = file.layered(&flags).apply_train(&TrainConfig::default()).unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.weights.alpha, 0.3);
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = TrainConfig {
            anchor: Anchor::Level(2),
            branch_a_enabled: false,
            ..TrainConfig::desk()
        };
        let kv = KeyValues::parse(&c.canonical(), Path::new("c")).unwrap();
        kv.check_keys(TRAIN_KEYS).unwrap();
        assert_eq!(kv.apply_train(&TrainConfig::default()).unwrap(), c);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("epochs 3", Path::new("c")).is_err());
        assert!(KeyValues::parse("a = 1\na = 2", Path::new("c")).is_err());
    }
}
