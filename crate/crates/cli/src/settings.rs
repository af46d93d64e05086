//! Flat `key=value` settings: config file first, then command-line flags.
//!
//! Keys are spelled with underscores; `-` in a key is read as `_`, so
//! `min-count=5` and `min_count=5` are the same entry. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bienc_core::model::ModelConfig;
use bienc_core::par::Execution;
use bienc_core::train::TrainConfig;

use crate::CliError;

/// Every key a config file may contain, across all commands.
pub const KNOWN_KEYS: &[&str] = &[
    // paths
    "train",
    "val",
    "eval",
    "vocab",
    "embeddings",
    "checkpoint",
    "out",
    "cmc_out",
    "candidates",
    "context",
    // data
    "min_count",
    "context_len",
    "response_len",
    "val_limit",
    // training
    "learning_rate",
    "batch_size",
    "epochs",
    "max_steps",
    "seed",
    "clip_norm",
    "execution",
    "log_every",
    // sweep
    "param",
    "values",
    // model
    "arch",
    "embed_dim",
    "hidden_size",
    "depth",
    "head",
    "poly_degree",
    "poly_offset",
    "pooling",
    "link",
    "freeze_embeddings",
];

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

/// Collects every problem found while reading settings so they can be
/// reported together.
#[derive(Debug, Default)]
pub struct Problems(Vec<String>);

impl Problems {
    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn finish(self) -> Result<(), CliError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(self.0.join("\n  ")))
        }
    }
}

impl Settings {
    pub fn parse_config(text: &str, origin: &Path, problems: &mut Problems) -> Self {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("{}:{}: expected key=value", origin.display(), i + 1));
                continue;
            };
            let key = normalize_key(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                problems.push(format!("{}:{}: unknown key {key:?}", origin.display(), i + 1));
                continue;
            }
            map.insert(key, v.trim().to_string());
        }
        Settings { map }
    }

    /// Reads `config` if given, then applies `flags` on top.
    pub fn load(config: Option<&Path>, flags: Vec<(&'static str, Option<String>)>) -> Result<Self, CliError> {
        let mut problems = Problems::default();
        let mut settings = match config {
            Some(path) => match std::fs::read_to_string(path) {
                Ok(text) => Settings::parse_config(&text, path, &mut problems),
                Err(e) => return Err(CliError::Usage(format!("{}: {e}", path.display()))),
            },
            None => Settings::default(),
        };
        problems.finish()?;
        for (k, v) in flags {
            debug_assert!(KNOWN_KEYS.contains(&k), "flag {k} missing from KNOWN_KEYS");
            if let Some(v) = v {
                settings.map.insert(k.to_string(), v);
            }
        }
        Ok(settings)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn parsed<T: FromStr>(&self, key: &str, default: T, problems: &mut Problems) -> T {
        match self.get(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                problems.push(format!("invalid value {v:?} for {key}"));
                default
            }),
        }
    }

    pub fn optional<T: FromStr>(&self, key: &str, problems: &mut Problems) -> Option<T> {
        let v = self.get(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                problems.push(format!("invalid value {v:?} for {key}"));
                None
            }
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn required_path(&self, key: &str, problems: &mut Problems) -> PathBuf {
        self.path(key).unwrap_or_else(|| {
            problems.push(format!("missing required setting {key} (--{})", key.replace('_', "-")));
            PathBuf::new()
        })
    }

    /// Path that must already exist as a file.
    pub fn input_file(&self, key: &str, problems: &mut Problems) -> PathBuf {
        let p = self.required_path(key, problems);
        if !p.as_os_str().is_empty() && !p.is_file() {
            problems.push(format!("{key}: no such file {}", p.display()));
        }
        p
    }

    pub fn model_config(&self, problems: &mut Problems) -> ModelConfig {
        let mut cfg = ModelConfig::default();
        for key in ModelConfig::KEYS {
            if let Some(v) = self.get(key) {
                if let Err(e) = cfg.set(key, v) {
                    problems.push(e);
                }
            }
        }
        if let Err(e) = cfg.validate() {
            problems.push(e.to_string());
        }
        cfg
    }

    pub fn train_config(&self, problems: &mut Problems) -> TrainConfig {
        let d = TrainConfig::default();
        let execution = match self.get("execution") {
            None => d.execution,
            Some(v) => Execution::parse(v).unwrap_or_else(|| {
                problems.push(format!("invalid value {v:?} for execution (sequential|parallel)"));
                d.execution
            }),
        };
        let cfg = TrainConfig {
            learning_rate: self.parsed("learning_rate", d.learning_rate, problems),
            batch_size: self.parsed("batch_size", d.batch_size, problems),
            epochs: self.parsed("epochs", d.epochs, problems),
            max_steps: self.optional("max_steps", problems),
            seed: self.parsed("seed", d.seed, problems),
            clip_norm: self.parsed("clip_norm", d.clip_norm, problems),
            execution,
        };
        if let Err(e) = cfg.validate() {
            problems.push(e.to_string());
        }
        cfg
    }

    pub fn execution(&self, problems: &mut Problems) -> Execution {
        match self.get("execution") {
            None => Execution::default(),
            Some(v) => Execution::parse(v).unwrap_or_else(|| {
                problems.push(format!("invalid value {v:?} for execution"));
                Execution::default()
            }),
        }
    }
}
