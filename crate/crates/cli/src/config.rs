//! Flat `key=value` settings shared by the subcommands.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use texsel_core::augment::{DEFAULT_PAIRS_PER_BATCH, DEFAULT_SOURCES_PER_TARGET};
use texsel_core::metrics::DEFAULT_KAPPA;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    BadConfigSyntax { line: usize, msg: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
}

pub const KEYS: [&str; 9] = [
    "k",
    "seed",
    "kappa",
    "batch_pairs",
    "jobs",
    "steps",
    "batch_size",
    "lr",
    "holdout",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub k: usize,
    pub seed: u64,
    pub kappa: f64,
    pub batch_pairs: usize,
    pub jobs: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            k: DEFAULT_SOURCES_PER_TARGET,
            seed: 0,
            kappa: DEFAULT_KAPPA,
            batch_pairs: DEFAULT_PAIRS_PER_BATCH,
            jobs: 1,
            steps: 5000,
            batch_size: 64,
            lr: 0.1,
            holdout: 0.2,
        }
    }
}

/// Flag values; `None` means "not given on the command line".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub kappa: Option<f64>,
    pub batch_pairs: Option<usize>,
    pub jobs: Option<usize>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub holdout: Option<f64>,
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse()
        .map_err(|e: T::Err| ConfigError::BadConfigSyntax {
            line,
            msg: format!("{key}={raw}: {e}"),
        })
}

impl Settings {
    /// Applies one `key=value` pair; `line` is only used in errors.
    fn set(&mut self, line: usize, key: &str, raw: &str) -> Result<(), ConfigError> {
        match key {
            "k" => self.k = parse_value(line, key, raw)?,
            "seed" => self.seed = parse_value(line, key, raw)?,
            "kappa" => self.kappa = parse_value(line, key, raw)?,
            "batch_pairs" => self.batch_pairs = parse_value(line, key, raw)?,
            "jobs" => self.jobs = parse_value(line, key, raw)?,
            "steps" => self.steps = parse_value(line, key, raw)?,
            "batch_size" => self.batch_size = parse_value(line, key, raw)?,
            "lr" => self.lr = parse_value(line, key, raw)?,
            "holdout" => self.holdout = parse_value(line, key, raw)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Reads `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn from_config_text(text: &str) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadConfigSyntax {
                    line: i + 1,
                    msg: format!("expected key=value, got {line:?}"),
                });
            };
            s.set(i + 1, key.trim(), value.trim())?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = o.$f { self.$f = v; })*};
        }
        take!(
            k,
            seed,
            kappa,
            batch_pairs,
            jobs,
            steps,
            batch_size,
            lr,
            holdout
        );
    }

    pub fn resolve(config_text: Option<&str>, o: &Overrides) -> Result<Self, ConfigError> {
        let mut s = match config_text {
            Some(t) => Self::from_config_text(t)?,
            None => Self::default(),
        };
        s.apply(o);
        Ok(s)
    }
}

impl fmt::Display for Settings {
    /// The normalized settings, one `key=value` per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "k={}", self.k)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "kappa={}", self.kappa)?;
        writeln!(f, "batch_pairs={}", self.batch_pairs)?;
        writeln!(f, "jobs={}", self.jobs)?;
        writeln!(f, "steps={}", self.steps)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "lr={}", self.lr)?;
        write!(f, "holdout={}", self.holdout)
    }
}
