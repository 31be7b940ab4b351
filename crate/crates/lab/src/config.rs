//! Plain-text experiment configuration: `[section]` headers and
//! `key = value` lines. Unknown sections or keys are hard errors, and the
//! resolved configuration serializes to a canonical text that every run
//! logs and writes into its run directory.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use dnkd_core::corpus::SyntheticTaskConfig;
use dnkd_core::distill::LossWeights;
use dnkd_core::seq2seq::{LossMode, ModelConfig};
use dnkd_core::teacher::Temperature;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key {key:?} in section [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    MissingEquals { line: usize, text: String },
    #[error("line {line}: key {key:?} outside any section")]
    KeyOutsideSection { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key} ({expected})")]
    BadValue { line: usize, key: String, value: String, expected: &'static str },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Model architecture knobs (vocab sizes come from the task, the seed from
/// the run).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelArch {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self { hidden_dim: 64, num_layers: 2, num_heads: 2, ffn_dim: 128 }
    }
}

/// Everything a full experiment needs; defaults follow the reference
/// settings (k = 8, τ = 100, β = 0.3, λ = 0.5, α = 1.0, smoothing 0.1).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: SyntheticTaskConfig,
    pub model: ModelArch,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub label_smoothing: f64,
    pub k: usize,
    pub self_exclude: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    pub init_from_baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTaskConfig::default(),
            model: ModelArch::default(),
            lambda: 0.5,
            alpha: 1.0,
            beta: 0.3,
            tau: 100.0,
            label_smoothing: 0.1,
            k: 8,
            self_exclude: false,
            epochs: 14,
            batch_size: 16,
            learning_rate: 1e-3,
            seeds: vec![1, 2, 3],
            init_from_baseline: false,
        }
    }
}

impl ExperimentConfig {
    pub fn weights(&self) -> Result<LossWeights, ConfigError> {
        let tau = Temperature::new(self.tau).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        LossWeights::new(self.lambda, self.alpha, self.beta, self.label_smoothing, tau)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size_src: self.task.vocab_size_src,
            vocab_size_tgt: self.task.vocab_size_tgt,
            hidden_dim: self.model.hidden_dim,
            num_layers: self.model.num_layers,
            num_heads: self.model.num_heads,
            ffn_dim: self.model.ffn_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights()?;
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ConfigError::Invalid("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        let t = &self.task;
        let m = &self.model;
        format!(
            "[task]\n\
             vocab_size_src = {}\n\
             vocab_size_tgt = {}\n\
             num_train = {}\n\
             num_dev = {}\n\
             num_test = {}\n\
             len_min = {}\n\
             len_max = {}\n\
             seed = {}\n\
             ambiguity_rate = {}\n\
             reorder = {}\n\
             \n\
             [model]\n\
             hidden_dim = {}\n\
             num_layers = {}\n\
             num_heads = {}\n\
             ffn_dim = {}\n\
             \n\
             [loss]\n\
             lambda = {}\n\
             alpha = {}\n\
             beta = {}\n\
             tau = {}\n\
             label_smoothing = {}\n\
             \n\
             [retrieval]\n\
             k = {}\n\
             self_exclude = {}\n\
             \n\
             [train]\n\
             epochs = {}\n\
             batch_size = {}\n\
             learning_rate = {}\n\
             seeds = {}\n\
             init_from_baseline = {}\n",
            t.vocab_size_src,
            t.vocab_size_tgt,
            t.num_train,
            t.num_dev,
            t.num_test,
            t.len_min,
            t.len_max,
            t.seed,
            t.ambiguity_rate,
            if t.reorder { "on" } else { "off" },
            m.hidden_dim,
            m.num_layers,
            m.num_heads,
            m.ffn_dim,
            self.lambda,
            self.alpha,
            self.beta,
            self.tau,
            self.label_smoothing,
            self.k,
            if self.self_exclude { "on" } else { "off" },
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            if self.init_from_baseline { "on" } else { "off" },
        )
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::MissingEquals {
                    line,
                    text: trimmed.to_string(),
                })?;
                match name {
                    "task" | "model" | "loss" | "retrieval" | "train" => {
                        section = Some(name.to_string());
                    }
                    other => {
                        return Err(ConfigError::UnknownSection {
                            line,
                            section: other.to_string(),
                        })
                    }
                }
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::MissingEquals { line, text: trimmed.to_string() })?;
            let key = key.trim();
            let value = value.trim();
            let section = section
                .as_deref()
                .ok_or_else(|| ConfigError::KeyOutsideSection { line, key: key.to_string() })?;
            cfg.set(section, key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::parse(&text)
    }

    fn set(
        &mut self,
        section: &str,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<(), ConfigError> {
        fn parse<T: core::str::FromStr>(
            key: &str,
            value: &str,
            line: usize,
            expected: &'static str,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })
        }
        fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
            match value {
                "on" | "true" => Ok(true),
                "off" | "false" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "on/off",
                }),
            }
        }
        match (section, key) {
            ("task", "vocab_size_src") => {
                self.task.vocab_size_src = parse(key, value, line, "u32")?
            }
            ("task", "vocab_size_tgt") => {
                self.task.vocab_size_tgt = parse(key, value, line, "u32")?
            }
            ("task", "num_train") => self.task.num_train = parse(key, value, line, "usize")?,
            ("task", "num_dev") => self.task.num_dev = parse(key, value, line, "usize")?,
            ("task", "num_test") => self.task.num_test = parse(key, value, line, "usize")?,
            ("task", "len_min") => self.task.len_min = parse(key, value, line, "usize")?,
            ("task", "len_max") => self.task.len_max = parse(key, value, line, "usize")?,
            ("task", "seed") => self.task.seed = parse(key, value, line, "u64")?,
            ("task", "ambiguity_rate") => {
                self.task.ambiguity_rate = parse(key, value, line, "f64")?
            }
            ("task", "reorder") => self.task.reorder = parse_bool(key, value, line)?,
            ("model", "hidden_dim") => self.model.hidden_dim = parse(key, value, line, "usize")?,
            ("model", "num_layers") => self.model.num_layers = parse(key, value, line, "usize")?,
            ("model", "num_heads") => self.model.num_heads = parse(key, value, line, "usize")?,
            ("model", "ffn_dim") => self.model.ffn_dim = parse(key, value, line, "usize")?,
            ("loss", "lambda") => self.lambda = parse(key, value, line, "f64")?,
            ("loss", "alpha") => self.alpha = parse(key, value, line, "f64")?,
            ("loss", "beta") => self.beta = parse(key, value, line, "f64")?,
            ("loss", "tau") => self.tau = parse(key, value, line, "f64")?,
            ("loss", "label_smoothing") => self.label_smoothing = parse(key, value, line, "f64")?,
            ("retrieval", "k") => self.k = parse(key, value, line, "usize")?,
            ("retrieval", "self_exclude") => self.self_exclude = parse_bool(key, value, line)?,
            ("train", "epochs") => self.epochs = parse(key, value, line, "usize")?,
            ("train", "batch_size") => self.batch_size = parse(key, value, line, "usize")?,
            ("train", "learning_rate") => self.learning_rate = parse(key, value, line, "f64")?,
            ("train", "seeds") => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse::<u64>(key, part.trim(), line, "comma-separated u64")?);
                }
                self.seeds = seeds;
            }
            ("train", "init_from_baseline") => {
                self.init_from_baseline = parse_bool(key, value, line)?
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub self_exclude: Option<bool>,
}

impl Overrides {
    /// `--seed` replaces every seed in the config: the task seed and the
    /// training seed list.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.task.seed = seed;
            cfg.seeds = vec![seed];
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(tau) = self.tau {
            cfg.tau = tau;
        }
        if let Some(beta) = self.beta {
            cfg.beta = beta;
        }
        if let Some(lambda) = self.lambda {
            cfg.lambda = lambda;
        }
        if let Some(se) = self.self_exclude {
            cfg.self_exclude = se;
        }
    }
}

/// Loss mode parser shared by the CLI (`ce`, `nkd`, `dnkd`).
pub fn parse_mode(s: &str) -> Result<LossMode, String> {
    match s {
        "ce" => Ok(LossMode::Ce),
        "nkd" => Ok(LossMode::Nkd),
        "dnkd" => Ok(LossMode::Dnkd),
        other => Err(format!("unknown mode {other:?} (expected ce, nkd, or dnkd)")),
    }
}

/// Sweep axes (`k`, `beta`, `tau`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    Beta,
    Tau,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::K => write!(f, "k"),
            Self::Beta => write!(f, "beta"),
            Self::Tau => write!(f, "tau"),
        }
    }
}

pub fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    match s {
        "k" => Ok(SweepAxis::K),
        "beta" => Ok(SweepAxis::Beta),
        "tau" => Ok(SweepAxis::Tau),
        other => Err(format!("unknown sweep axis {other:?} (expected k, beta, or tau)")),
    }
}
