//! Flat key-value run configuration.
//!
//! Keys mirror the model, training and test-set fields. Files use a TOML
//! subset (one `key = value` per line, no tables); command-line `--set`
//! overrides use the same keys.

use std::fmt::Write as _;
use std::path::Path;

use tfa_core::attention::TfaVariant;
use tfa_core::data::TargetKind;
use tfa_core::metrics::TestSpec;
use tfa_core::restcn::ModelConfig;
use tfa_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

pub const KEYS: &[&str] = &[
    "blocks",
    "d_model",
    "d_f",
    "kernel",
    "max_dilation",
    "k_tfa",
    "c_mid",
    "variant",
    "target",
    "batch_size",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "clip_min",
    "clip_max",
    "epochs",
    "batches_per_epoch",
    "snr_min_db",
    "snr_max_db",
    "min_len",
    "max_len",
    "seed",
    "val_size",
    "test_per_condition",
    "test_seed",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub test: TestSpec,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse {value:?} as {expected}")))
}

/// Closest valid key by edit distance, if it is plausibly a typo.
pub fn nearest_key(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::damerau_levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, k)| k)
}

fn unknown_key(key: &str) -> CliError {
    let hint = match nearest_key(key) {
        Some(k) => format!("did you mean `{k}`? "),
        None => String::new(),
    };
    CliError::Usage(format!(
        "unknown config key `{key}`; {hint}valid keys: {}",
        KEYS.join(", ")
    ))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "blocks" => m.blocks = parse(key, value, "an integer")?,
            "d_model" => m.d_model = parse(key, value, "an integer")?,
            "d_f" => m.d_f = parse(key, value, "an integer")?,
            "kernel" => m.kernel = parse(key, value, "an integer")?,
            "max_dilation" => m.max_dilation = parse(key, value, "an integer")?,
            "k_tfa" => m.k_tfa = parse(key, value, "an integer")?,
            "c_mid" => m.c_mid = parse(key, value, "an integer")?,
            "variant" => m.variant = parse::<TfaVariant>(key, value, "one of off, ta, fa, tfa")?,
            "target" => t.target = parse::<TargetKind>(key, value, "irm or psm")?,
            "batch_size" => t.batch_size = parse(key, value, "an integer")?,
            "lr" => t.lr = parse(key, value, "a number")?,
            "adam_beta1" => t.adam_beta1 = parse(key, value, "a number")?,
            "adam_beta2" => t.adam_beta2 = parse(key, value, "a number")?,
            "adam_eps" => t.adam_eps = parse(key, value, "a number")?,
            "clip_min" => t.clip_min = parse(key, value, "a number")?,
            "clip_max" => t.clip_max = parse(key, value, "a number")?,
            "epochs" => t.epochs = parse(key, value, "an integer")?,
            "batches_per_epoch" => t.batches_per_epoch = parse(key, value, "an integer")?,
            "snr_min_db" => t.snr_min_db = parse(key, value, "an integer")?,
            "snr_max_db" => t.snr_max_db = parse(key, value, "an integer")?,
            "min_len" => {
                t.min_len = parse(key, value, "an integer")?;
                self.test.min_len = t.min_len;
            }
            "max_len" => {
                t.max_len = parse(key, value, "an integer")?;
                self.test.max_len = t.max_len;
            }
            "seed" => t.seed = parse(key, value, "a non-negative integer")?,
            "val_size" => t.val_size = parse(key, value, "an integer")?,
            "test_per_condition" => self.test.per_condition = parse(key, value, "an integer")?,
            "test_seed" => self.test.seed = parse(key, value, "a non-negative integer")?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies every key of a flat TOML document on top of `self`.
    pub fn merge_toml(&mut self, text: &str) -> CliResult<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config is not valid TOML: {e}")))?;
        for (key, value) in &table {
            let value = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(CliError::Usage(format!(
                        "config key `{key}` must be a scalar, got {}",
                        other.type_str()
                    )))
                }
            };
            self.set(key, &value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.merge_toml(&text)?;
        Ok(cfg)
    }

    fn value_of(&self, key: &str) -> String {
        let (m, t) = (&self.model, &self.train);
        let q = |s: &str| format!("\"{s}\"");
        let f = |v: f64| format!("{v:?}");
        match key {
            "blocks" => m.blocks.to_string(),
            "d_model" => m.d_model.to_string(),
            "d_f" => m.d_f.to_string(),
            "kernel" => m.kernel.to_string(),
            "max_dilation" => m.max_dilation.to_string(),
            "k_tfa" => m.k_tfa.to_string(),
            "c_mid" => m.c_mid.to_string(),
            "variant" => q(m.variant.as_str()),
            "target" => q(t.target.as_str()),
            "batch_size" => t.batch_size.to_string(),
            "lr" => f(t.lr),
            "adam_beta1" => f(t.adam_beta1),
            "adam_beta2" => f(t.adam_beta2),
            "adam_eps" => f(t.adam_eps),
            "clip_min" => f(t.clip_min),
            "clip_max" => f(t.clip_max),
            "epochs" => t.epochs.to_string(),
            "batches_per_epoch" => t.batches_per_epoch.to_string(),
            "snr_min_db" => t.snr_min_db.to_string(),
            "snr_max_db" => t.snr_max_db.to_string(),
            "min_len" => t.min_len.to_string(),
            "max_len" => t.max_len.to_string(),
            "seed" => t.seed.to_string(),
            "val_size" => t.val_size.to_string(),
            "test_per_condition" => self.test.per_condition.to_string(),
            "test_seed" => self.test.seed.to_string(),
            _ => unreachable!("{key} is not a config key"),
        }
    }

    /// Every key in canonical order; parses back to an equal config.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.test.per_condition == 0 {
            return Err(CliError::Usage("test_per_condition must be ≥ 1".into()));
        }
        Ok(())
    }
}
