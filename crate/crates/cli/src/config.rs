//! Flat run configuration with three override layers: config file values are
//! overridden by `GESTAUTH_*` environment variables, which are overridden by
//! command-line flags. Every resolved key is recorded so the run directory
//! can echo the exact configuration that produced its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

/// Every key any subcommand understands. Config files and environment
/// overrides are checked against this list so typos fail loudly instead of
/// silently falling back to defaults. A key that is valid here but unused by
/// the running subcommand is ignored.
pub const KNOWN_KEYS: &[&str] = &[
    // corpus production
    "raw",
    "out",
    "acc_tag",
    "gyr_tag",
    "users",
    "gestures",
    "non_gestures",
    "noise",
    "train_fraction",
    "val_fraction",
    "split_seed",
    // shared run plumbing
    "name",
    "seed",
    "corpus",
    // authentication classifier
    "target_user",
    "arch",
    "lr",
    "pos_weight",
    "epochs",
    "patience",
    "batch_size",
    "limited_fraction",
    // generative model
    "exclude_user",
    "reg",
    "beta",
    "alpha",
    "loss",
    "temperature",
    "wae_kernel",
    "warmup_epochs",
    "pretrain_epochs",
    "vae",
    // synthesis
    "strategy",
    "mix_weight",
    "count",
    // evaluation and experiments
    "scores",
    "mode",
    "holdout",
    "n_synthetic",
    "per_terminal",
    "include_real_negatives",
    "trees",
    "min_samples_leaf",
    "forest_seed",
    "n_positive",
    "n_negative",
    "use_reconstructions",
    "counts",
];

/// Merged file + environment values, plus the record of what each command
/// actually resolved.
#[derive(Debug)]
pub struct ConfigBag {
    values: BTreeMap<String, Value>,
    resolved: BTreeMap<String, Value>,
}

fn scalar_ok(v: &Value) -> bool {
    matches!(v, Value::String(_) | Value::Number(_) | Value::Bool(_))
}

impl ConfigBag {
    /// Loads the optional config file, overlays `GESTAUTH_*` environment
    /// variables, and rejects unknown keys and non-scalar values.
    pub fn load(path: Option<&Path>) -> Result<ConfigBag, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Input(format!("config file {}: {e}", path.display()))
            })?;
            let parsed: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::Input(format!("config file {}: {e}", path.display()))
            })?;
            let Value::Object(map) = parsed else {
                return Err(CliError::Input(format!(
                    "config file {} must hold a flat JSON object",
                    path.display()
                )));
            };
            for (key, value) in map {
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return Err(CliError::Input(format!(
                        "unknown config key {key:?} in {}",
                        path.display()
                    )));
                }
                if !scalar_ok(&value) {
                    return Err(CliError::Input(format!(
                        "config key {key:?} must be a scalar (string, number or bool)"
                    )));
                }
                values.insert(key, value);
            }
        }
        for (name, raw) in std::env::vars() {
            let Some(suffix) = name.strip_prefix("GESTAUTH_") else {
                continue;
            };
            let key = suffix.to_ascii_lowercase();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Input(format!(
                    "environment override {name} does not match any config key"
                )));
            }
            // Numbers and bools parse as themselves; anything else is a string.
            let value = match serde_json::from_str::<Value>(&raw) {
                Ok(v) if scalar_ok(&v) => v,
                _ => Value::String(raw),
            };
            values.insert(key, value);
        }
        Ok(ConfigBag {
            values,
            resolved: BTreeMap::new(),
        })
    }

    /// The fully-resolved configuration this run used, for echoing into the
    /// run directory.
    pub fn resolved(&self) -> &BTreeMap<String, Value> {
        &self.resolved
    }

    fn record<T: Into<Value>>(&mut self, key: &str, value: T) {
        self.resolved.insert(key.to_string(), value.into());
    }

    fn lookup(&self, key: &str) -> Option<&Value> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered config key {key}");
        self.values.get(key)
    }

    pub fn string(
        &mut self,
        key: &str,
        flag: Option<&str>,
        default: Option<&str>,
    ) -> Result<String, CliError> {
        let value = match flag {
            Some(v) => v.to_string(),
            None => match self.lookup(key) {
                Some(Value::String(s)) => s.clone(),
                Some(other) => {
                    return Err(CliError::Input(format!(
                        "config key {key:?} must be a string, got {other}"
                    )))
                }
                None => match default {
                    Some(d) => d.to_string(),
                    None => return Err(missing(key)),
                },
            },
        };
        self.record(key, value.clone());
        Ok(value)
    }

    /// A string-valued key with no default; `None` when absent everywhere.
    pub fn string_opt(&mut self, key: &str, flag: Option<&str>) -> Result<Option<String>, CliError> {
        match flag {
            Some(v) => {
                self.record(key, v);
                Ok(Some(v.to_string()))
            }
            None => match self.lookup(key) {
                Some(Value::String(s)) => {
                    let s = s.clone();
                    self.record(key, s.clone());
                    Ok(Some(s))
                }
                Some(other) => Err(CliError::Input(format!(
                    "config key {key:?} must be a string, got {other}"
                ))),
                None => Ok(None),
            },
        }
    }

    pub fn path(
        &mut self,
        key: &str,
        flag: Option<&Path>,
        default: Option<&str>,
    ) -> Result<PathBuf, CliError> {
        let flag_str = flag.map(|p| p.display().to_string());
        Ok(PathBuf::from(self.string(key, flag_str.as_deref(), default)?))
    }

    pub fn f64(
        &mut self,
        key: &str,
        flag: Option<f64>,
        default: Option<f64>,
    ) -> Result<f64, CliError> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => v.as_f64().ok_or_else(|| {
                    CliError::Input(format!("config key {key:?} must be a number, got {v}"))
                })?,
                None => match default {
                    Some(d) => d,
                    None => return Err(missing(key)),
                },
            },
        };
        self.record(key, value);
        Ok(value)
    }

    /// A number-valued key with no default; `None` when absent everywhere.
    pub fn f64_opt(&mut self, key: &str, flag: Option<f64>) -> Result<Option<f64>, CliError> {
        match flag {
            Some(v) => {
                self.record(key, v);
                Ok(Some(v))
            }
            None => match self.lookup(key) {
                Some(v) => {
                    let parsed = v.as_f64().ok_or_else(|| {
                        CliError::Input(format!("config key {key:?} must be a number, got {v}"))
                    })?;
                    self.record(key, parsed);
                    Ok(Some(parsed))
                }
                None => Ok(None),
            },
        }
    }

    pub fn u64(
        &mut self,
        key: &str,
        flag: Option<u64>,
        default: Option<u64>,
    ) -> Result<u64, CliError> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => v.as_u64().ok_or_else(|| {
                    CliError::Input(format!(
                        "config key {key:?} must be a non-negative integer, got {v}"
                    ))
                })?,
                None => match default {
                    Some(d) => d,
                    None => return Err(missing(key)),
                },
            },
        };
        self.record(key, value);
        Ok(value)
    }

    pub fn usize(
        &mut self,
        key: &str,
        flag: Option<usize>,
        default: Option<usize>,
    ) -> Result<usize, CliError> {
        Ok(self.u64(key, flag.map(|v| v as u64), default.map(|v| v as u64))? as usize)
    }

    pub fn bool(
        &mut self,
        key: &str,
        flag: Option<bool>,
        default: bool,
    ) -> Result<bool, CliError> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(Value::Bool(b)) => *b,
                Some(other) => {
                    return Err(CliError::Input(format!(
                        "config key {key:?} must be a bool, got {other}"
                    )))
                }
                None => default,
            },
        };
        self.record(key, value);
        Ok(value)
    }
}

fn missing(key: &str) -> CliError {
    CliError::Input(format!(
        "missing required setting {key:?}: pass --{} or set it in the config file",
        key.replace('_', "-")
    ))
}
