//! JSON experiment configs. Unknown keys are rejected; relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use langshift::report::{Method, Metric};
use langshift::retrieval::DegeneratePolicy;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// An error in how the tool was invoked or configured (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads and parses a config. A missing file is a runtime error; a file
/// that does not match the schema is a usage error.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// How to obtain one language mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanRef {
    /// A mean file written by `langshift mean`.
    File(PathBuf),
    /// Computed on the fly from a dump.
    Dump(PathBuf),
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Tatoeba]
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveConfig {
    pub queries: PathBuf,
    pub candidates: PathBuf,
    pub gold: PathBuf,
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub means: BTreeMap<String, MeanRef>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Only used by `mds`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fixed BUCC threshold; tuned on the gold pairs when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub degenerate_policy: DegeneratePolicy,
}

impl RetrieveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.metrics.is_empty() {
            return Err(usage("methods and metrics must be non-empty"));
        }
        if self.source == self.target {
            return Err(usage("source and target languages must differ"));
        }
        if !self.alpha.is_finite() {
            return Err(usage("alpha must be finite"));
        }
        let needs_means = self.methods.iter().any(|m| *m != Method::Original);
        if needs_means {
            for lang in [&self.source, &self.target] {
                if !self.means.contains_key(lang) {
                    return Err(usage(format!("zero_mean and mds need a mean for language {lang}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: RetrieveConfig = serde_json::from_str(
            r#"{"queries":"q","candidates":"c","gold":"g","source":"en","target":"de",
                "means":{"en":{"file":"en.mean"},"de":{"dump":"de.embd"}}}"#,
        )
        .unwrap();
        assert_eq!(c.methods, Method::ALL.to_vec());
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.means["de"], MeanRef::Dump("de.embd".into()));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_missing_means_are_rejected() {
        let bad = r#"{"queries":"q","candidates":"c","gold":"g","source":"en","target":"de","mehtods":[]}"#;
        assert!(serde_json::from_str::<RetrieveConfig>(bad).is_err());
        let c: RetrieveConfig = serde_json::from_str(
            r#"{"queries":"q","candidates":"c","gold":"g","source":"en","target":"de"}"#,
        )
        .unwrap();
        assert!(c.validate().is_err());
    }
}
