use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::MetricConfig;
use crate::sim::TrialSpec;
use crate::survival::EstimatorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Model directory written by `fit`.
    pub model: Option<PathBuf>,
    /// New points for `extend`.
    pub points: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub trial: Option<TrialSpec>,
    pub metric: MetricConfig,
    pub estimator: EstimatorKind,
    /// Smallest cohort on which the local estimator is evaluated.
    pub min_cohort: usize,
    /// Largest share of one arm in a neighborhood that still counts as balanced.
    pub balance_threshold: f64,
    pub c_threshold: f64,
    pub repeats: usize,
    pub train_fraction: f64,
    pub histogram_bins: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trial: None,
            metric: MetricConfig::default(),
            estimator: EstimatorKind::default(),
            min_cohort: 40,
            balance_threshold: 0.8,
            c_threshold: 0.5,
            repeats: 20,
            train_fraction: 0.8,
            histogram_bins: 20,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        if let Some(t) = &self.trial {
            t.validate().map_err(|e| match e {
                Error::Config { field, message } => Error::config(&format!("trial.{field}"), message),
                e => e,
            })?;
        }
        if self.min_cohort == 0 {
            return Err(Error::config("min_cohort", "must be at least 1"));
        }
        if !(self.balance_threshold >= 0.5 && self.balance_threshold <= 1.0) {
            return Err(Error::config("balance_threshold", "must lie in [0.5, 1]"));
        }
        if !(self.c_threshold >= 0.0) {
            return Err(Error::config("c_threshold", "must be nonnegative"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        if self.histogram_bins == 0 {
            return Err(Error::config("histogram_bins", "must be at least 1"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("bogus"));
        assert!(RunConfig::from_toml("[metric]\nwhatever = 1\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.trial = Some(TrialSpec::sphere(100, 2));
        c.paths.dataset = Some("data.csv".into());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_weibull_names_field() {
        let text = "[trial]\nn = 10\n[trial.model]\nmodel = \"sphere\"\n[trial.baseline]\nlambda = -1.0\nk = 1.2\n[trial.censoring]\nkind = \"horizon\"\nhorizon = 2.0\n";
        let c = RunConfig::from_toml(text).unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("trial.baseline.lambda"), "{err}");
    }
}
