//! Synthetic trials with known individual treatment effects.

mod generate;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use generate::{
    gen_propensity_trial, gen_random_model, gen_sphere_trial, random_spd, simulate, tridiagonal_cov, RandomCoefficients,
};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::survival::{parse_flag, parse_real, SurvivalRecord, Weibull};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereEffect {
    /// Bump center on the positive octant of the first triple.
    #[serde(default = "default_center")]
    pub center: Vec<f64>,
    #[serde(default = "default_width")]
    pub width: f64,
    /// `sup |beta|`, so that `sup e^beta = e^amplitude`.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Maps the bump to `[-amplitude, amplitude]` instead of `[0, amplitude]`.
    #[serde(default = "default_true")]
    pub signed: bool,
}

fn default_center() -> Vec<f64> {
    vec![1.0 / 3f64.sqrt(); 3]
}

fn default_width() -> f64 {
    0.405
}

fn default_amplitude() -> f64 {
    3f64.ln()
}

fn default_true() -> bool {
    true
}

impl Default for SphereEffect {
    fn default() -> Self {
        Self {
            center: default_center(),
            width: default_width(),
            amplitude: default_amplitude(),
            signed: true,
        }
    }
}

impl SphereEffect {
    /// `beta_x` from the first feature triple.
    pub fn beta(&self, u: &[f64]) -> f64 {
        let d2: f64 = u.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let g = (-d2 / (2.0 * self.width * self.width)).exp();
        if self.signed {
            self.amplitude * (2.0 * g - 1.0)
        } else {
            self.amplitude * g
        }
    }
}

fn default_dim() -> usize {
    9
}

fn default_rho() -> f64 {
    0.5
}

fn default_gamma0() -> f64 {
    0.5
}

fn default_gamma() -> Vec<f64> {
    vec![1.0, 1.0]
}

fn default_condition() -> f64 {
    10.0
}

fn default_sparsity() -> f64 {
    0.5
}

fn default_triples() -> usize {
    3
}

fn default_p_treat() -> f64 {
    0.5
}

/// Feature, effect and assignment model of a synthetic trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrialModel {
    /// Feature triples uniform on the positive unit-sphere octant, randomized
    /// arms, treated times scaled by `e^beta_x`.
    Sphere {
        #[serde(default = "default_triples")]
        triples: usize,
        #[serde(default)]
        effect: SphereEffect,
        #[serde(default = "default_p_treat")]
        p_treat: f64,
    },
    /// `X ~ N(0, Sigma)` with tridiagonal `Sigma`, probit assignment and
    /// `h(X) = X_1 + 0.5 X_2 + 0.5 X_1 X_2 + T X_2`.
    Propensity {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_gamma0")]
        gamma0: f64,
        /// Leading entries of `gamma`, padded with zeros.
        #[serde(default = "default_gamma")]
        gamma: Vec<f64>,
    },
    /// Random SPD covariance and sparse random first and second order terms.
    Random {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_condition")]
        condition_bound: f64,
        #[serde(default = "default_sparsity")]
        sparsity: f64,
        #[serde(default = "default_gamma0")]
        gamma0: f64,
        #[serde(default = "default_gamma")]
        gamma: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CensoringSpec {
    Horizon { horizon: f64 },
    /// Horizon set so that this fraction of patients has an outcome; drawn
    /// uniformly from `[1/3, 1]` when absent.
    OutcomeFraction {
        #[serde(default)]
        fraction: Option<f64>,
    },
}

fn sphere_baseline() -> Weibull {
    Weibull { lambda: 2.0, k: 1.2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSpec {
    pub n: usize,
    pub model: TrialModel,
    #[serde(default = "sphere_baseline")]
    pub baseline: Weibull,
    pub censoring: CensoringSpec,
    #[serde(default)]
    pub seed: u64,
}

impl TrialSpec {
    pub fn sphere(n: usize, seed: u64) -> Self {
        Self {
            n,
            model: TrialModel::Sphere {
                triples: 3,
                effect: SphereEffect::default(),
                p_treat: 0.5,
            },
            baseline: sphere_baseline(),
            censoring: CensoringSpec::Horizon { horizon: 2.0 },
            seed,
        }
    }

    pub fn propensity(n: usize, seed: u64) -> Self {
        Self {
            n,
            model: TrialModel::Propensity {
                dim: 9,
                rho: 0.5,
                gamma0: 0.5,
                gamma: default_gamma(),
            },
            baseline: sphere_baseline(),
            censoring: CensoringSpec::Horizon { horizon: 2.0 },
            seed,
        }
    }

    pub fn random(n: usize, seed: u64) -> Self {
        Self {
            n,
            model: TrialModel::Random {
                dim: 9,
                condition_bound: 10.0,
                sparsity: 0.5,
                gamma0: 0.5,
                gamma: default_gamma(),
            },
            baseline: sphere_baseline(),
            censoring: CensoringSpec::OutcomeFraction { fraction: None },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        Weibull::new(self.baseline.lambda, self.baseline.k)
            .map_err(|e| match e {
                Error::Config { field, message } => Error::config(&format!("baseline.{field}"), message),
                e => e,
            })?;
        match self.censoring {
            CensoringSpec::Horizon { horizon } if !(horizon > 0.0) => {
                return Err(Error::config("censoring.horizon", "must be positive"));
            }
            CensoringSpec::OutcomeFraction { fraction: Some(f) } if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::config("censoring.fraction", "must lie in (0, 1]"));
            }
            _ => {}
        }
        match &self.model {
            TrialModel::Sphere { triples, effect, p_treat } => {
                if *triples == 0 {
                    return Err(Error::config("model.triples", "must be at least 1"));
                }
                if effect.center.len() != 3 {
                    return Err(Error::config("model.effect.center", "must have three entries"));
                }
                if !(effect.width > 0.0) {
                    return Err(Error::config("model.effect.width", "must be positive"));
                }
                if !effect.amplitude.is_finite() {
                    return Err(Error::config("model.effect.amplitude", "must be finite"));
                }
                if !(*p_treat > 0.0 && *p_treat < 1.0) {
                    return Err(Error::config("model.p_treat", "must lie in (0, 1)"));
                }
            }
            TrialModel::Propensity { dim, gamma, .. } => {
                if *dim < 2 {
                    return Err(Error::config("model.dim", "must be at least 2"));
                }
                if gamma.len() > *dim {
                    return Err(Error::config("model.gamma", "longer than the dimension"));
                }
            }
            TrialModel::Random { dim, condition_bound, sparsity, gamma, .. } => {
                if *dim < 2 {
                    return Err(Error::config("model.dim", "must be at least 2"));
                }
                if !(*condition_bound > 1.0) {
                    return Err(Error::config("model.condition_bound", "must exceed 1"));
                }
                if !(*sparsity > 0.0 && *sparsity <= 1.0) {
                    return Err(Error::config("model.sparsity", "must lie in (0, 1]"));
                }
                if gamma.len() > *dim {
                    return Err(Error::config("model.gamma", "longer than the dimension"));
                }
            }
        }
        Ok(())
    }
}

/// Per-patient ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Log hazard ratio of treatment for the patient.
    pub true_effect: Vec<f64>,
    /// `P(T = 1 | X)`.
    pub propensity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DataMatrix,
    pub records: Vec<SurvivalRecord>,
}

impl Dataset {
    pub fn n_points(&self) -> usize {
        self.records.len()
    }

    pub fn ids(&self) -> &[String] {
        self.features.point_ids()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(idx),
            records: idx.iter().map(|&i| self.records[i]).collect(),
        }
    }

    pub fn outcome_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.event).count() as f64 / self.records.len().max(1) as f64
    }

    /// CSV `id,<features>,treatment,time,event`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.features.feature_names().iter().cloned());
        header.extend(["treatment", "time", "event"].map(String::from));
        wtr.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row = vec![self.features.point_ids()[i].clone()];
            row.extend(self.features.row(i).iter().map(|v| format!("{v:?}")));
            row.push(u8::from(r.treatment).to_string());
            row.push(format!("{:?}", r.time));
            row.push(u8::from(r.event).to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a dataset CSV. Every column other than `id`, `treatment`, `time`
    /// and `event` is a feature; outcome columns may be absent when
    /// `require_outcomes` is false, in which case records are placeholders.
    pub fn read_csv<P: AsRef<Path>>(path: P, require_outcomes: bool) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let ci = find("id");
        let outcome = [find("treatment"), find("time"), find("event")];
        let has_outcomes = outcome.iter().all(Option::is_some);
        if require_outcomes && !has_outcomes {
            return Err(Error::Parse("dataset needs `treatment`, `time` and `event` columns".into()));
        }
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|&j| Some(j) != ci && !outcome.contains(&Some(j)))
            .collect();
        if feature_cols.is_empty() {
            return Err(Error::Parse("dataset has no feature columns".into()));
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut records = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = line + 2;
            ids.push(ci.map_or_else(|| (line - 2).to_string(), |c| rec[c].to_string()));
            for &j in &feature_cols {
                values.push(parse_real(&rec[j], &headers[j], line)?);
            }
            if has_outcomes {
                let [t, ti, e] = outcome.map(Option::unwrap);
                let r = SurvivalRecord::new(
                    parse_real(&rec[ti], "time", line)?,
                    parse_flag(&rec[e], "event", line)?,
                    parse_flag(&rec[t], "treatment", line)?,
                )
                .map_err(|e| Error::Parse(format!("row {line}: {e}")))?;
                records.push(r);
            } else {
                records.push(SurvivalRecord { time: 0.0, event: false, treatment: false });
            }
        }
        let n = ids.len();
        let names = feature_cols.iter().map(|&j| headers[j].clone()).collect();
        let features = DataMatrix::new(values, n, feature_cols.len(), ids, names)?;
        Ok(Self { features, records })
    }
}

impl GroundTruth {
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            true_effect: idx.iter().map(|&i| self.true_effect[i]).collect(),
            propensity: idx.iter().map(|&i| self.propensity[i]).collect(),
        }
    }

    /// CSV `id,true_effect,propensity`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P, ids: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["id", "true_effect", "propensity"])?;
        for (i, id) in ids.iter().enumerate() {
            wtr.write_record([
                id.clone(),
                format!("{:?}", self.true_effect[i]),
                format!("{:?}", self.propensity[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Self)> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut ids = Vec::new();
        let mut truth = Self { true_effect: Vec::new(), propensity: Vec::new() };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Parse(format!("row {}: expected 3 columns", line + 2)));
            }
            ids.push(rec[0].to_string());
            truth.true_effect.push(parse_real(&rec[1], "true_effect", line + 2)?);
            truth.propensity.push(parse_real(&rec[2], "propensity", line + 2)?);
        }
        Ok((ids, truth))
    }
}

/// A generated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub data: Dataset,
    pub truth: GroundTruth,
    /// Administrative censoring time used.
    pub horizon: f64,
    /// Targeted outcome fraction, when calibrated.
    pub target_fraction: Option<f64>,
    pub coefficients: Option<RandomCoefficients>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Pearson correlation over retained points, `None` when undefined.
    pub correlation: Option<f64>,
    pub retained: usize,
    pub total: usize,
}

impl Score {
    pub fn retained_fraction(&self) -> f64 {
        self.retained as f64 / self.total.max(1) as f64
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Correlation between estimates and truth over points that have an estimate
/// and pass the balance filter.
pub fn score_against_truth(estimates: &[Option<f64>], truth: &[f64], balanced: &[bool]) -> Result<Score> {
    if estimates.len() != truth.len() || balanced.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates, {} truth values and {} balance flags",
            estimates.len(),
            truth.len(),
            balanced.len()
        )));
    }
    let (mut f, mut t) = (Vec::new(), Vec::new());
    for i in 0..truth.len() {
        if let (Some(e), true) = (estimates[i], balanced[i]) {
            f.push(e);
            t.push(truth[i]);
        }
    }
    Ok(Score { correlation: pearson(&f, &t), retained: f.len(), total: truth.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn perfect_estimate_scores_one() {
        let t: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let est: Vec<Option<f64>> = t.iter().map(|v| Some(*v)).collect();
        let s = score_against_truth(&est, &t, &vec![true; 50]).unwrap();
        assert!((s.correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.retained, 50);
    }

    #[test]
    fn independent_noise_scores_near_zero() {
        let mut rng = substream(11, "noise", 0);
        let t: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let est: Vec<Option<f64>> = (0..2000).map(|_| Some(rng.random::<f64>())).collect();
        let s = score_against_truth(&est, &t, &vec![true; 2000]).unwrap();
        assert!(s.correlation.unwrap().abs() < 0.1);
    }

    #[test]
    fn all_filtered_is_undefined() {
        let s = score_against_truth(&[Some(1.0), Some(2.0)], &[1.0, 2.0], &[false, false]).unwrap();
        assert_eq!(s.correlation, None);
        assert_eq!(s.retained, 0);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = TrialSpec::random(100, 3);
        let text = toml::to_string(&spec).unwrap();
        let back: TrialSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let trial = simulate(&TrialSpec::sphere(50, 9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        trial.data.write_csv(&p).unwrap();
        let back = Dataset::read_csv(&p, true).unwrap();
        assert_eq!(back, trial.data);
        let tp = dir.path().join("t.csv");
        trial.truth.write_csv(&tp, trial.data.ids()).unwrap();
        let (ids, truth) = GroundTruth::read_csv(&tp).unwrap();
        assert_eq!(ids, trial.data.ids());
        assert_eq!(truth, trial.truth);
    }
}
