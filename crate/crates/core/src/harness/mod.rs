//! Experiment pipelines: simulate, fit, extend, validate and recommend.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Paths, RunConfig};
pub use report::{histogram, write_histogram_csv, HistogramBin, Summary};

use crate::cloud::PointCloud;
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::extension::{estimate_for_new_point, ReferenceEmbedding};
use crate::metric::{iterate_algorithm1, RegularizedMetric};
use crate::rng::{substream, substream_seed};
use crate::sim::{score_against_truth, simulate, Dataset, GroundTruth, Trial};
use crate::survival::{
    cox_fit, kaplan_meier, logrank_test, recommend_groups, Group, LocalHazardRatio, LogRankResult, Recommendation,
    SurvivalCurve, SurvivalRecord,
};

/// Fitted metric, reference decomposition and the training data they need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub config: RunConfig,
    pub seed: u64,
    pub features: DataMatrix,
    pub records: Vec<SurvivalRecord>,
    pub metric: RegularizedMetric,
    pub reference: ReferenceEmbedding,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Writes `model.json`, `weights.csv`, `tree.txt` and `config.toml` into `dir`.
    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.json"), self.to_json()?)?;
        self.metric.weights.write_csv(
            fs::File::create(dir.join("weights.csv"))?,
            self.features.point_ids(),
            self.features.feature_names(),
        )?;
        fs::write(dir.join("tree.txt"), self.metric.tree.to_text())?;
        fs::write(dir.join("config.toml"), self.config.to_toml())?;
        Ok(())
    }

    /// Loads from a model directory or a `model.json` path.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let p = path.as_ref();
        let file = if p.is_dir() { p.join("model.json") } else { p.to_path_buf() };
        Ok(serde_json::from_slice(&fs::read(file)?)?)
    }

    fn functional(&self) -> LocalHazardRatio {
        LocalHazardRatio {
            records: self.records.clone(),
            kind: self.config.estimator,
            min: self.config.min_cohort,
        }
    }

    /// Local effect estimates for new points, from training neighborhoods only.
    pub fn estimate_points(&self, points: &DataMatrix) -> Result<Vec<PointEstimate>> {
        if points.feature_names() != self.features.feature_names() {
            return Err(Error::InvalidInput(format!(
                "features {:?} do not match the model's {:?}",
                points.feature_names(),
                self.features.feature_names()
            )));
        }
        let f = self.functional();
        let cloud: PointCloud = self.reference.cloud();
        let rule = self.config.metric.neighborhood;
        let thr = self.config.balance_threshold;
        Ok((0..points.n_points())
            .into_par_iter()
            .map(|i| {
                let id = points.point_ids()[i].clone();
                match estimate_for_new_point(&self.reference, &cloud, &f, points.row(i), &rule) {
                    Ok(e) => {
                        let treated = e.neighborhood.iter().filter(|&&j| self.records[j].treatment).count();
                        let size = e.neighborhood.len();
                        let share = treated.max(size - treated) as f64 / size.max(1) as f64;
                        PointEstimate {
                            id,
                            coordinates: Some(e.coordinates),
                            f_hat: e.value.as_ref().ok().copied(),
                            neighborhood_size: size,
                            treated_fraction: treated as f64 / size.max(1) as f64,
                            balanced: size > 0 && share <= thr,
                            note: e.value.err().map(|c| c.to_string()),
                        }
                    }
                    Err(err) => PointEstimate {
                        id,
                        coordinates: None,
                        f_hat: None,
                        neighborhood_size: 0,
                        treated_fraction: f64::NAN,
                        balanced: false,
                        note: Some(err.to_string()),
                    },
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub id: String,
    /// `None` when the point is out of the reference support.
    pub coordinates: Option<Vec<f64>>,
    pub f_hat: Option<f64>,
    pub neighborhood_size: usize,
    pub treated_fraction: f64,
    pub balanced: bool,
    pub note: Option<String>,
}

/// CSV `id,coord_1..coord_d,f_hat,neighborhood_size,balance_flag`; missing
/// values are empty fields.
pub fn write_point_estimates<P: AsRef<Path>>(path: P, est: &[PointEstimate], dim: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=dim).map(|k| format!("coord_{k}")));
    header.extend(["f_hat", "neighborhood_size", "balance_flag"].map(String::from));
    wtr.write_record(&header)?;
    for e in est {
        let mut row = vec![e.id.clone()];
        match &e.coordinates {
            Some(c) => row.extend(c.iter().map(|v| format!("{v:?}"))),
            None => row.extend(std::iter::repeat_n(String::new(), dim)),
        }
        row.push(e.f_hat.map(|v| format!("{v:?}")).unwrap_or_default());
        row.push(e.neighborhood_size.to_string());
        row.push(u8::from(e.balanced).to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `f_hat` and `balance_flag` back from a point-estimate CSV.
pub fn read_point_estimates<P: AsRef<Path>>(path: P) -> Result<Vec<(String, Option<f64>, bool)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let (cf, cb) = (col("f_hat")?, col("balance_flag")?);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = if rec[cf].is_empty() {
            None
        } else {
            Some(
                rec[cf]
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad f_hat", line + 2)))?,
            )
        };
        out.push((rec[0].to_string(), f, &rec[cb] == "1"));
    }
    Ok(out)
}

pub fn fit_model(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<ModelArtifact> {
    cfg.validate()?;
    let f = LocalHazardRatio {
        records: data.records.clone(),
        kind: cfg.estimator,
        min: cfg.min_cohort,
    };
    let metric = iterate_algorithm1(&data.features, &f, &cfg.metric, substream_seed(seed, "metric", 0))?;
    let reference =
        ReferenceEmbedding::from_metric(&data.features, &metric, &cfg.metric, substream_seed(seed, "reference", 0))?;
    Ok(ModelArtifact {
        config: cfg.clone(),
        seed,
        features: data.features.clone(),
        records: data.records.clone(),
        metric,
        reference,
    })
}

/// Seeded random split into train and test indices (each sorted).
pub fn fold_split(n: usize, train_fraction: f64, seed: u64, repeat: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "split", repeat as u64));
    let k = ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (mut train, mut test) = (idx[..k].to_vec(), idx[k..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Per-point effect estimates for the test part of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEstimates {
    pub f_hat: Vec<Option<f64>>,
    pub balanced: Vec<bool>,
}

pub trait FoldEstimator: Sync {
    fn estimate(&self, cfg: &RunConfig, train: &Dataset, test: &Dataset, test_idx: &[usize], seed: u64)
        -> Result<FoldEstimates>;
}

/// Fits the metric on the training rows and extends it to the test rows.
pub struct MetricEstimator;

impl FoldEstimator for MetricEstimator {
    fn estimate(&self, cfg: &RunConfig, train: &Dataset, test: &Dataset, _: &[usize], seed: u64) -> Result<FoldEstimates> {
        let model = fit_model(cfg, train, seed)?;
        let est = model.estimate_points(&test.features)?;
        Ok(FoldEstimates {
            f_hat: est.iter().map(|e| e.f_hat).collect(),
            balanced: est.iter().map(|e| e.balanced).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub repeat: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub correlation: Option<f64>,
    pub retained: usize,
    pub estimated: usize,
    pub recommended: usize,
    pub neutral: usize,
    pub anti_recommended: usize,
    pub logrank_statistic: Option<f64>,
    pub logrank_p: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub folds: Vec<FoldReport>,
    pub correlation: Option<Summary>,
    pub logrank_p: Option<Summary>,
    pub histogram: Vec<HistogramBin>,
    pub failed_folds: usize,
}

fn recommendation_stats(
    f_hat: &[Option<f64>],
    balanced: &[bool],
    records: &[SurvivalRecord],
    c: f64,
) -> Option<(Recommendation, Option<LogRankResult>)> {
    let usable: Vec<Option<f64>> = f_hat.iter().zip(balanced).map(|(f, b)| f.filter(|_| *b)).collect();
    let rec = recommend_groups(&usable, records, c).ok()?;
    let pick = |g: Group| -> Vec<SurvivalRecord> { rec.members(g).iter().map(|&i| records[i]).collect() };
    let lr = logrank_test(&pick(Group::Recommended), &pick(Group::AntiRecommended)).ok();
    Some((rec, lr))
}

pub fn run_validation<E: FoldEstimator>(
    cfg: &RunConfig,
    data: &Dataset,
    truth: Option<&GroundTruth>,
    estimator: &E,
) -> Result<ValidationReport> {
    cfg.validate()?;
    if let Some(t) = truth {
        if t.true_effect.len() != data.n_points() {
            return Err(Error::InvalidInput(format!(
                "{} truth rows for {} patients",
                t.true_effect.len(),
                data.n_points()
            )));
        }
    }
    let folds: Vec<FoldReport> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = substream_seed(cfg.seed, "fold", r as u64);
            let (train_idx, test_idx) = fold_split(data.n_points(), cfg.train_fraction, cfg.seed, r);
            let (train, test) = (data.select(&train_idx), data.select(&test_idx));
            let mut rep = FoldReport {
                repeat: r,
                seed,
                n_train: train_idx.len(),
                n_test: test_idx.len(),
                correlation: None,
                retained: 0,
                estimated: 0,
                recommended: 0,
                neutral: 0,
                anti_recommended: 0,
                logrank_statistic: None,
                logrank_p: None,
                error: None,
            };
            match estimator.estimate(cfg, &train, &test, &test_idx, seed) {
                Ok(est) => {
                    rep.estimated = est.f_hat.iter().flatten().count();
                    if let Some(t) = truth {
                        let tt: Vec<f64> = test_idx.iter().map(|&i| t.true_effect[i]).collect();
                        match score_against_truth(&est.f_hat, &tt, &est.balanced) {
                            Ok(s) => {
                                rep.correlation = s.correlation;
                                rep.retained = s.retained;
                            }
                            Err(e) => rep.error = Some(e.to_string()),
                        }
                    } else {
                        rep.retained = est.f_hat.iter().zip(&est.balanced).filter(|(f, b)| f.is_some() && **b).count();
                    }
                    if let Some((g, lr)) = recommendation_stats(&est.f_hat, &est.balanced, &test.records, cfg.c_threshold) {
                        rep.recommended = g.recommended;
                        rep.neutral = g.neutral;
                        rep.anti_recommended = g.anti_recommended;
                        rep.logrank_statistic = lr.as_ref().map(|l| l.statistic);
                        rep.logrank_p = lr.map(|l| l.p_value);
                    }
                    info!("fold {r}: correlation {:?}, {} retained", rep.correlation, rep.retained);
                }
                Err(e) => {
                    warn!("fold {r} failed: {e}");
                    rep.error = Some(e.to_string());
                }
            }
            rep
        })
        .collect();
    let corr: Vec<f64> = folds.iter().filter_map(|f| f.correlation).collect();
    let ps: Vec<f64> = folds.iter().filter_map(|f| f.logrank_p).collect();
    Ok(ValidationReport {
        histogram: histogram(&corr, -1.0, 1.0, cfg.histogram_bins),
        correlation: Summary::of(&corr),
        logrank_p: Summary::of(&ps),
        failed_folds: folds.iter().filter(|f| f.error.is_some()).count(),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationReport {
    pub estimates: Vec<PointEstimate>,
    /// `None` when fewer than two usable estimates exist.
    pub recommendation: Option<Recommendation>,
    pub recommended_curve: Option<SurvivalCurve>,
    pub anti_recommended_curve: Option<SurvivalCurve>,
    pub logrank: Option<LogRankResult>,
    pub notes: Vec<String>,
}

pub fn run_recommend(model: &ModelArtifact, test: &Dataset, c: f64) -> Result<RecommendationReport> {
    if !(c >= 0.0) {
        return Err(Error::config("c_threshold", "must be nonnegative"));
    }
    let estimates = model.estimate_points(&test.features)?;
    let usable: Vec<Option<f64>> = estimates.iter().map(|e| e.f_hat.filter(|_| e.balanced)).collect();
    let mut notes = Vec::new();
    let recommendation = match recommend_groups(&usable, &test.records, c) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("no grouping: {e}"));
            None
        }
    };
    let (mut rc, mut ac, mut logrank) = (None, None, None);
    if let Some(r) = &recommendation {
        let pick = |g: Group| -> Vec<SurvivalRecord> { r.members(g).iter().map(|&i| test.records[i]).collect() };
        let (a, b) = (pick(Group::Recommended), pick(Group::AntiRecommended));
        if r.neutral == r.groups.len() {
            notes.push("all patients are neutral at this threshold".into());
        }
        if a.is_empty() || b.is_empty() {
            notes.push(format!(
                "curves omitted: {} recommended, {} anti-recommended",
                a.len(),
                b.len()
            ));
        } else {
            rc = Some(kaplan_meier(&a));
            ac = Some(kaplan_meier(&b));
            match logrank_test(&a, &b) {
                Ok(l) => logrank = Some(l),
                Err(e) => notes.push(format!("log-rank undefined: {e}")),
            }
        }
    }
    Ok(RecommendationReport {
        estimates,
        recommendation,
        recommended_curve: rc,
        anti_recommended_curve: ac,
        logrank,
        notes,
    })
}

/// Prefixes file errors with the offending path.
fn at_path<T>(p: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", p.display()))),
        Error::Csv(c) => match c.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", p.display()))),
            other => Error::Parse(format!("{}: {other:?}", p.display())),
        },
        Error::Parse(m) => Error::Parse(format!("{}: {m}", p.display())),
        e => e,
    })
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p)?;
    Ok(())
}

fn require_path(p: &Option<PathBuf>, field: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::config(field, "path is required for this command"))
}

/// Dataset and optional truth named in the config, or simulated from
/// `trial` when no dataset path is given.
pub fn load_inputs(cfg: &RunConfig) -> Result<(Dataset, Option<GroundTruth>)> {
    match &cfg.paths.dataset {
        Some(p) => {
            let data = at_path(p, Dataset::read_csv(p, true))?;
            let truth = match &cfg.paths.truth {
                Some(t) => {
                    let (ids, truth) = at_path(t, GroundTruth::read_csv(t))?;
                    if ids != data.ids() {
                        return Err(Error::InvalidInput("truth ids do not match the dataset".into()));
                    }
                    Some(truth)
                }
                None => None,
            };
            Ok((data, truth))
        }
        None => {
            let spec = cfg
                .trial
                .as_ref()
                .ok_or_else(|| Error::config("paths.dataset", "give a dataset path or a [trial] table"))?;
            let t = simulate(spec)?;
            Ok((t.data, Some(t.truth)))
        }
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Trial> {
    cfg.validate()?;
    let spec = cfg.trial.as_ref().ok_or_else(|| Error::config("trial", "simulate needs a [trial] table"))?;
    let trial = simulate(spec)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    trial.data.write_csv(out.join("dataset.csv"))?;
    trial.truth.write_csv(out.join("truth.csv"), trial.data.ids())?;
    fs::write(out.join("trial.toml"), toml::to_string(spec).expect("trial spec serializes"))?;
    fs::write(out.join("report.txt"), report::simulate_report(&trial))?;
    Ok(trial)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<ModelArtifact> {
    cfg.validate()?;
    let (data, _) = load_inputs(cfg)?;
    let model = fit_model(cfg, &data, cfg.seed)?;
    let out = cfg.out_dir();
    let dir = cfg.paths.model.clone().unwrap_or_else(|| out.join("model"));
    model.save(&dir)?;
    ensure_dir(&out)?;
    fs::write(out.join("report.txt"), report::fit_report(&model))?;
    Ok(model)
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let (data, truth) = load_inputs(cfg)?;
    let rep = run_validation(cfg, &data, truth.as_ref(), &MetricEstimator)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    write_histogram_csv(out.join("histogram.csv"), &rep.histogram)?;
    report::write_folds_csv(out.join("folds.csv"), &rep.folds)?;
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(&rep)?)?;
    fs::write(out.join("report.txt"), report::validation_report(&rep))?;
    Ok(rep)
}

pub fn cmd_recommend(cfg: &RunConfig) -> Result<RecommendationReport> {
    cfg.validate()?;
    let mp = require_path(&cfg.paths.model, "paths.model")?;
    let model = at_path(&mp, ModelArtifact::load(&mp))?;
    let (test, _) = load_inputs(cfg)?;
    let rep = run_recommend(&model, &test, cfg.c_threshold)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    report::write_recommendations_csv(out.join("recommendations.csv"), &rep)?;
    if let (Some(a), Some(b)) = (&rep.recommended_curve, &rep.anti_recommended_curve) {
        a.write_csv(fs::File::create(out.join("curves_recommended.csv"))?)?;
        b.write_csv(fs::File::create(out.join("curves_anti_recommended.csv"))?)?;
    }
    fs::write(out.join("report.txt"), report::recommend_report(&rep, cfg.c_threshold))?;
    Ok(rep)
}

pub fn cmd_extend(cfg: &RunConfig) -> Result<Vec<PointEstimate>> {
    cfg.validate()?;
    let mp = require_path(&cfg.paths.model, "paths.model")?;
    let model = at_path(&mp, ModelArtifact::load(&mp))?;
    let pp = require_path(&cfg.paths.points, "paths.points")?;
    let points = at_path(&pp, Dataset::read_csv(&pp, false))?;
    let est = model.estimate_points(&points.features)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    write_point_estimates(out.join("extension.csv"), &est, model.reference.dimension)?;
    Ok(est)
}

/// Multivariate Cox fit of treatment plus every feature.
pub fn treatment_cox_fit(data: &Dataset) -> Result<crate::survival::CoxFit> {
    let m = data.features.n_features();
    let n = data.n_points();
    let mut values = Vec::with_capacity(n * (m + 1));
    for i in 0..n {
        values.push(f64::from(u8::from(data.records[i].treatment)));
        values.extend_from_slice(data.features.row(i));
    }
    let mut names = vec!["treatment".to_string()];
    names.extend(data.features.feature_names().iter().cloned());
    let x = DataMatrix::new(values, n, m + 1, data.ids().to_vec(), names)?;
    cox_fit(&x, &data.records)
}
