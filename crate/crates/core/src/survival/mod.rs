//! Survival models and estimators: Weibull sampling, local effect estimates by
//! moments and partial likelihood, multivariate Cox regression, the
//! misspecification bias oracle, Kaplan-Meier curves, log-rank tests and
//! recommendation grouping.

mod bias;
mod cox;
mod km;
mod local;
mod recommend;
mod weibull;

pub use bias::{mom_bias_oracle, BiasOracle, HazardModel, Y0Spec};
pub use cox::{cox_fit, CoxFit};
pub use km::{kaplan_meier, logrank_test, LogRankResult, SurvivalCurve};
pub use local::{
    estimate_local, moments_alpha, partial_likelihood_alpha, EstimatorKind, LocalEffectEstimate,
    LocalHazardRatio, PartialLikelihood,
};
pub use recommend::{recommend_groups, Group, Recommendation};
pub use weibull::{apply_treatment_and_censor, Censoring, Weibull};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed leave time, outcome indicator and treatment arm of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
    /// `true` for arm B.
    pub treatment: bool,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, treatment: bool) -> Result<Self> {
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::InvalidInput(format!("survival time must be finite and >= 0, got {time}")));
        }
        Ok(Self { time, event, treatment })
    }
}

pub(crate) fn parse_flag(v: &str, what: &str, line: usize) -> Result<bool> {
    match v.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse(format!("row {line}: {what} must be 0 or 1, got `{other}`"))),
    }
}

pub(crate) fn parse_real(v: &str, what: &str, line: usize) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {line}: {what} is not a number: `{v}`")))
}

/// Reads `id,time,event,treatment`.
pub fn read_records<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<SurvivalRecord>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let (ci, ct, ce, cx) = (col("id")?, col("time")?, col("event")?, col("treatment")?);
    let mut ids = Vec::new();
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        ids.push(rec[ci].to_string());
        let time = parse_real(&rec[ct], "time", line)?;
        let r = SurvivalRecord::new(
            time,
            parse_flag(&rec[ce], "event", line)?,
            parse_flag(&rec[cx], "treatment", line)?,
        )
        .map_err(|e| Error::Parse(format!("row {line}: {e}")))?;
        out.push(r);
    }
    Ok((ids, out))
}

pub fn write_records<P: AsRef<Path>>(path: P, ids: &[String], records: &[SurvivalRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["id", "time", "event", "treatment"])?;
    for (id, r) in ids.iter().zip(records) {
        wtr.write_record([
            id.clone(),
            format!("{:?}", r.time),
            u8::from(r.event).to_string(),
            u8::from(r.treatment).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
