use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FoldReport, ModelArtifact, RecommendationReport, ValidationReport};
use crate::error::Result;
use crate::sim::Trial;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Some(Self {
            count: n,
            mean,
            std: var.sqrt(),
            median,
            min: s[0],
            max: s[n - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins on `[lo, hi]`; the last bin is closed and values outside
/// the range are clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let w = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * w,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * w },
            count: 0,
        })
        .collect();
    for v in values {
        let b = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

pub fn write_histogram_csv<P: AsRef<Path>>(path: P, bins: &[HistogramBin]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["lo", "hi", "count"])?;
    for b in bins {
        wtr.write_record([format!("{:?}", b.lo), format!("{:?}", b.hi), b.count.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub(super) fn write_folds_csv<P: AsRef<Path>>(path: P, folds: &[FoldReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "repeat",
        "seed",
        "n_train",
        "n_test",
        "correlation",
        "retained",
        "recommended",
        "neutral",
        "anti_recommended",
        "logrank_statistic",
        "logrank_p",
        "error",
    ])?;
    for f in folds {
        wtr.write_record([
            f.repeat.to_string(),
            f.seed.to_string(),
            f.n_train.to_string(),
            f.n_test.to_string(),
            opt(f.correlation),
            f.retained.to_string(),
            f.recommended.to_string(),
            f.neutral.to_string(),
            f.anti_recommended.to_string(),
            opt(f.logrank_statistic),
            opt(f.logrank_p),
            f.error.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub(super) fn write_recommendations_csv<P: AsRef<Path>>(path: P, rep: &RecommendationReport) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["id", "f_hat", "group", "neighborhood_size", "balance_flag"])?;
    for (i, e) in rep.estimates.iter().enumerate() {
        let group = rep
            .recommendation
            .as_ref()
            .map_or("neutral", |r| r.groups[i].label());
        wtr.write_record([
            e.id.clone(),
            opt(e.f_hat),
            group.to_string(),
            e.neighborhood_size.to_string(),
            u8::from(e.balanced).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub(super) fn simulate_report(t: &Trial) -> String {
    let n = t.data.n_points();
    let treated = t.data.records.iter().filter(|r| r.treatment).count();
    let mut s = String::new();
    writeln!(s, "patients: {n}").unwrap();
    writeln!(s, "features: {}", t.data.features.n_features()).unwrap();
    writeln!(s, "treated: {treated} ({:.4})", treated as f64 / n as f64).unwrap();
    writeln!(s, "outcome_fraction: {:.4}", t.data.outcome_fraction()).unwrap();
    writeln!(s, "horizon: {:.6}", t.horizon).unwrap();
    if let Some(q) = t.target_fraction {
        writeln!(s, "target_fraction: {q:.4}").unwrap();
    }
    s
}

pub(super) fn fit_report(m: &ModelArtifact) -> String {
    let mut s = m.metric.report();
    let sv: Vec<String> = m.reference.singular_values.iter().map(|v| format!("{v:.6}")).collect();
    writeln!(s, "reference singular values: [{}]", sv.join(", ")).unwrap();
    writeln!(s, "reference dimension: {}", m.reference.dimension).unwrap();
    s
}

fn summary_line(s: &mut String, name: &str, v: &Option<Summary>) {
    match v {
        Some(v) => writeln!(
            s,
            "{name}: n={} mean={:.4} std={:.4} median={:.4} min={:.4} max={:.4}",
            v.count, v.mean, v.std, v.median, v.min, v.max
        )
        .unwrap(),
        None => writeln!(s, "{name}: undefined").unwrap(),
    }
}

pub(super) fn validation_report(r: &ValidationReport) -> String {
    let mut s = String::new();
    writeln!(s, "folds: {} ({} failed)", r.folds.len(), r.failed_folds).unwrap();
    summary_line(&mut s, "correlation", &r.correlation);
    summary_line(&mut s, "logrank_p", &r.logrank_p);
    for f in &r.folds {
        let mut line = format!(
            "fold {} seed={} correlation={} retained={}/{}",
            f.repeat,
            f.seed,
            f.correlation.map_or("undefined".into(), |c| format!("{c:.4}")),
            f.retained,
            f.n_test
        );
        if let Some(e) = &f.error {
            line.push_str(&format!(" error={e}"));
        }
        writeln!(s, "{line}").unwrap();
    }
    s
}

pub(super) fn recommend_report(r: &RecommendationReport, c: f64) -> String {
    let mut s = String::new();
    writeln!(s, "c_threshold: {c}").unwrap();
    writeln!(s, "patients: {}", r.estimates.len()).unwrap();
    writeln!(s, "estimated: {}", r.estimates.iter().filter(|e| e.f_hat.is_some()).count()).unwrap();
    if let Some(g) = &r.recommendation {
        writeln!(s, "sigma: {:.6}", g.sigma).unwrap();
        writeln!(s, "recommended: {}", g.recommended).unwrap();
        writeln!(s, "neutral: {}", g.neutral).unwrap();
        writeln!(s, "anti_recommended: {}", g.anti_recommended).unwrap();
    }
    if let Some(l) = &r.logrank {
        writeln!(s, "logrank_statistic: {:.6}", l.statistic).unwrap();
        writeln!(s, "logrank_p: {:.6e}", l.p_value).unwrap();
    }
    for n in &r.notes {
        writeln!(s, "note: {n}").unwrap();
    }
    s
}
