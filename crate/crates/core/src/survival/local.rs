use serde::{Deserialize, Serialize};

use super::SurvivalRecord;
use crate::error::CohortError;
use crate::metric::CohortFunctional;

/// Local treatment-effect estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Moments,
    #[default]
    #[serde(alias = "partial")]
    PartialLikelihood,
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moments" => Ok(EstimatorKind::Moments),
            "partial" | "partial_likelihood" => Ok(EstimatorKind::PartialLikelihood),
            other => Err(format!("unknown estimator `{other}` (expected moments or partial)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEffectEstimate {
    pub kind: EstimatorKind,
    /// Log hazard ratio (partial likelihood) or smoothed log relative risk (moments).
    pub alpha: f64,
    pub std_error: f64,
    /// Difference of arm outcome proportions (moments estimator only).
    pub raw_difference: Option<f64>,
    pub size: usize,
    pub n0: usize,
    pub n1: usize,
    pub events0: usize,
    pub events1: usize,
    /// False when one arm holds more than 80% of the cohort.
    pub balanced: bool,
    pub defined: bool,
    /// Monotone likelihood: the maximizer escapes to infinity.
    pub diverging: bool,
    pub iterations: usize,
}

impl LocalEffectEstimate {
    fn empty(kind: EstimatorKind, cohort: &[SurvivalRecord]) -> Self {
        let n1 = cohort.iter().filter(|r| r.treatment).count();
        let n0 = cohort.len() - n1;
        let events1 = cohort.iter().filter(|r| r.treatment && r.event).count();
        let events0 = cohort.iter().filter(|r| !r.treatment && r.event).count();
        let size = cohort.len();
        Self {
            kind,
            alpha: f64::NAN,
            std_error: f64::NAN,
            raw_difference: None,
            size,
            n0,
            n1,
            events0,
            events1,
            balanced: size > 0 && (n0.max(n1) as f64) <= 0.8 * size as f64,
            defined: false,
            diverging: false,
            iterations: 0,
        }
    }

    /// `alpha` when the estimate is finite and usable.
    pub fn value(&self) -> Option<f64> {
        (self.defined && !self.diverging && self.alpha.is_finite()).then_some(self.alpha)
    }
}

/// Arm outcome proportions: raw difference and the smoothed log relative risk
/// `ln((E1 + 1/2)/(n1 + 1/2)) - ln((E0 + 1/2)/(n0 + 1/2))`.
pub fn moments_alpha(cohort: &[SurvivalRecord]) -> LocalEffectEstimate {
    let mut est = LocalEffectEstimate::empty(EstimatorKind::Moments, cohort);
    if est.n0 == 0 || est.n1 == 0 {
        return est;
    }
    let (e0, e1) = (est.events0 as f64, est.events1 as f64);
    let (n0, n1) = (est.n0 as f64, est.n1 as f64);
    est.raw_difference = Some(e1 / n1 - e0 / n0);
    est.alpha = ((e1 + 0.5) / (n1 + 0.5)).ln() - ((e0 + 0.5) / (n0 + 0.5)).ln();
    est.std_error = (1.0 / (e1 + 0.5) - 1.0 / (n1 + 0.5) + 1.0 / (e0 + 0.5) - 1.0 / (n0 + 0.5))
        .max(0.0)
        .sqrt();
    est.defined = true;
    est
}

/// Breslow partial likelihood of a single binary covariate, collapsed to
/// per-event-time counts.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    /// `(events, treated events, at risk untreated, at risk treated)` per
    /// distinct event time; the risk set is `{t_Y >= t_Z}`.
    steps: Vec<(f64, f64, f64, f64)>,
}

impl PartialLikelihood {
    pub fn new(cohort: &[SurvivalRecord]) -> Self {
        let mut order: Vec<&SurvivalRecord> = cohort.iter().collect();
        order.sort_by(|a, b| b.time.total_cmp(&a.time));
        let mut steps = Vec::new();
        let (mut r0, mut r1) = (0.0, 0.0);
        let mut i = 0;
        while i < order.len() {
            let t = order[i].time;
            let (mut d, mut d1) = (0.0, 0.0);
            while i < order.len() && order[i].time == t {
                let r = order[i];
                if r.treatment {
                    r1 += 1.0;
                } else {
                    r0 += 1.0;
                }
                if r.event {
                    d += 1.0;
                    if r.treatment {
                        d1 += 1.0;
                    }
                }
                i += 1;
            }
            if d > 0.0 {
                steps.push((d, d1, r0, r1));
            }
        }
        Self { steps }
    }

    pub fn value(&self, alpha: f64) -> f64 {
        let ea = alpha.exp();
        self.steps
            .iter()
            .map(|&(d, d1, r0, r1)| d1 * alpha - d * (r0 + r1 * ea).ln())
            .sum()
    }

    pub fn gradient(&self, alpha: f64) -> f64 {
        let ea = alpha.exp();
        self.steps
            .iter()
            .map(|&(d, d1, r0, r1)| d1 - d * r1 * ea / (r0 + r1 * ea))
            .sum()
    }

    pub fn hessian(&self, alpha: f64) -> f64 {
        let ea = alpha.exp();
        -self
            .steps
            .iter()
            .map(|&(d, _, r0, r1)| {
                let s = r0 + r1 * ea;
                d * r0 * r1 * ea / (s * s)
            })
            .sum::<f64>()
    }

    /// Newton maximization from 0 with step halving. Returns the maximizer,
    /// the iteration count and whether `|alpha|` escaped past 50.
    pub fn maximize(&self) -> (f64, usize, bool) {
        let mut a = 0.0;
        let mut l = self.value(a);
        for it in 1..=200 {
            let g = self.gradient(a);
            let h = self.hessian(a);
            if h >= 0.0 {
                return (a, it, true);
            }
            let mut step = -g / h;
            let mut next = a + step;
            let mut ln = self.value(next);
            let mut halvings = 0;
            while ln < l && halvings < 60 {
                step *= 0.5;
                next = a + step;
                ln = self.value(next);
                halvings += 1;
            }
            a = next;
            l = ln;
            if a.abs() > 50.0 {
                return (a, it, true);
            }
            if step.abs() < 1e-13 * (1.0 + a.abs()) {
                return (a, it, false);
            }
        }
        (a, 200, false)
    }
}

/// One-parameter Cox fit of `lambda_0(t) e^{alpha T}` on the cohort.
pub fn partial_likelihood_alpha(cohort: &[SurvivalRecord]) -> LocalEffectEstimate {
    let mut est = LocalEffectEstimate::empty(EstimatorKind::PartialLikelihood, cohort);
    if est.n0 == 0 || est.n1 == 0 || est.events0 + est.events1 == 0 {
        return est;
    }
    est.defined = true;
    if est.events0 == 0 || est.events1 == 0 {
        est.diverging = true;
        est.alpha = if est.events1 > 0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return est;
    }
    let pl = PartialLikelihood::new(cohort);
    let (a, iterations, diverging) = pl.maximize();
    est.iterations = iterations;
    est.diverging = diverging;
    est.alpha = if diverging { a.signum() * f64::INFINITY } else { a };
    est.std_error = (-1.0 / pl.hessian(a)).sqrt();
    est
}

pub fn estimate_local(kind: EstimatorKind, cohort: &[SurvivalRecord]) -> LocalEffectEstimate {
    match kind {
        EstimatorKind::Moments => moments_alpha(cohort),
        EstimatorKind::PartialLikelihood => partial_likelihood_alpha(cohort),
    }
}

/// Local log hazard ratio as a cohort functional over stored records.
#[derive(Debug, Clone)]
pub struct LocalHazardRatio {
    pub records: Vec<SurvivalRecord>,
    pub kind: EstimatorKind,
    pub min: usize,
}

impl LocalHazardRatio {
    pub fn estimate(&self, cohort: &[usize]) -> LocalEffectEstimate {
        let sub: Vec<SurvivalRecord> = cohort.iter().map(|&i| self.records[i]).collect();
        estimate_local(self.kind, &sub)
    }
}

impl CohortFunctional for LocalHazardRatio {
    fn min_cohort(&self) -> usize {
        self.min
    }

    fn evaluate(&self, cohort: &[usize]) -> Result<f64, CohortError> {
        self.check_size(cohort)?;
        let est = self.estimate(cohort);
        est.value().ok_or_else(|| {
            CohortError::Undefined(format!(
                "{} treated / {} untreated with {} / {} events",
                est.n1, est.n0, est.events1, est.events0
            ))
        })
    }
}
