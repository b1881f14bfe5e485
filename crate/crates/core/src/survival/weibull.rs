use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SurvivalRecord;
use crate::error::{Error, Result};

/// Weibull law with survival function `S(t) = exp(-lambda t^k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weibull {
    pub lambda: f64,
    pub k: f64,
}

impl Weibull {
    pub fn new(lambda: f64, k: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be positive, got {lambda}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::config("k", format!("must be positive, got {k}")));
        }
        Ok(Self { lambda, k })
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        self.lambda * t.powf(self.k)
    }

    pub fn hazard(&self, t: f64) -> f64 {
        self.lambda * self.k * t.powf(self.k - 1.0)
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// Time `t` with `S(t) = 1 - p`.
    pub fn quantile(&self, p: f64) -> f64 {
        (-(1.0 - p).ln() / self.lambda).powf(1.0 / self.k)
    }

    /// Inverse transform draw `(-ln U / lambda)^{1/k}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_scaled(rng, 0.0)
    }

    /// Draw under the proportional-hazards multiplier `e^eta`.
    pub fn sample_scaled<R: Rng + ?Sized>(&self, rng: &mut R, eta: f64) -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        (-u.ln() / (self.lambda * eta.exp())).powf(1.0 / self.k)
    }
}

/// Censoring mechanisms independent of outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Censoring {
    /// Everyone still at risk at `horizon` is censored there.
    Administrative { horizon: f64 },
    /// Exponential dropout with the given rate, optionally also cut at a horizon.
    Exponential {
        rate: f64,
        #[serde(default)]
        horizon: Option<f64>,
    },
}

impl Censoring {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Censoring::Administrative { horizon } => {
                if !(horizon > 0.0) {
                    return Err(Error::config("censoring.horizon", "must be positive"));
                }
            }
            Censoring::Exponential { rate, horizon } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::config("censoring.rate", "must be positive"));
                }
                if horizon.is_some_and(|h| !(h > 0.0)) {
                    return Err(Error::config("censoring.horizon", "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Censoring::Administrative { horizon } => horizon,
            Censoring::Exponential { rate, horizon } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let c = -u.ln() / rate;
                horizon.map_or(c, |h| c.min(h))
            }
        }
    }

    /// Observed record for outcome time `w` and censoring time `c`.
    pub fn observe(w: f64, c: f64, treatment: bool) -> SurvivalRecord {
        SurvivalRecord {
            time: w.min(c),
            event: w <= c,
            treatment,
        }
    }
}

/// Scales treated outcome times by `e^beta` and censors at `horizon`.
pub fn apply_treatment_and_censor(w: f64, treatment: bool, beta: f64, horizon: f64) -> SurvivalRecord {
    let t = if treatment { w * beta.exp() } else { w };
    Censoring::observe(t, horizon, treatment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn median_of_sphere_baseline() {
        let w = Weibull::new(2.0, 1.2).unwrap();
        let want = (2f64.ln() / 2.0).powf(1.0 / 1.2);
        assert!((w.quantile(0.5) - want).abs() < 1e-15);
        assert!((want - 0.4135).abs() < 1e-4);
        let mut rng = substream(1, "weibull", 0);
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| w.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[500_000] - want).abs() < 0.005);
        assert_eq!(w.survival(0.0), 1.0);
    }

    #[test]
    fn unit_shape_is_exponential() {
        let w = Weibull::new(2.0, 1.0).unwrap();
        let mut rng = substream(2, "weibull", 0);
        let mean: f64 = (0..200_000).map(|_| w.sample(&mut rng)).sum::<f64>() / 200_000.0;
        assert!((mean - 0.5).abs() < 0.005);
    }

    #[test]
    fn treatment_and_censoring() {
        let r = apply_treatment_and_censor(0.7, true, 0.0, 2.0);
        assert_eq!((r.time, r.event), (0.7, true));
        let r = apply_treatment_and_censor(3.0, false, 0.0, 2.0);
        assert_eq!((r.time, r.event), (2.0, false));
        let r = apply_treatment_and_censor(1.0, true, 3f64.ln(), 2.0);
        assert_eq!((r.time, r.event, r.treatment), (2.0, false, true));
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(Weibull::new(0.0, 1.0).is_err());
        assert!(Weibull::new(1.0, -1.0).is_err());
    }
}
