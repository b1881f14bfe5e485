use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Censoring, SurvivalRecord, Weibull};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Baseline (untreated) log risk `Y_0(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Y0Spec {
    Constant(f64),
    /// `Y_0(X) = mu + beta^T X` with `X ~ N(0, cov)`.
    Linear { mu: f64, beta: Vec<f64>, cov: Vec<Vec<f64>> },
}

/// `lambda(t | X) = lambda_0(t) exp(alpha T_X + Y_0(X))` with a Weibull
/// baseline, independent censoring and `P(T_X = 1) = p_treat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub baseline: Weibull,
    pub alpha: f64,
    pub y0: Y0Spec,
    pub censoring: Censoring,
    pub p_treat: f64,
}

struct CovariateSampler {
    chol: Option<DMatrix<f64>>,
    mu: f64,
    beta: DVector<f64>,
}

impl CovariateSampler {
    fn new(spec: &Y0Spec) -> Result<Self> {
        match spec {
            Y0Spec::Constant(mu) => Ok(Self { chol: None, mu: *mu, beta: DVector::zeros(0) }),
            Y0Spec::Linear { mu, beta, cov } => {
                let m = beta.len();
                if cov.len() != m || cov.iter().any(|r| r.len() != m) {
                    return Err(Error::config("y0.cov", format!("must be {m}x{m}")));
                }
                let c = DMatrix::from_fn(m, m, |i, j| cov[i][j]);
                let chol = c
                    .cholesky()
                    .ok_or_else(|| Error::config("y0.cov", "must be positive definite"))?;
                Ok(Self {
                    chol: Some(chol.l()),
                    mu: *mu,
                    beta: DVector::from_vec(beta.clone()),
                })
            }
        }
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match &self.chol {
            None => self.mu,
            Some(l) => {
                let z = DVector::from_fn(l.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
                self.mu + self.beta.dot(&(l * z))
            }
        }
    }

    fn quadratic(&self) -> f64 {
        match &self.chol {
            None => 0.0,
            Some(l) => {
                let lb = l.transpose() * &self.beta;
                lb.dot(&lb)
            }
        }
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.comp
    }
}

impl HazardModel {
    pub fn validate(&self) -> Result<()> {
        Weibull::new(self.baseline.lambda, self.baseline.k)?;
        self.censoring.validate()?;
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return Err(Error::config("p_treat", "both arms need positive probability"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite"));
        }
        CovariateSampler::new(&self.y0).map(|_| ())
    }

    /// `P(D = 1)` for a subject whose total log risk is `eta`.
    pub fn outcome_probability(&self, eta: f64) -> f64 {
        let scale = eta.exp();
        match self.censoring {
            Censoring::Administrative { horizon } => -(-scale * self.baseline.cumulative_hazard(horizon)).exp_m1(),
            Censoring::Exponential { rate, horizon } => {
                // substitute s = e^eta Lambda_0(w): P = int e^{-s} e^{-rate w(s)} ds
                let s_max = horizon.map_or(50.0, |h| (scale * self.baseline.cumulative_hazard(h)).min(50.0));
                let inv_k = 1.0 / self.baseline.k;
                let denom = self.baseline.lambda * scale;
                integrate(|s| (-s - rate * (s / denom).powf(inv_k)).exp(), 0.0, s_max, 1e-13)
            }
        }
    }

    /// Simulated cohort of `n` subjects.
    pub fn simulate(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<SurvivalRecord>> {
        let sampler = CovariateSampler::new(&self.y0)?;
        Ok((0..n)
            .map(|_| {
                let y0 = sampler.draw(rng);
                let t = rng.random::<f64>() < self.p_treat;
                let eta = y0 + if t { self.alpha } else { 0.0 };
                let w = self.baseline.sample_scaled(rng, eta);
                let c = self.censoring.sample(rng);
                Censoring::observe(w, c, t)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasOracle {
    pub alpha: f64,
    /// Limit of the misspecified moments fit.
    pub alpha_star: f64,
    pub alpha_star_se: f64,
    /// `log(Pi(1) / Pi(0))`, the limit of the log relative risk of outcomes.
    pub log_rr_limit: f64,
    pub log_rr_se: f64,
    pub pi0: f64,
    pub pi1: f64,
    /// `(1/2) beta' Sigma beta |R(alpha) - R(-alpha)|` for linear `Y_0`.
    pub taylor_bound: Option<f64>,
    pub samples: usize,
}

/// Monte Carlo evaluation of
/// `alpha* = alpha + log(Pi(1) E[Pi(X,0) e^{-Y_0}] / (Pi(0) E[Pi(X,1) e^{-Y_0}]))`.
///
/// `Pi(X, T)` is computed exactly given the log risk; only the expectation
/// over `X` is sampled, with common draws for both arms. Standard errors come
/// from the delta method.
pub fn mom_bias_oracle(model: &HazardModel, samples: usize, rng: &mut StreamRng) -> Result<BiasOracle> {
    model.validate()?;
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two Monte Carlo samples".into()));
    }
    let sampler = CovariateSampler::new(&model.y0)?;
    let mut g = Vec::with_capacity(samples);
    let mut sums = [Neumaier::default(); 4];
    for _ in 0..samples {
        let y0 = sampler.draw(rng);
        let p1 = model.outcome_probability(model.alpha + y0);
        let p0 = model.outcome_probability(y0);
        let w = (-y0).exp();
        let row = [p1, p0, p0 * w, p1 * w];
        for (s, v) in sums.iter_mut().zip(row) {
            s.add(v);
        }
        g.push(row);
    }
    let m = samples as f64;
    let [pi1, pi0, a0, a1] = sums.map(|s| s.total() / m);
    if !(pi0 > 0.0 && pi1 > 0.0) {
        return Err(Error::InvalidInput("an arm has zero outcome probability".into()));
    }
    let alpha_star = model.alpha + pi1.ln() + a0.ln() - pi0.ln() - a1.ln();
    let se = |f: &dyn Fn(&[f64; 4]) -> f64| {
        let vals: Vec<f64> = g.iter().map(f).collect();
        let mean = vals.iter().sum::<f64>() / m;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
    };
    let alpha_star_se = se(&|r| r[0] / pi1 + r[2] / a0 - r[1] / pi0 - r[3] / a1);
    let log_rr_se = se(&|r| r[0] / pi1 - r[1] / pi0);

    let taylor_bound = match &model.y0 {
        Y0Spec::Constant(_) => None,
        Y0Spec::Linear { mu, .. } => {
            let phi = |x: f64| model.outcome_probability(mu + x);
            let r = |x: f64| {
                let h = 1e-4;
                2.0 * (phi(x + h) - phi(x - h)) / (2.0 * h) / phi(x)
            };
            Some(0.5 * sampler.quadratic() * (r(model.alpha) - r(-model.alpha)).abs())
        }
    };
    Ok(BiasOracle {
        alpha: model.alpha,
        alpha_star,
        alpha_star_se,
        log_rr_limit: (pi1 / pi0).ln(),
        log_rr_se,
        pi0,
        pi1,
        taylor_bound,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn model(alpha: f64, y0: Y0Spec, censoring: Censoring) -> HazardModel {
        HazardModel {
            baseline: Weibull::new(2.0, 1.2).unwrap(),
            alpha,
            y0,
            censoring,
            p_treat: 0.5,
        }
    }

    #[test]
    fn constant_baseline_is_unbiased() {
        let m = model(0.7, Y0Spec::Constant(-0.3), Censoring::Administrative { horizon: 0.5 });
        let o = mom_bias_oracle(&m, 10_000, &mut substream(1, "oracle", 0)).unwrap();
        assert!((o.alpha_star - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_effect_stays_zero() {
        let y0 = Y0Spec::Linear { mu: 0.0, beta: vec![0.8, -0.4], cov: vec![vec![1.0, 0.3], vec![0.3, 1.0]] };
        let m = model(0.0, y0, Censoring::Administrative { horizon: 1.0 });
        let o = mom_bias_oracle(&m, 20_000, &mut substream(2, "oracle", 0)).unwrap();
        assert!(o.alpha_star.abs() < 1e-12);
        assert!(o.log_rr_limit.abs() < 1e-12);
    }

    #[test]
    fn exponential_censoring_probability_matches_closed_form() {
        // k = 1: P(W <= C) = h / (h + r) with W ~ Exp(h), C ~ Exp(r)
        let m = HazardModel {
            baseline: Weibull::new(1.5, 1.0).unwrap(),
            alpha: 0.0,
            y0: Y0Spec::Constant(0.0),
            censoring: Censoring::Exponential { rate: 0.5, horizon: None },
            p_treat: 0.5,
        };
        let want = 1.5 * 2f64.exp() / (1.5 * 2f64.exp() + 0.5);
        assert!((m.outcome_probability(2.0) - want).abs() < 1e-10);
    }

    #[test]
    fn rejects_degenerate_arm() {
        let mut m = model(0.5, Y0Spec::Constant(0.0), Censoring::Administrative { horizon: 1.0 });
        m.p_treat = 1.0;
        assert!(mom_bias_oracle(&m, 100, &mut substream(1, "oracle", 0)).is_err());
    }

    #[test]
    fn simulated_moments_track_oracle() {
        let y0 = Y0Spec::Linear { mu: -1.0, beta: vec![0.3], cov: vec![vec![1.0]] };
        let m = model(0.5, y0, Censoring::Administrative { horizon: 0.3 });
        let o = mom_bias_oracle(&m, 200_000, &mut substream(3, "oracle", 0)).unwrap();
        let recs = m.simulate(200_000, &mut substream(3, "cohort", 0)).unwrap();
        let est = crate::survival::moments_alpha(&recs);
        assert!((est.alpha - o.log_rr_limit).abs() < 3.0 * est.std_error);
        assert!(o.alpha_star > 0.0 && o.alpha_star < 0.5);
    }
}
