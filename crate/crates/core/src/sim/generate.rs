use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{CensoringSpec, Dataset, GroundTruth, SphereEffect, Trial, TrialModel, TrialSpec};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use crate::survival::{Censoring, SurvivalRecord, Weibull};

/// Realized coefficients of the random-coefficient model.
///
/// `h(X) = xi'X + sum_{i<=j} eta_ij X_i X_j + T (nu'X + sum_{i<=j} delta_ij X_i X_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCoefficients {
    pub cov: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
}

impl RandomCoefficients {
    fn quadratic(lin: &[f64], quad: &[Vec<f64>], x: &[f64]) -> f64 {
        let mut s: f64 = lin.iter().zip(x).map(|(a, b)| a * b).sum();
        for i in 0..x.len() {
            for j in i..x.len() {
                s += quad[i][j] * x[i] * x[j];
            }
        }
        s
    }

    pub fn baseline(&self, x: &[f64]) -> f64 {
        Self::quadratic(&self.xi, &self.eta, x)
    }

    pub fn effect(&self, x: &[f64]) -> f64 {
        Self::quadratic(&self.nu, &self.delta, x)
    }
}

pub fn tridiagonal_cov(dim: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => rho,
        _ => 0.0,
    })
}

/// Random SPD matrix `Q diag(l) Q'` with `Q` Haar-orthogonal and `l`
/// log-uniform on `[1, 0.99 bound]`, so its condition number is below `bound`.
pub fn random_spd(dim: usize, bound: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let top = (0.99 * bound).ln();
    let l = DVector::from_fn(dim, |_, _| (rng.random::<f64>() * top).exp());
    let m = &q * DMatrix::from_diagonal(&l) * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn gaussian_rows(n: usize, cov: &DMatrix<f64>, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    let dim = cov.nrows();
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::config("model.cov", "covariance is not positive definite"))?
        .l();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            (l.clone() * z).iter().copied().collect()
        })
        .collect())
}

fn padded(gamma: &[f64], dim: usize) -> Vec<f64> {
    let mut g = gamma.to_vec();
    g.resize(dim, 0.0);
    g
}

/// Probit assignment: treated when `w < gamma0 + X gamma`, `w ~ N(0, 1)`.
fn assign(rows: &[Vec<f64>], gamma0: f64, gamma: &[f64], rng: &mut StreamRng) -> (Vec<bool>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    rows.iter()
        .map(|x| {
            let s = gamma0 + x.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>();
            let w: f64 = rng.sample(StandardNormal);
            (w < s, normal.cdf(s))
        })
        .unzip()
}

/// The `q`-quantile of `times` (lower empirical quantile), so that a
/// fraction `q` of them lies at or below it.
fn calibrated_horizon(times: &[f64], q: f64) -> f64 {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    let k = ((q * t.len() as f64).round() as usize).clamp(1, t.len());
    t[k - 1]
}

fn finish(
    spec: &TrialSpec,
    rows: Vec<Vec<f64>>,
    treatment: Vec<bool>,
    times: Vec<f64>,
    truth: GroundTruth,
    coefficients: Option<RandomCoefficients>,
) -> Result<Trial> {
    let (horizon, target) = match spec.censoring {
        CensoringSpec::Horizon { horizon } => (horizon, None),
        CensoringSpec::OutcomeFraction { fraction } => {
            let q = fraction.unwrap_or_else(|| 1.0 / 3.0 + 2.0 / 3.0 * substream(spec.seed, "fraction", 0).random::<f64>());
            (calibrated_horizon(&times, q), Some(q))
        }
    };
    let records: Vec<SurvivalRecord> = times
        .iter()
        .zip(&treatment)
        .map(|(&w, &t)| Censoring::observe(w, horizon, t))
        .collect();
    let features = DataMatrix::from_rows(&rows)?;
    Ok(Trial {
        data: Dataset { features, records },
        truth,
        horizon,
        target_fraction: target,
        coefficients,
    })
}

/// Uniform point on the positive octant of the unit sphere.
fn octant_point(rng: &mut StreamRng) -> [f64; 3] {
    loop {
        let g: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal).abs());
        let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if r > 1e-300 {
            return g.map(|v| v / r);
        }
    }
}

pub fn gen_sphere_trial(spec: &TrialSpec) -> Result<Trial> {
    spec.validate()?;
    let TrialModel::Sphere { triples, effect, p_treat } = &spec.model else {
        return Err(Error::config("model", "expected the sphere model"));
    };
    let mut frng = substream(spec.seed, "features", 0);
    let rows: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| (0..*triples).flat_map(|_| octant_point(&mut frng)).collect())
        .collect();
    let mut trng = substream(spec.seed, "treatment", 0);
    let treatment: Vec<bool> = (0..spec.n).map(|_| trng.random::<f64>() < *p_treat).collect();
    let beta: Vec<f64> = rows.iter().map(|x| effect.beta(&x[..3])).collect();
    let mut wrng = substream(spec.seed, "times", 0);
    let times: Vec<f64> = (0..spec.n)
        .map(|i| {
            let w = spec.baseline.sample(&mut wrng);
            if treatment[i] {
                w * beta[i].exp()
            } else {
                w
            }
        })
        .collect();
    let truth = GroundTruth {
        true_effect: beta.iter().map(|b| -spec.baseline.k * b).collect(),
        propensity: vec![*p_treat; spec.n],
    };
    finish(spec, rows, treatment, times, truth, None)
}

fn hazard_times(baseline: &Weibull, eta: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "times", 0);
    eta.iter().map(|&e| baseline.sample_scaled(&mut rng, e)).collect()
}

pub fn gen_propensity_trial(spec: &TrialSpec) -> Result<Trial> {
    spec.validate()?;
    let TrialModel::Propensity { dim, rho, gamma0, gamma } = &spec.model else {
        return Err(Error::config("model", "expected the propensity model"));
    };
    let cov = tridiagonal_cov(*dim, *rho);
    let rows = gaussian_rows(spec.n, &cov, &mut substream(spec.seed, "features", 0))?;
    let (treatment, propensity) = assign(&rows, *gamma0, &padded(gamma, *dim), &mut substream(spec.seed, "treatment", 0));
    let eta: Vec<f64> = rows
        .iter()
        .zip(&treatment)
        .map(|(x, &t)| x[0] + 0.5 * x[1] + 0.5 * x[0] * x[1] + if t { x[1] } else { 0.0 })
        .collect();
    let times = hazard_times(&spec.baseline, &eta, spec.seed);
    let truth = GroundTruth {
        true_effect: rows.iter().map(|x| x[1]).collect(),
        propensity,
    };
    finish(spec, rows, treatment, times, truth, None)
}

fn sparse_normals(dim: usize, p: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let keep = rng.random::<f64>() < p;
            let v: f64 = rng.sample(StandardNormal);
            if keep {
                v
            } else {
                0.0
            }
        })
        .collect()
}

fn supported_pairs(lin: &[f64], rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let d = lin.len();
    let mut q = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v: f64 = rng.sample(StandardNormal);
            if lin[i] != 0.0 && lin[j] != 0.0 {
                q[i][j] = v;
            }
        }
    }
    q
}

impl RandomCoefficients {
    pub fn draw(dim: usize, condition_bound: f64, sparsity: f64, rng: &mut StreamRng) -> Self {
        let cov = random_spd(dim, condition_bound, rng);
        let xi = sparse_normals(dim, sparsity, rng);
        let nu = sparse_normals(dim, sparsity, rng);
        let eta = supported_pairs(&xi, rng);
        let delta = supported_pairs(&nu, rng);
        Self {
            cov: (0..dim).map(|i| cov.row(i).iter().copied().collect()).collect(),
            xi,
            eta,
            nu,
            delta,
        }
    }
}

pub fn gen_random_model(spec: &TrialSpec) -> Result<Trial> {
    spec.validate()?;
    let TrialModel::Random { dim, condition_bound, sparsity, gamma0, gamma } = &spec.model else {
        return Err(Error::config("model", "expected the random model"));
    };
    let coef = RandomCoefficients::draw(*dim, *condition_bound, *sparsity, &mut substream(spec.seed, "coefficients", 0));
    let cov = DMatrix::from_fn(*dim, *dim, |i, j| coef.cov[i][j]);
    let rows = gaussian_rows(spec.n, &cov, &mut substream(spec.seed, "features", 0))?;
    let (treatment, propensity) = assign(&rows, *gamma0, &padded(gamma, *dim), &mut substream(spec.seed, "treatment", 0));
    let effect: Vec<f64> = rows.iter().map(|x| coef.effect(x)).collect();
    let eta: Vec<f64> = rows
        .iter()
        .zip(&treatment)
        .zip(&effect)
        .map(|((x, &t), e)| coef.baseline(x) + if t { *e } else { 0.0 })
        .collect();
    let times = hazard_times(&spec.baseline, &eta, spec.seed);
    let truth = GroundTruth { true_effect: effect, propensity };
    finish(spec, rows, treatment, times, truth, Some(coef))
}

pub fn simulate(spec: &TrialSpec) -> Result<Trial> {
    match spec.model {
        TrialModel::Sphere { .. } => gen_sphere_trial(spec),
        TrialModel::Propensity { .. } => gen_propensity_trial(spec),
        TrialModel::Random { .. } => gen_random_model(spec),
    }
}

impl SphereEffect {
    /// Largest `|beta|` over a grid on the octant.
    pub fn sup_abs(&self, steps: usize) -> f64 {
        let mut best = 0.0f64;
        for a in 0..=steps {
            for b in 0..=steps {
                let th = a as f64 / steps as f64 * std::f64::consts::FRAC_PI_2;
                let ph = b as f64 / steps as f64 * std::f64::consts::FRAC_PI_2;
                let u = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                best = best.max(self.beta(&u).abs());
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_triples_have_unit_norm() {
        let t = gen_sphere_trial(&TrialSpec::sphere(500, 1)).unwrap();
        let x = &t.data.features;
        assert_eq!(x.n_features(), 9);
        for i in 0..500 {
            let r = x.row(i);
            for k in 0..3 {
                let s = r[3 * k].powi(2) + r[3 * k + 1].powi(2) + r[3 * k + 2].powi(2);
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn sphere_effect_sup_is_ln3() {
        let e = SphereEffect::default();
        assert!((e.sup_abs(200) - 3f64.ln()).abs() < 1e-3);
        assert!((e.beta(&e.center) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn generators_are_deterministic() {
        for spec in [TrialSpec::sphere(200, 4), TrialSpec::propensity(200, 4), TrialSpec::random(200, 4)] {
            assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        }
    }

    #[test]
    fn propensity_covariance_and_assignment() {
        let t = gen_propensity_trial(&TrialSpec::propensity(100_000, 2)).unwrap();
        let x = &t.data.features;
        let n = x.n_points() as f64;
        let want = tridiagonal_cov(9, 0.5);
        for a in 0..9 {
            for b in 0..9 {
                let c: f64 = (0..x.n_points()).map(|i| x.get(i, a) * x.get(i, b)).sum::<f64>() / n;
                assert!((c - want[(a, b)]).abs() < 0.02, "entry {a},{b}: {c}");
            }
        }
        // binned treatment rate against the probit curve
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut bins = vec![(0.0, 0.0, 0usize); 10];
        for i in 0..x.n_points() {
            let s = 0.5 + x.get(i, 0) + x.get(i, 1);
            let b = ((s + 3.0) / 0.8).floor();
            if !(0.0..10.0).contains(&b) {
                continue;
            }
            let e = &mut bins[b as usize];
            e.0 += f64::from(u8::from(t.data.records[i].treatment));
            e.1 += normal.cdf(s);
            e.2 += 1;
        }
        for (obs, exp, cnt) in bins {
            if cnt > 500 {
                assert!((obs - exp).abs() / (cnt as f64) < 0.03);
            }
        }
    }

    #[test]
    fn symmetric_probit_balances_arms() {
        let mut spec = TrialSpec::propensity(20_000, 3);
        spec.model = TrialModel::Propensity { dim: 9, rho: 0.5, gamma0: 0.0, gamma: vec![] };
        let t = simulate(&spec).unwrap();
        let frac = t.data.records.iter().filter(|r| r.treatment).count() as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.01);
    }

    #[test]
    fn non_pd_covariance_rejected() {
        let mut spec = TrialSpec::propensity(10, 3);
        spec.model = TrialModel::Propensity { dim: 9, rho: 0.6, gamma0: 0.5, gamma: vec![1.0, 1.0] };
        assert!(matches!(simulate(&spec), Err(Error::Config { .. })));
    }

    #[test]
    fn random_spd_condition_bound() {
        let mut rng = substream(5, "spd", 0);
        for _ in 0..100 {
            let m = random_spd(9, 10.0, &mut rng);
            let ev = m.symmetric_eigenvalues();
            let (lo, hi) = (ev.min(), ev.max());
            assert!(lo > 0.0 && hi / lo < 10.0);
        }
    }

    #[test]
    fn random_support_rule() {
        for seed in 0..50 {
            let c = RandomCoefficients::draw(9, 10.0, 0.5, &mut substream(seed, "coefficients", 0));
            for i in 0..9 {
                for j in 0..9 {
                    if c.eta[i][j] != 0.0 {
                        assert!(c.xi[i] != 0.0 && c.xi[j] != 0.0);
                    }
                    if c.delta[i][j] != 0.0 {
                        assert!(c.nu[i] != 0.0 && c.nu[j] != 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn calibrated_outcome_fraction() {
        for seed in 0..10 {
            let t = gen_random_model(&TrialSpec::random(2000, seed)).unwrap();
            let eps = t.target_fraction.unwrap();
            assert!((1.0 / 3.0..=1.0).contains(&eps));
            assert!((t.data.outcome_fraction() - eps).abs() < 0.03);
        }
    }

    #[test]
    fn horizon_is_monotone_in_fraction() {
        let times: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let mut last = 0.0;
        for q in [0.1, 0.3, 0.5, 0.9, 1.0] {
            let h = calibrated_horizon(&times, q);
            assert!(h >= last);
            assert_eq!(times.iter().filter(|t| **t <= h).count(), (q * 100.0) as usize);
            last = h;
        }
    }
}
