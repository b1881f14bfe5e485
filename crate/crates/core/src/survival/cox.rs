use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::SurvivalRecord;
use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z: Vec<f64>,
    /// Two-sided Wald p-values.
    pub p_values: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl CoxFit {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[i], self.p_values[i]))
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<12} {:>12} {:>10} {:>10} {:>10}", "covariate", "coefficient", "se", "z", "p-value").unwrap();
        for i in 0..self.names.len() {
            writeln!(
                s,
                "{:<12} {:>12.4} {:>10.4} {:>10.3} {:>10.4}",
                self.names[i], self.coefficients[i], self.std_errors[i], self.z[i], self.p_values[i]
            )
            .unwrap();
        }
        s
    }
}

struct Evaluation {
    loglik: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
}

fn evaluate(x: &DMatrix<f64>, order: &[usize], records: &[SurvivalRecord], beta: &DVector<f64>) -> Evaluation {
    let p = x.ncols();
    let eta = x * beta;
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut d = 0.0;
        let mut xsum = DVector::zeros(p);
        let mut etasum = 0.0;
        while i < order.len() && records[order[i]].time == t {
            let r = order[i];
            let w = eta[r].exp();
            let row = x.row(r).transpose();
            s0 += w;
            s1.axpy(w, &row, 1.0);
            s2.ger(w, &row, &row, 1.0);
            if records[r].event {
                d += 1.0;
                xsum += &row;
                etasum += eta[r];
            }
            i += 1;
        }
        if d > 0.0 {
            let mean = &s1 / s0;
            loglik += etasum - d * s0.ln();
            grad += xsum - d * &mean;
            info += d * (&s2 / s0 - &mean * mean.transpose());
        }
    }
    Evaluation { loglik, grad, info }
}

/// Multivariate Cox regression (Breslow ties) by safeguarded Newton iteration.
/// Covariates are centered internally, which leaves the coefficients unchanged.
pub fn cox_fit(covariates: &DataMatrix, records: &[SurvivalRecord]) -> Result<CoxFit> {
    let n = covariates.n_points();
    if n != records.len() {
        return Err(Error::InvalidInput(format!(
            "{} covariate rows for {} records",
            n,
            records.len()
        )));
    }
    if !records.iter().any(|r| r.event) {
        return Err(Error::CoxFit("no events".into()));
    }
    let p = covariates.n_features();
    let mut x = covariates.to_dmatrix();
    for j in 0..p {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));

    let mut beta = DVector::zeros(p);
    let mut cur = evaluate(&x, &order, records, &beta);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=100 {
        iterations = it;
        let chol = cur.info.clone().cholesky().ok_or_else(|| {
            Error::CoxFit(format!("information matrix not positive definite at iteration {it} (rank deficient design?)"))
        })?;
        let mut step = chol.solve(&cur.grad);
        let mut next_beta = &beta + &step;
        let mut next = evaluate(&x, &order, records, &next_beta);
        let mut halvings = 0;
        while !(next.loglik >= cur.loglik) && halvings < 40 {
            step *= 0.5;
            next_beta = &beta + &step;
            next = evaluate(&x, &order, records, &next_beta);
            halvings += 1;
        }
        let gain = next.loglik - cur.loglik;
        beta = next_beta;
        cur = next;
        if step.amax() < 1e-12 * (1.0 + beta.amax()) || (gain.abs() < 1e-14 * (1.0 + cur.loglik.abs()) && step.amax() < 1e-8) {
            converged = true;
            break;
        }
        if beta.amax() > 50.0 {
            return Err(Error::CoxFit(format!("coefficients diverging (max |beta| = {:.2e})", beta.amax())));
        }
    }
    if !converged {
        return Err(Error::CoxFit(format!("Newton iteration did not converge in {iterations} steps")));
    }
    let inv = cur
        .info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::CoxFit("singular information at the maximizer".into()))?
        .inverse();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let std_errors: Vec<f64> = (0..p).map(|j| inv[(j, j)].sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let z: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z.iter().map(|z| 2.0 * normal.sf(z.abs())).collect();
    Ok(CoxFit {
        names: covariates.feature_names().to_vec(),
        coefficients,
        std_errors,
        z,
        p_values,
        log_likelihood: cur.loglik,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::survival::partial_likelihood_alpha;
    use rand::Rng;

    #[test]
    fn single_binary_covariate_matches_local_fit() {
        let mut rng = substream(4, "cox", 0);
        let recs: Vec<SurvivalRecord> = (0..400)
            .map(|_| {
                let t = rng.random::<bool>();
                let w = -(1.0 - rng.random::<f64>()).ln() / if t { 1.6 } else { 1.0 };
                let c = 2.0 * rng.random::<f64>();
                let w = (w * 100.0).round() / 100.0;
                SurvivalRecord { time: w.min(c), event: w <= c, treatment: t }
            })
            .collect();
        let x = DataMatrix::from_rows(&recs.iter().map(|r| vec![f64::from(u8::from(r.treatment))]).collect::<Vec<_>>()).unwrap();
        let fit = cox_fit(&x, &recs).unwrap();
        let local = partial_likelihood_alpha(&recs);
        assert!((fit.coefficients[0] - local.alpha).abs() < 1e-8);
        assert!((fit.std_errors[0] - local.std_error).abs() < 1e-8);
    }

    #[test]
    fn recovers_two_covariates() {
        let mut rng = substream(5, "cox", 0);
        let mut rows = Vec::new();
        let mut recs = Vec::new();
        for _ in 0..4000 {
            let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let b: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let eta = 0.8 * a - 0.5 * b;
            let w = -(1.0 - rng.random::<f64>()).ln() / eta.exp();
            recs.push(SurvivalRecord { time: w.min(1.5), event: w <= 1.5, treatment: false });
            rows.push(vec![a, b]);
        }
        let fit = cox_fit(&DataMatrix::from_rows(&rows).unwrap(), &recs).unwrap();
        assert!((fit.coefficients[0] - 0.8).abs() < 0.1);
        assert!((fit.coefficients[1] + 0.5).abs() < 0.1);
        assert!(fit.p_values.iter().all(|p| *p < 1e-6));
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let recs = vec![
            SurvivalRecord { time: 1.0, event: true, treatment: false },
            SurvivalRecord { time: 2.0, event: true, treatment: false },
            SurvivalRecord { time: 3.0, event: false, treatment: false },
        ];
        let x = DataMatrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(cox_fit(&x, &recs), Err(Error::CoxFit(_))));
    }
}
