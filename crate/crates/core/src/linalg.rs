//! Symmetric eigensolvers: a dense path for small matrices and a Lanczos
//! iteration with full reorthogonalization for the leading pairs of large ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::substream;

/// A symmetric linear operator `y = A x`.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        // column-major storage: y = sum_j A[:, j] x_j, A symmetric so rows work too
        let n = self.nrows();
        y.par_chunks_mut(256).enumerate().for_each(|(c, chunk)| {
            let start = c * 256;
            for (k, yi) in chunk.iter_mut().enumerate() {
                let col = self.column(start + k);
                let s: f64 = col.iter().zip(x).map(|(a, b)| a * b).sum();
                *yi = s;
            }
        });
        debug_assert_eq!(y.len(), n);
    }
}

/// Eigenpairs sorted by descending eigenvalue; ties keep original order.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// One column per eigenvalue, unit norm.
    pub vectors: DMatrix<f64>,
    /// Lanczos steps taken (0 for the dense path).
    pub steps: usize,
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Full decomposition of a symmetric matrix, keeping the leading `k` pairs.
pub fn dense_eigen(matrix: &DMatrix<f64>, k: usize) -> EigenPairs {
    let n = matrix.nrows();
    let k = k.min(n);
    let eig = SymmetricEigen::new(matrix.clone());
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = descending_order(&vals);
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values.push(vals[idx]);
        vectors.set_column(c, &eig.eigenvectors.column(idx));
    }
    EigenPairs {
        values,
        vectors,
        steps: 0,
    }
}

/// Convergence controls for [`lanczos_top`].
#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Residual tolerance relative to the largest Ritz value magnitude.
    pub tol: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_steps: 1500,
            seed: 0x5eed,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.par_iter().map(|q| dot(q, w)).collect();
        for (q, c) in basis.iter().zip(&coeffs) {
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
    }
}

fn random_unit(n: usize, seed: u64, index: u64, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut rng = substream(seed, "lanczos", index);
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut v, basis);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// Leading `k` eigenpairs (largest algebraic) of a symmetric operator.
pub fn lanczos_top(op: &dyn SymOperator, k: usize, opts: LanczosOptions) -> Result<EigenPairs> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenpairs of a {n}-dimensional operator"
        )));
    }
    let max_steps = opts.max_steps.min(n).max(k);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_steps.min(4 * k + 64));
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut restarts = 0u64;

    let mut q = random_unit(n, opts.seed, restarts, &basis).expect("nonzero start vector");
    let mut w = vec![0.0; n];
    let first_check = (2 * k).max(k + 10).min(max_steps);
    let mut last_residual = f64::INFINITY;
    let mut last_converged = 0;

    loop {
        op.apply(&q, &mut w);
        let alpha = dot(&q, &w);
        basis.push(q);
        alphas.push(alpha);
        orthogonalize(&mut w, &basis);
        let beta = norm(&w);
        let m = basis.len();

        let check = m >= first_check && ((m - first_check) % 10 == 0 || m == max_steps);
        if check || m == max_steps {
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alphas[i];
                if i + 1 < m {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let order = descending_order(&vals);
            let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let residuals: Vec<f64> = order
                .iter()
                .take(k)
                .map(|&i| (beta * eig.eigenvectors[(m - 1, i)]).abs())
                .collect();
            let converged = residuals.iter().filter(|r| **r <= opts.tol * scale).count();
            last_converged = converged;
            last_residual = residuals.iter().fold(0.0f64, |a, r| a.max(*r)) / scale;
            if converged == k || m == n {
                let mut vectors = DMatrix::zeros(n, k);
                let mut values = Vec::with_capacity(k);
                for (c, &idx) in order.iter().take(k).enumerate() {
                    values.push(vals[idx]);
                    let s = eig.eigenvectors.column(idx);
                    let mut v = DVector::<f64>::zeros(n);
                    for (j, qj) in basis.iter().enumerate() {
                        let sj = s[j];
                        for (vi, qi) in v.iter_mut().zip(qj) {
                            *vi += sj * qi;
                        }
                    }
                    let nv = v.norm();
                    vectors.set_column(c, &(v / nv));
                }
                return Ok(EigenPairs {
                    values,
                    vectors,
                    steps: m,
                });
            }
            if m == max_steps {
                return Err(Error::EigenNonConvergence {
                    iterations: m,
                    converged: last_converged,
                    requested: k,
                    max_residual: last_residual,
                });
            }
        }

        let scale = alphas.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        if beta <= 1e-12 * scale {
            // invariant subspace found; continue from a fresh orthogonal direction
            restarts += 1;
            match random_unit(n, opts.seed, restarts, &basis) {
                Some(v) => {
                    betas.push(0.0);
                    q = v;
                }
                None => {
                    return Err(Error::EigenNonConvergence {
                        iterations: m,
                        converged: last_converged,
                        requested: k,
                        max_residual: last_residual,
                    })
                }
            }
        } else {
            betas.push(beta);
            q = w.iter().map(|x| x / beta).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() / n as f64
    }

    #[test]
    fn lanczos_matches_dense() {
        let a = random_spd(120, 3);
        let dense = dense_eigen(&a, 6);
        let lz = lanczos_top(&a, 6, LanczosOptions::default()).unwrap();
        for i in 0..6 {
            assert!((dense.values[i] - lz.values[i]).abs() < 1e-9 * dense.values[0]);
            let d = dense.vectors.column(i).dot(&lz.vectors.column(i)).abs();
            assert!((d - 1.0).abs() < 1e-6, "pair {i} overlap {d}");
        }
    }

    #[test]
    fn lanczos_handles_low_rank() {
        // rank-2 operator: the Krylov space is exhausted after two steps
        let u = DVector::from_fn(50, |i, _| (i as f64 + 1.0).sqrt());
        let v = DVector::from_fn(50, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let a = &u * u.transpose() + 2.0 * &v * v.transpose();
        let lz = lanczos_top(&a, 4, LanczosOptions::default()).unwrap();
        let dense = dense_eigen(&a, 4);
        for i in 0..4 {
            assert!((dense.values[i] - lz.values[i]).abs() < 1e-8 * dense.values[0]);
        }
    }

    #[test]
    fn dense_orders_descending() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let e = dense_eigen(&a, 3);
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
    }
}
