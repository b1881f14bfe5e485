use rayon::prelude::*;

use super::WeightField;
use crate::data::DataMatrix;
use crate::diffusion::{
    assemble_dense, assemble_knn, bandwidth_sample, median_nonzero, AffinityMatrix, KernelStorage,
};
use crate::error::{Error, Result};

/// `log k(x_i, x_j)` for diagonal metrics `wi`, `wj`:
/// `-(x_i - x_j)^T (W_i + W_j)^{-1} (x_i - x_j) / sigma^2 - log det(W_i + W_j) / 2`.
#[inline]
pub fn weighted_log_entry(xi: &[f64], xj: &[f64], wi: &[f64], wj: &[f64], sigma2: f64) -> f64 {
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for y in 0..xi.len() {
        let s = wi[y] + wj[y];
        let d = xi[y] - xj[y];
        quad += d * d / s;
        logdet += s.ln();
    }
    -quad / sigma2 - 0.5 * logdet
}

#[inline]
fn quadratic_form(xi: &[f64], xj: &[f64], wi: &[f64], wj: &[f64]) -> f64 {
    (0..xi.len())
        .map(|y| {
            let d = xi[y] - xj[y];
            d * d / (wi[y] + wj[y])
        })
        .sum()
}

fn check(x: &DataMatrix, weights: &WeightField, sigma: f64) -> Result<Vec<f64>> {
    if weights.n_points() != x.n_points() || weights.n_features() != x.n_features() {
        return Err(Error::InvalidInput(format!(
            "weight field is {}x{} but data is {}x{}",
            weights.n_points(),
            weights.n_features(),
            x.n_points(),
            x.n_features()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {sigma}")));
    }
    let diag = weights.metric_diagonals();
    if diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("metric diagonals must be positive and finite".into()));
    }
    Ok(diag)
}

/// Median over sampled pairs of `sqrt((x_i - x_j)^T (W_i + W_j)^{-1} (x_i - x_j))`.
pub fn weighted_bandwidth(
    x: &DataMatrix,
    weights: &WeightField,
    max_points: usize,
    seed: u64,
) -> Option<f64> {
    let diag = weights.metric_diagonals();
    let m = x.n_features();
    let idx = bandwidth_sample(x.n_points(), max_points, seed);
    let q: Vec<f64> = idx
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &i)| {
            let diag = &diag;
            idx[a + 1..].iter().map(move |&j| {
                quadratic_form(
                    x.row(i),
                    x.row(j),
                    &diag[i * m..(i + 1) * m],
                    &diag[j * m..(j + 1) * m],
                )
                .sqrt()
            })
        })
        .collect();
    median_nonzero(q)
}

/// Dense weighted kernel. Entries are stored relative to the largest entry
/// (`log_scale` holds the offset), which keeps values representable across
/// extreme weight spreads.
pub fn weighted_kernel(x: &DataMatrix, weights: &WeightField, sigma: f64) -> Result<AffinityMatrix> {
    let diag = check(x, weights, sigma)?;
    let m = x.n_features();
    let s2 = sigma * sigma;
    let (k, log_scale) = assemble_dense(
        x.n_points(),
        |i, j| {
            weighted_log_entry(
                x.row(i),
                x.row(j),
                &diag[i * m..(i + 1) * m],
                &diag[j * m..(j + 1) * m],
                s2,
            )
        },
        true,
    );
    Ok(AffinityMatrix {
        storage: KernelStorage::Dense(k),
        bandwidth: sigma,
        truncation: 0.0,
        log_scale,
    })
}

/// Weighted kernel restricted to each point's `k` largest affinities.
pub fn weighted_kernel_knn(
    x: &DataMatrix,
    weights: &WeightField,
    sigma: f64,
    k: usize,
) -> Result<AffinityMatrix> {
    let diag = check(x, weights, sigma)?;
    let m = x.n_features();
    let s2 = sigma * sigma;
    let entry = |i: usize, j: usize| {
        weighted_log_entry(
            x.row(i),
            x.row(j),
            &diag[i * m..(i + 1) * m],
            &diag[j * m..(j + 1) * m],
            s2,
        )
    };
    let (s, log_scale) = assemble_knn(x.n_points(), k, |i, j| -entry(i, j), entry, true);
    Ok(AffinityMatrix {
        storage: KernelStorage::Sparse(s),
        bandwidth: sigma,
        truncation: 0.0,
        log_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn half_identity(n: usize, m: usize) -> WeightField {
        // W = 1 / (w + lambda) = 1/2
        WeightField::from_point_weights(vec![1.5; n * m], n, m, 0.5)
    }

    #[test]
    fn half_identity_reduces_to_gaussian() {
        let x = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![0.3, -0.4]]).unwrap();
        let k = weighted_kernel(&x, &half_identity(2, 2), 0.8).unwrap();
        let want = (-0.25f64 / 0.64).exp();
        assert!((k.value(0, 1) - want).abs() < 1e-14);
        assert!((k.value(0, 0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_is_inverse_root_det() {
        let x = DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let wf = WeightField::from_point_weights(vec![1.0, 3.0, 0.5, 2.0, 2.0, 2.0], 2, 3, 0.25);
        let k = weighted_kernel(&x, &wf, 1.3).unwrap();
        let w = wf.metric_diagonal(0);
        let det: f64 = w.iter().map(|v| 2.0 * v).product();
        assert!((k.value(0, 0) - 1.0 / det.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn psd_on_random_configuration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let (n, m) = (50, 4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
        let x = DataMatrix::from_rows(&rows).unwrap();
        let pw: Vec<f64> = (0..n * m).map(|_| 10f64.powf(rng.random::<f64>() * 4.0 - 2.0)).collect();
        let wf = WeightField::from_point_weights(pw, n, m, 1e-3);
        let k: DMatrix<f64> = weighted_kernel(&x, &wf, 0.5).unwrap().to_dense();
        let ev = k.symmetric_eigenvalues();
        let max = ev.max();
        assert!(ev.min() >= -1e-8 * max);
    }
}
