//! Affinity kernels, Markov normalization and the diffusion embedding.
//!
//! The eigenproblem is always solved on the symmetric conjugate
//! `S = D^{-1/2} K D^{-1/2}`, which shares its spectrum with `P = D^{-1} K`.
//! Right eigenvectors of `P` are recovered as `phi = D^{-1/2} psi` and scaled so
//! that `sum_i pi_i phi(i)^2 = 1` under the stationary measure
//! `pi = D / sum(D)`. With that scaling `phi_0` is the constant 1 and the
//! embedding distance with all nontrivial pairs equals the diffusion distance
//! `sum_l (P^t(i,l) - P^t(j,l))^2 / pi_l`.

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{squared_distance, DataMatrix};
use crate::error::{Error, Result};
use crate::linalg::{dense_eigen, lanczos_top, EigenPairs, LanczosOptions, SymOperator};
use crate::rng::substream;

/// Symmetric sparse matrix in compressed-row form (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl SparseSym {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.data[self.indptr[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[p])] = self.data[p];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelStorage {
    Dense(DMatrix<f64>),
    Sparse(SparseSym),
}

/// Symmetric nonnegative affinity matrix with positive diagonal.
///
/// Stored entries equal the kernel values times `exp(-log_scale)`; kernels
/// whose raw values can overflow or underflow (the weighted kernel) are
/// normalized so their largest entry is 1. Markov normalization is
/// invariant to that global factor.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub storage: KernelStorage,
    pub bandwidth: f64,
    pub truncation: f64,
    pub log_scale: f64,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        match &self.storage {
            KernelStorage::Dense(m) => m.nrows(),
            KernelStorage::Sparse(s) => s.n,
        }
    }

    /// Stored (scaled) entry.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            KernelStorage::Dense(m) => m[(i, j)],
            KernelStorage::Sparse(s) => s.get(i, j),
        }
    }

    /// Unscaled kernel value `k(x_i, x_j)`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) * self.log_scale.exp()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            KernelStorage::Dense(m) => m.clone(),
            KernelStorage::Sparse(s) => s.to_dense(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        match &self.storage {
            KernelStorage::Dense(m) => (0..m.ncols()).map(|j| m.column(j).sum()).collect(),
            KernelStorage::Sparse(s) => (0..s.n)
                .map(|i| s.data[s.indptr[i]..s.indptr[i + 1]].iter().sum())
                .collect(),
        }
    }

    fn multiply(&self, x: &[f64], y: &mut [f64]) {
        match &self.storage {
            KernelStorage::Dense(m) => m.apply(x, y),
            KernelStorage::Sparse(s) => {
                y.par_iter_mut().enumerate().for_each(|(i, yi)| {
                    let mut acc = 0.0;
                    for p in s.indptr[i]..s.indptr[i + 1] {
                        acc += s.data[p] * x[s.indices[p]];
                    }
                    *yi = acc;
                });
            }
        }
    }

    fn scale_entries(&mut self, factor: f64) {
        match &mut self.storage {
            KernelStorage::Dense(m) => *m *= factor,
            KernelStorage::Sparse(s) => s.data.iter_mut().for_each(|v| *v *= factor),
        }
    }
}

/// Assembles a dense symmetric kernel from `log k(i, j)`, evaluated on the upper
/// triangle only. The result is scaled so the largest entry is one when
/// `normalize` is set.
pub(crate) fn assemble_dense<F>(n: usize, log_entry: F, normalize: bool) -> (DMatrix<f64>, f64)
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| log_entry(i, j)).collect())
        .collect();
    let log_scale = if normalize {
        rows.iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v))
    } else {
        0.0
    };
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &lv) in row.iter().enumerate() {
            let j = i + off;
            let v = (lv - log_scale).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    (m, log_scale)
}

/// k-nearest-neighbor sparsified kernel, symmetrized by taking the union of
/// neighbor lists (the maximum of the two one-sided truncations).
pub(crate) fn assemble_knn<D, F>(
    n: usize,
    k: usize,
    distance: D,
    log_entry: F,
    normalize: bool,
) -> (SparseSym, f64)
where
    D: Fn(usize, usize) -> f64 + Sync,
    F: Fn(usize, usize) -> f64 + Sync,
{
    let k = k.min(n - 1);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (distance(i, j), j))
                .collect();
            if k < d.len() {
                d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.truncate(k);
            }
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let adj: Vec<Vec<usize>> = adj
        .into_par_iter()
        .map(|mut row| {
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    let logs: Vec<Vec<f64>> = adj
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&j| if i <= j { log_entry(i, j) } else { log_entry(j, i) })
                .collect()
        })
        .collect();
    let log_scale = if normalize {
        logs.iter().flatten().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
    } else {
        0.0
    };
    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::new();
    let mut data = Vec::new();
    for (row, lv) in adj.iter().zip(&logs) {
        indices.extend_from_slice(row);
        data.extend(lv.iter().map(|v| (v - log_scale).exp()));
        indptr.push(indices.len());
    }
    (
        SparseSym {
            n,
            indptr,
            indices,
            data,
        },
        log_scale,
    )
}

/// Gaussian kernel `exp(-|x_i - x_j|^2 / (2 sigma^2))`, entries below `tau`
/// set to zero (the diagonal is always kept).
pub fn gaussian_kernel(x: &DataMatrix, sigma: f64, tau: f64) -> Result<AffinityMatrix> {
    check_bandwidth(sigma, tau)?;
    let n = x.n_points();
    let two_s2 = 2.0 * sigma * sigma;
    let (mut m, _) = assemble_dense(
        n,
        |i, j| -squared_distance(x.row(i), x.row(j)) / two_s2,
        false,
    );
    if tau > 0.0 {
        for j in 0..n {
            for i in 0..n {
                if i != j && m[(i, j)] < tau {
                    m[(i, j)] = 0.0;
                }
            }
        }
    }
    Ok(AffinityMatrix {
        storage: KernelStorage::Dense(m),
        bandwidth: sigma,
        truncation: tau,
        log_scale: 0.0,
    })
}

/// Gaussian kernel restricted to each point's `k` nearest neighbors.
pub fn gaussian_kernel_knn(x: &DataMatrix, sigma: f64, k: usize) -> Result<AffinityMatrix> {
    check_bandwidth(sigma, 0.0)?;
    let two_s2 = 2.0 * sigma * sigma;
    let (s, _) = assemble_knn(
        x.n_points(),
        k,
        |i, j| squared_distance(x.row(i), x.row(j)),
        |i, j| -squared_distance(x.row(i), x.row(j)) / two_s2,
        false,
    );
    Ok(AffinityMatrix {
        storage: KernelStorage::Sparse(s),
        bandwidth: sigma,
        truncation: 0.0,
        log_scale: 0.0,
    })
}

fn check_bandwidth(sigma: f64, tau: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "truncation must be nonnegative, got {tau}"
        )));
    }
    Ok(())
}

/// Positive-correlation kernel `max(<x_i, x_j> / (|x_i| |x_j|), 0)`.
pub fn correlation_kernel(x: &DataMatrix) -> Result<AffinityMatrix> {
    let n = x.n_points();
    let norms: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm(i));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in i + 1..n {
            let c: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            let v = (c / (norms[i] * norms[j])).clamp(0.0, 1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(AffinityMatrix {
        storage: KernelStorage::Dense(m),
        bandwidth: 1.0,
        truncation: 0.0,
        log_scale: 0.0,
    })
}

/// Median of nonzero values, `None` when all are zero.
pub(crate) fn median_nonzero(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| *v > 0.0);
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Sample of point indices used for bandwidth rules: all points when
/// `n <= max_points`, otherwise a seeded subsample.
pub(crate) fn bandwidth_sample(n: usize, max_points: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n > max_points {
        idx.shuffle(&mut substream(seed, "bandwidth", 0));
        idx.truncate(max_points);
        idx.sort_unstable();
    }
    idx
}

/// Median of nonzero pairwise distances over at most `max_points` points.
pub fn median_pairwise_distance(x: &DataMatrix, max_points: usize, seed: u64) -> Option<f64> {
    let idx = bandwidth_sample(x.n_points(), max_points, seed);
    let d: Vec<f64> = idx
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &i)| {
            idx[a + 1..]
                .iter()
                .map(move |&j| squared_distance(x.row(i), x.row(j)).sqrt())
        })
        .collect();
    median_nonzero(d)
}

/// Bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median of nonzero pairwise distances (subsampled to 2000 points).
    Median,
    Fixed(f64),
}

/// Kernel construction parameters shared by the unweighted and weighted paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    /// Gaussian truncation threshold; only used by the dense path.
    pub truncation: f64,
    /// Above this many points the kernel is k-NN sparsified.
    pub dense_limit: usize,
    pub knn: usize,
    pub bandwidth_sample: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            truncation: 0.0,
            dense_limit: 4000,
            knn: 64,
            bandwidth_sample: 2000,
        }
    }
}

/// Gaussian kernel with the configured bandwidth and storage rules.
pub fn build_gaussian(x: &DataMatrix, cfg: &KernelConfig, seed: u64) -> Result<AffinityMatrix> {
    let sigma = match cfg.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => {
            median_pairwise_distance(x, cfg.bandwidth_sample, seed).unwrap_or(1.0)
        }
    };
    if x.n_points() > cfg.dense_limit {
        gaussian_kernel_knn(x, sigma, cfg.knn)
    } else {
        gaussian_kernel(x, sigma, cfg.truncation)
    }
}

/// Row-stochastic operator `P = D^{-1} K` together with its symmetric
/// conjugate `S = D^{-1/2} K D^{-1/2}`.
#[derive(Debug, Clone)]
pub struct MarkovOperator {
    kernel: AffinityMatrix,
    degrees: Vec<f64>,
    inv_sqrt_degrees: Vec<f64>,
}

pub fn markov_normalize(kernel: AffinityMatrix) -> Result<MarkovOperator> {
    let mut kernel = kernel;
    let mut degrees = kernel.row_sums();
    let max_deg = degrees.iter().fold(0.0f64, |a, &v| a.max(v));
    if max_deg > 0.0 && max_deg.is_finite() && (max_deg > 1e150 || max_deg < 1e-150) {
        kernel.scale_entries(1.0 / max_deg);
        kernel.log_scale += max_deg.ln();
        degrees.iter_mut().for_each(|d| *d /= max_deg);
    }
    let isolated: Vec<usize> = degrees
        .iter()
        .enumerate()
        .filter(|(_, d)| !(**d > 0.0 && d.is_finite()))
        .map(|(i, _)| i)
        .collect();
    if !isolated.is_empty() {
        return Err(Error::IsolatedPoints(isolated));
    }
    let inv_sqrt_degrees = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(MarkovOperator {
        kernel,
        degrees,
        inv_sqrt_degrees,
    })
}

impl MarkovOperator {
    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn kernel(&self) -> &AffinityMatrix {
        &self.kernel
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.kernel.get(i, j) / self.degrees[i]
    }

    pub fn transition_dense(&self) -> DMatrix<f64> {
        let mut p = self.kernel.to_dense();
        for i in 0..self.n() {
            let d = self.degrees[i];
            p.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        p
    }

    pub fn symmetric_dense(&self) -> DMatrix<f64> {
        let mut s = self.kernel.to_dense();
        let n = self.n();
        for j in 0..n {
            for i in 0..n {
                s[(i, j)] *= self.inv_sqrt_degrees[i] * self.inv_sqrt_degrees[j];
            }
        }
        s
    }

    /// Stationary distribution `D / sum(D)`.
    pub fn stationary(&self) -> Vec<f64> {
        let vol: f64 = self.degrees.iter().sum();
        self.degrees.iter().map(|d| d / vol).collect()
    }
}

impl SymOperator for MarkovOperator {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let scaled: Vec<f64> = x
            .iter()
            .zip(&self.inv_sqrt_degrees)
            .map(|(a, b)| a * b)
            .collect();
        self.kernel.multiply(&scaled, y);
        y.iter_mut()
            .zip(&self.inv_sqrt_degrees)
            .for_each(|(v, b)| *v *= b);
    }
}

/// Spectral decomposition of a symmetric operator: dense for small problems
/// or wide requests, Lanczos otherwise.
pub(crate) fn leading_pairs<F>(op: &dyn SymOperator, k: usize, dense: F) -> Result<EigenPairs>
where
    F: FnOnce() -> DMatrix<f64>,
{
    let n = op.dim();
    if n <= 400 || 4 * k > n {
        Ok(dense_eigen(&dense(), k))
    } else {
        lanczos_top(op, k, LanczosOptions::default())
    }
}

/// Fixes the sign of a vector so its largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `sign(l) |l|^t`: integer powers of negative eigenvalues keep their usual
/// meaning up to parity; fractional powers use the magnitude.
pub(crate) fn spectral_power(l: f64, t: f64) -> f64 {
    if l >= 0.0 {
        l.powf(t)
    } else {
        -(-l).powf(t)
    }
}

/// Eigenpairs of `P` and the diffusion coordinates `lambda_k^t phi_k(x_i)`,
/// `k = 1..=d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEmbedding {
    /// `d + 1` eigenvalues, descending, the first being the trivial one.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors of `P`, row-major `n x (d + 1)`.
    pub eigenvectors: Vec<f64>,
    pub diffusion_time: f64,
    pub dimension: usize,
    n: usize,
    coords: Vec<f64>,
}

impl DiffusionEmbedding {
    pub(crate) fn from_parts(
        eigenvalues: Vec<f64>,
        eigenvectors: Vec<f64>,
        n: usize,
        diffusion_time: f64,
    ) -> Self {
        let dimension = eigenvalues.len() - 1;
        let mut emb = Self {
            eigenvalues,
            eigenvectors,
            diffusion_time,
            dimension,
            n,
            coords: Vec::new(),
        };
        emb.recompute();
        emb
    }

    fn recompute(&mut self) {
        let d = self.dimension;
        let w = d + 1;
        let mut coords = vec![0.0; self.n * d];
        for i in 0..self.n {
            for k in 1..=d {
                coords[i * d + k - 1] = spectral_power(self.eigenvalues[k], self.diffusion_time)
                    * self.eigenvectors[i * w + k];
            }
        }
        self.coords = coords;
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn coordinates(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let w = self.dimension + 1;
        (0..self.n).map(|i| self.eigenvectors[i * w + k]).collect()
    }

    /// Same eigenpairs at a different diffusion time.
    pub fn with_time(&self, t: f64) -> Self {
        let mut e = self.clone();
        e.diffusion_time = t;
        e.recompute();
        e
    }

    /// Embedding as a point cloud for neighborhood queries.
    pub fn cloud(&self) -> crate::cloud::PointCloud {
        crate::cloud::PointCloud::new(self.coords.clone(), self.n, self.dimension)
    }
}

/// Leading `d` nontrivial diffusion coordinates of `P` at time `t`.
pub fn spectral_embed(p: &MarkovOperator, t: f64, d: usize) -> Result<DiffusionEmbedding> {
    let n = p.n();
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusion time must be positive, got {t}"
        )));
    }
    if d == 0 || d >= n {
        return Err(Error::InvalidInput(format!(
            "embedding dimension must satisfy 1 <= d < n, got d = {d}, n = {n}"
        )));
    }
    let k = d + 1;
    let pairs = leading_pairs(p, k, || p.symmetric_dense())?;
    for w in pairs.values.windows(2) {
        if (w[0] - w[1]).abs() < 1e-10 * w[0].abs().max(1e-300) {
            warn!("degenerate eigenvalue {:.6e} in diffusion spectrum", w[0]);
        }
    }
    let vol: f64 = p.degrees.iter().sum();
    let root_vol = vol.sqrt();
    let mut eigenvectors = vec![0.0; n * k];
    for c in 0..k {
        let mut phi: Vec<f64> = (0..n)
            .map(|i| pairs.vectors[(i, c)] * p.inv_sqrt_degrees[i] * root_vol)
            .collect();
        fix_sign(&mut phi);
        for i in 0..n {
            eigenvectors[i * k + c] = phi[i];
        }
    }
    Ok(DiffusionEmbedding::from_parts(
        pairs.values,
        eigenvectors,
        n,
        t,
    ))
}

/// Euclidean distance between embedded points `i` and `j`.
pub fn diffusion_distance(emb: &DiffusionEmbedding, i: usize, j: usize) -> f64 {
    squared_distance(emb.coordinates(i), emb.coordinates(j)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, m: usize, seed: u64) -> DataMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
            .collect();
        DataMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn gaussian_diagonal_and_reference_value() {
        let sigma = 0.7;
        let d = sigma * 2f64.sqrt();
        let x = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![d, 0.0]]).unwrap();
        let k = gaussian_kernel(&x, sigma, 0.0).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 1), 1.0);
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k.get(0, 1) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn gaussian_matches_pairwise_oracle() {
        let x = random_points(50, 9, 11);
        let sigma = 0.8;
        let k = gaussian_kernel(&x, sigma, 0.0).unwrap();
        let dense = k.to_dense();
        assert_eq!(dense, dense.transpose());
        for i in 0..50 {
            for j in 0..50 {
                let d2: f64 = (0..9).map(|c| (x.get(i, c) - x.get(j, c)).powi(2)).sum();
                let oracle = (-d2 / (2.0 * sigma * sigma)).exp();
                assert!((dense[(i, j)] - oracle).abs() < 1e-14);
                assert!((0.0..=1.0).contains(&dense[(i, j)]));
            }
        }
    }

    #[test]
    fn truncation_keeps_symmetry() {
        let x = random_points(40, 3, 5);
        let k = gaussian_kernel(&x, 0.3, 0.2).unwrap().to_dense();
        assert_eq!(k, k.transpose());
        assert!(k.iter().all(|v| *v == 0.0 || *v >= 0.2));
        assert!((0..40).all(|i| k[(i, i)] == 1.0));
    }

    #[test]
    fn rejects_bad_bandwidth() {
        let x = random_points(3, 2, 1);
        assert!(gaussian_kernel(&x, 0.0, 0.0).is_err());
        assert!(gaussian_kernel(&x, -1.0, 0.0).is_err());
    }

    #[test]
    fn correlation_examples() {
        let x = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let k = correlation_kernel(&x).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert!((k.get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(k.get(0, 2), 0.0);
    }

    #[test]
    fn correlation_rejects_zero_row() {
        let x = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(correlation_kernel(&x), Err(Error::ZeroNorm(1))));
    }

    fn dense_affinity(m: DMatrix<f64>) -> AffinityMatrix {
        AffinityMatrix {
            storage: KernelStorage::Dense(m),
            bandwidth: 1.0,
            truncation: 0.0,
            log_scale: 0.0,
        }
    }

    #[test]
    fn markov_identity_and_uniform() {
        let p = markov_normalize(dense_affinity(DMatrix::identity(3, 3))).unwrap();
        assert_eq!(p.transition_dense(), DMatrix::identity(3, 3));
        let p = markov_normalize(dense_affinity(DMatrix::from_element(2, 2, 1.0))).unwrap();
        assert_eq!(p.transition_dense(), DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn markov_rejects_isolated() {
        let mut m = DMatrix::identity(3, 3);
        m[(2, 2)] = 0.0;
        match markov_normalize(dense_affinity(m)) {
            Err(Error::IsolatedPoints(v)) => assert_eq!(v, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transition_and_conjugate_share_spectrum() {
        let x = random_points(20, 4, 2);
        let p = markov_normalize(gaussian_kernel(&x, 0.5, 0.0).unwrap()).unwrap();
        let pm = p.transition_dense();
        for i in 0..20 {
            assert!((pm.row(i).sum() - 1.0).abs() < 1e-12);
        }
        let mut ev_p: Vec<f64> = pm
            .complex_eigenvalues()
            .iter()
            .map(|c| {
                assert!(c.im.abs() < 1e-10);
                c.re
            })
            .collect();
        let mut ev_s: Vec<f64> = p.symmetric_dense().symmetric_eigenvalues().iter().copied().collect();
        ev_p.sort_by(f64::total_cmp);
        ev_s.sort_by(f64::total_cmp);
        for (a, b) in ev_p.iter().zip(&ev_s) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((ev_s[19] - 1.0).abs() < 1e-8);
        assert!(ev_s.iter().all(|v| v.abs() <= 1.0 + 1e-8));
    }

    #[test]
    fn trivial_eigenvector_is_constant() {
        let x = random_points(30, 3, 8);
        let p = markov_normalize(gaussian_kernel(&x, 0.4, 0.0).unwrap()).unwrap();
        let emb = spectral_embed(&p, 1.0, 5).unwrap();
        assert!((emb.eigenvalues[0] - 1.0).abs() < 1e-8);
        for v in emb.eigenvector(0) {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn doubling_time_scales_coordinates() {
        let x = random_points(30, 3, 9);
        let p = markov_normalize(gaussian_kernel(&x, 0.4, 0.0).unwrap()).unwrap();
        let e1 = spectral_embed(&p, 1.0, 4).unwrap();
        let e2 = e1.with_time(2.0);
        for i in 0..30 {
            for k in 0..4 {
                let lam = e1.eigenvalues[k + 1];
                let (a, b) = (e1.coordinates(i)[k], e2.coordinates(i)[k]);
                assert!((b - a * lam).abs() < 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn two_clusters_split_by_first_eigenvector() {
        let n = 20;
        let mut m = DMatrix::from_element(n, n, 1e-4);
        for i in 0..n {
            for j in 0..n {
                if (i < 10) == (j < 10) {
                    m[(i, j)] = 1.0;
                }
            }
        }
        let p = markov_normalize(dense_affinity(m.clone())).unwrap();
        let emb = spectral_embed(&p, 1.0, 2).unwrap();
        let phi1 = emb.eigenvector(1);
        let sign_a = phi1[0].signum();
        assert!(phi1[..10].iter().all(|v| v.signum() == sign_a));
        assert!(phi1[10..].iter().all(|v| v.signum() == -sign_a));

        // oracle: dense eigen of P directly
        let pm = p.transition_dense();
        let eig = pm.clone().complex_eigenvalues();
        let mut re: Vec<f64> = eig.iter().map(|c| c.re).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        assert!((re[1] - emb.eigenvalues[1]).abs() < 1e-10);
    }

    #[test]
    fn full_spectrum_distance_matches_transition_rows() {
        let n = 15;
        let x = random_points(n, 3, 21);
        let p = markov_normalize(gaussian_kernel(&x, 0.5, 0.0).unwrap()).unwrap();
        let t = 2.0;
        let emb = spectral_embed(&p, t, n - 1).unwrap();
        let pm = p.transition_dense();
        let pt = &pm * &pm;
        let pi = p.stationary();
        for i in 0..n {
            for j in 0..n {
                let direct: f64 = (0..n).map(|l| (pt[(i, l)] - pt[(j, l)]).powi(2) / pi[l]).sum();
                let via = diffusion_distance(&emb, i, j).powi(2);
                assert!((direct - via).abs() < 1e-8 * direct.max(1.0), "{i},{j}: {direct} vs {via}");
            }
        }
    }

    #[test]
    fn distance_is_symmetric_and_zero_on_diagonal() {
        let x = random_points(25, 4, 4);
        let p = markov_normalize(gaussian_kernel(&x, 0.5, 0.0).unwrap()).unwrap();
        let emb = spectral_embed(&p, 1.0, 6).unwrap();
        for i in 0..25 {
            assert_eq!(diffusion_distance(&emb, i, i), 0.0);
            for j in 0..25 {
                assert_eq!(diffusion_distance(&emb, i, j), diffusion_distance(&emb, j, i));
            }
        }
    }

    #[test]
    fn lanczos_path_agrees_with_dense_path() {
        let x = random_points(600, 3, 17);
        let p = markov_normalize(gaussian_kernel(&x, 0.3, 0.0).unwrap()).unwrap();
        let emb = spectral_embed(&p, 1.0, 6).unwrap();
        let dense = dense_eigen(&p.symmetric_dense(), 7);
        for k in 0..7 {
            assert!((emb.eigenvalues[k] - dense.values[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn knn_kernel_is_symmetric() {
        let x = random_points(80, 3, 6);
        let k = gaussian_kernel_knn(&x, 0.3, 5).unwrap();
        let d = k.to_dense();
        assert_eq!(d, d.transpose());
        for i in 0..80 {
            assert_eq!(d[(i, i)], 1.0);
            assert!(d.row(i).iter().filter(|v| **v > 0.0).count() >= 6);
        }
    }
}
