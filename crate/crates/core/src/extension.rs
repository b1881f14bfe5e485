//! Out-of-sample extension through an asymmetric kernel to a fixed reference
//! set.
//!
//! With `k(z, x) = exp(-(z - x)' W_x^{-1} (z - x) / sigma^2) / sqrt(det W_x)`,
//! row sums `D_1` and reference column sums `D_2`, the normalized kernel is
//! `A = D_1^{-1/2} k D_2^{-1/2}` and `A'A = Psi Sigma Psi'`. A point `z` with
//! kernel row `k_z` and row sum `s_z` gets diffusion coordinates
//!
//! ```text
//! phi_j(z) = sqrt(vol) (k_z / s_z) D_2^{-1/2} psi_j  s_j^{t-1}
//! ```
//!
//! where `s_j = sqrt(Sigma_j)`. On reference rows this is `D_1^{-1/2}` times
//! the left singular vectors of `A`, normalized like the training embedding.
//! The trivial component (`s_0 = 1`) is dropped.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::data::DataMatrix;
use crate::diffusion::{fix_sign, leading_pairs, spectral_power};
use crate::error::{CohortError, Error, Result};
use crate::linalg::SymOperator;
use crate::metric::{neighborhood, CohortFunctional, MetricConfig, NeighborhoodRule, RegularizedMetric, WeightField};

/// Singular values below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionConfig {
    /// Relative affinity below which entries are dropped.
    pub truncation: f64,
    pub dense_limit: usize,
    /// Nearest references kept per row above `dense_limit`.
    pub knn: usize,
    pub dimension: usize,
    pub diffusion_time: f64,
    pub seed: u64,
}

impl ExtensionConfig {
    pub fn from_metric(cfg: &MetricConfig, seed: u64) -> Self {
        Self {
            truncation: cfg.kernel.truncation,
            dense_limit: cfg.kernel.dense_limit,
            knn: cfg.kernel.knn,
            dimension: cfg.dimension,
            diffusion_time: cfg.diffusion_time,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEmbedding {
    n: usize,
    m: usize,
    reference: Vec<f64>,
    /// Row-major `W_x` diagonals.
    diagonals: Vec<f64>,
    half_logdet: Vec<f64>,
    pub sigma: f64,
    pub truncation: f64,
    /// Entries per row kept, `None` for dense rows.
    pub row_limit: Option<usize>,
    log_scale: f64,
    /// `D_2`, in units of `exp(log_scale)`.
    pub column_sums: Vec<f64>,
    /// `D_1` over the reference rows.
    pub row_sums: Vec<f64>,
    volume: f64,
    /// Singular values of `A`, descending, trivial one first.
    pub singular_values: Vec<f64>,
    /// Row-major `n x r` right singular vectors.
    psi: Vec<f64>,
    rank: usize,
    pub diffusion_time: f64,
    pub dimension: usize,
    coords: Vec<f64>,
}

/// Kernel row of `(z, x)` for every `z` in `Z` followed by every reference
/// point, using only the reference point's `W_x`.
pub fn asymmetric_kernel(z: &DataMatrix, xref: &DataMatrix, weights: &WeightField, sigma: f64) -> Result<DMatrix<f64>> {
    let (diag, half_logdet) = prepare(xref, weights, sigma)?;
    if z.n_points() > 0 && z.n_features() != xref.n_features() {
        return Err(Error::InvalidInput(format!(
            "new points have {} features, reference has {}",
            z.n_features(),
            xref.n_features()
        )));
    }
    let n = xref.n_points();
    let rows = z.n_points() + n;
    let s2 = sigma * sigma;
    Ok(DMatrix::from_fn(rows, n, |r, j| {
        let p = if r < z.n_points() { z.row(r) } else { xref.row(r - z.n_points()) };
        log_entry(p, xref.row(j), &diag[j * xref.n_features()..(j + 1) * xref.n_features()], half_logdet[j], s2).exp()
    }))
}

fn prepare(xref: &DataMatrix, weights: &WeightField, sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.n_points() != xref.n_points() || weights.n_features() != xref.n_features() {
        return Err(Error::InvalidInput(format!(
            "weight field is {}x{} but reference is {}x{}",
            weights.n_points(),
            weights.n_features(),
            xref.n_points(),
            xref.n_features()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {sigma}")));
    }
    let diag = weights.metric_diagonals();
    if diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("metric diagonals must be positive and finite".into()));
    }
    let m = xref.n_features();
    let half_logdet = (0..xref.n_points())
        .map(|j| 0.5 * diag[j * m..(j + 1) * m].iter().map(|w| w.ln()).sum::<f64>())
        .collect();
    Ok((diag, half_logdet))
}

#[inline]
fn log_entry(z: &[f64], x: &[f64], w: &[f64], half_logdet: f64, s2: f64) -> f64 {
    let mut q = 0.0;
    for y in 0..z.len() {
        let d = z[y] - x[y];
        q += d * d / w[y];
    }
    -q / s2 - half_logdet
}

/// Sparse row: column indices ascending with their shifted kernel values.
type Row = (Vec<usize>, Vec<f64>);

struct NormalizedRows<'a> {
    rows: &'a [Row],
    inv_sqrt_row: Vec<f64>,
    inv_sqrt_col: Vec<f64>,
}

impl NormalizedRows<'_> {
    fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (idx, val) = &self.rows[i];
            let s: f64 = idx.iter().zip(val).map(|(&j, v)| v * self.inv_sqrt_col[j] * x[j]).sum();
            *yi = s * self.inv_sqrt_row[i];
        });
    }

    fn apply_at(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, (idx, val)) in self.rows.iter().enumerate() {
            let xi = x[i] * self.inv_sqrt_row[i];
            for (&j, v) in idx.iter().zip(val) {
                y[j] += v * xi;
            }
        }
        y.iter_mut().zip(&self.inv_sqrt_col).for_each(|(v, c)| *v *= c);
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, (idx, val)) in self.rows.iter().enumerate() {
            for (&j, v) in idx.iter().zip(val) {
                a[(i, j)] = v * self.inv_sqrt_row[i] * self.inv_sqrt_col[j];
            }
        }
        a
    }
}

/// `A'A` applied implicitly.
impl SymOperator for NormalizedRows<'_> {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; self.rows.len()];
        self.apply_a(x, &mut t);
        self.apply_at(&t, y);
    }
}

impl ReferenceEmbedding {
    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.m
    }

    /// Number of singular values kept, trivial one included.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn reference_row(&self, i: usize) -> &[f64] {
        &self.reference[i * self.m..(i + 1) * self.m]
    }

    /// Coordinates of reference point `i`.
    pub fn coordinates(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud::new(self.coords.clone(), self.n, self.dimension)
    }

    /// Shifted kernel row of `z`, truncated like the reference rows.
    fn kernel_row(&self, z: &[f64]) -> Row {
        let s2 = self.sigma * self.sigma;
        let m = self.m;
        let logs: Vec<f64> = (0..self.n)
            .map(|j| {
                log_entry(z, self.reference_row(j), &self.diagonals[j * m..(j + 1) * m], self.half_logdet[j], s2)
                    - self.log_scale
            })
            .collect();
        let mut keep: Vec<usize> = (0..self.n).collect();
        if let Some(k) = self.row_limit {
            if k < self.n {
                // nearest in the one-sided metric, so a reference row keeps itself
                let dist = |j: usize| logs[j] + self.half_logdet[j];
                keep.select_nth_unstable_by(k - 1, |&a, &b| dist(b).total_cmp(&dist(a)).then(a.cmp(&b)));
                keep.truncate(k);
                keep.sort_unstable();
            }
        }
        let mut idx = Vec::with_capacity(keep.len());
        let mut val = Vec::with_capacity(keep.len());
        for j in keep {
            let v = logs[j].exp();
            if v > 0.0 && v >= self.truncation {
                idx.push(j);
                val.push(v);
            }
        }
        (idx, val)
    }

    fn max_affinity(&self, z: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let m = self.m;
        (0..self.n)
            .map(|j| {
                log_entry(z, self.reference_row(j), &self.diagonals[j * m..(j + 1) * m], self.half_logdet[j], s2)
                    - self.log_scale
            })
            .fold(f64::NEG_INFINITY, f64::max)
            .exp()
    }

    fn coordinates_of_row(&self, row: &Row) -> Vec<f64> {
        let (idx, val) = row;
        let s: f64 = val.iter().sum();
        let r = self.rank;
        let mut proj = vec![0.0; r];
        for (&j, v) in idx.iter().zip(val) {
            let p = v / s / self.column_sums[j].sqrt();
            for (a, b) in proj.iter_mut().zip(&self.psi[j * r..(j + 1) * r]) {
                *a += p * b;
            }
        }
        let scale = self.volume.sqrt();
        (1..=self.dimension)
            .map(|k| scale * proj[k] * spectral_power(self.singular_values[k], self.diffusion_time - 1.0))
            .collect()
    }

    /// Coordinates of a point from kernel affinities `row` to every reference
    /// point, given in units of the reference scale.
    ///
    /// Only the row-stochastic normalization of `row` matters, so the result
    /// is linear in `row / sum(row)`.
    pub fn extend_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n {
            return Err(Error::InvalidInput(format!("row has {} entries for {} references", row.len(), self.n)));
        }
        let idx: Vec<usize> = (0..self.n).filter(|&j| row[j] != 0.0).collect();
        let val: Vec<f64> = idx.iter().map(|&j| row[j]).collect();
        if val.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("kernel row must be nonnegative and finite".into()));
        }
        if val.is_empty() {
            return Err(Error::OutOfSupport { max_affinity: 0.0 });
        }
        Ok(self.coordinates_of_row(&(idx, val)))
    }

    /// Diffusion coordinates of a new point.
    pub fn extend(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.m {
            return Err(Error::InvalidInput(format!("point has {} features, reference has {}", z.len(), self.m)));
        }
        if let Some(col) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col });
        }
        let row = self.kernel_row(z);
        let s: f64 = row.1.iter().sum();
        if row.1.is_empty() || !(s > 0.0 && s.is_finite()) {
            return Err(Error::OutOfSupport { max_affinity: self.max_affinity(z) });
        }
        Ok(self.coordinates_of_row(&row))
    }

    /// Extends every row of `z` in parallel.
    pub fn extend_all(&self, z: &DataMatrix) -> Vec<Result<Vec<f64>>> {
        (0..z.n_points()).into_par_iter().map(|i| self.extend(z.row(i))).collect()
    }

    /// Left singular vectors `A Psi Sigma^{-1/2}` on the reference rows, one
    /// column per kept singular value.
    pub fn left_singular_vectors(&self) -> DMatrix<f64> {
        let r = self.rank;
        let mut u = DMatrix::zeros(self.n, r);
        for i in 0..self.n {
            let (idx, val) = self.kernel_row(self.reference_row(i));
            let s: f64 = val.iter().sum();
            for (&j, v) in idx.iter().zip(&val) {
                let a = v / (s * self.column_sums[j]).sqrt();
                for k in 0..r {
                    u[(i, k)] += a * self.psi[j * r + k];
                }
            }
        }
        for k in 0..r {
            let s = self.singular_values[k];
            u.column_mut(k).scale_mut(1.0 / s);
        }
        u
    }

    pub fn right_singular_vectors(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.rank, &self.psi)
    }
}

/// Decomposes the normalized asymmetric kernel of the reference set against
/// itself.
pub fn build_reference(
    xref: &DataMatrix,
    weights: &WeightField,
    sigma: f64,
    cfg: &ExtensionConfig,
) -> Result<ReferenceEmbedding> {
    let n = xref.n_points();
    if n < 2 {
        return Err(Error::InvalidInput("reference set needs at least two points".into()));
    }
    if !(cfg.truncation >= 0.0 && cfg.truncation < 1.0) {
        return Err(Error::config("truncation", "must lie in [0, 1)"));
    }
    let (diagonals, half_logdet) = prepare(xref, weights, sigma)?;
    let m = xref.n_features();
    let s2 = sigma * sigma;
    let log_scale = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| log_entry(xref.row(i), xref.row(j), &diagonals[j * m..(j + 1) * m], half_logdet[j], s2))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let mut emb = ReferenceEmbedding {
        n,
        m,
        reference: xref.values().to_vec(),
        diagonals,
        half_logdet,
        sigma,
        truncation: cfg.truncation,
        row_limit: (n > cfg.dense_limit).then_some(cfg.knn.max(1)),
        log_scale,
        column_sums: Vec::new(),
        row_sums: Vec::new(),
        volume: 0.0,
        singular_values: Vec::new(),
        psi: Vec::new(),
        rank: 0,
        diffusion_time: cfg.diffusion_time,
        dimension: 0,
        coords: Vec::new(),
    };
    let rows: Vec<Row> = (0..n).into_par_iter().map(|i| emb.kernel_row(xref.row(i))).collect();
    let row_sums: Vec<f64> = rows.iter().map(|r| r.1.iter().sum()).collect();
    if let Some(i) = row_sums.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput(format!("reference row {i} has zero kernel sum")));
    }
    let mut col_sums = vec![0.0; n];
    for (idx, val) in &rows {
        for (&j, v) in idx.iter().zip(val) {
            col_sums[j] += v;
        }
    }
    if let Some(j) = col_sums.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput(format!("reference column {j} has zero kernel sum")));
    }

    let op = NormalizedRows {
        rows: &rows,
        inv_sqrt_row: row_sums.iter().map(|s| 1.0 / s.sqrt()).collect(),
        inv_sqrt_col: col_sums.iter().map(|s| 1.0 / s.sqrt()).collect(),
    };
    let want = (cfg.dimension + 1).min(n);
    let pairs = leading_pairs(&op, want, || {
        let a = op.dense();
        a.transpose() * a
    })?;
    let sv: Vec<f64> = pairs.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().take_while(|s| **s > RANK_CUTOFF * top).count();
    if rank < 2 {
        return Err(Error::InvalidInput("normalized reference kernel has rank below two".into()));
    }
    let mut psi = vec![0.0; n * rank];
    for k in 0..rank {
        let mut v: Vec<f64> = pairs.vectors.column(k).iter().copied().collect();
        fix_sign(&mut v);
        for i in 0..n {
            psi[i * rank + k] = v[i];
        }
    }
    emb.volume = row_sums.iter().sum();
    emb.row_sums = row_sums;
    emb.column_sums = col_sums;
    emb.singular_values = sv[..rank].to_vec();
    emb.psi = psi;
    emb.rank = rank;
    emb.dimension = rank - 1;
    emb.coords = rows.par_iter().flat_map_iter(|r| emb.coordinates_of_row(r)).collect();
    Ok(emb)
}

impl ReferenceEmbedding {
    /// Reference decomposition of a trained metric on its training data.
    pub fn from_metric(x: &DataMatrix, metric: &RegularizedMetric, cfg: &MetricConfig, seed: u64) -> Result<Self> {
        build_reference(x, &metric.weights, metric.sigma, &ExtensionConfig::from_metric(cfg, seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewPointEstimate {
    pub coordinates: Vec<f64>,
    /// Training indices of the cohort.
    pub neighborhood: Vec<usize>,
    pub value: std::result::Result<f64, CohortError>,
}

/// `f_hat(z) = F(N(z))` with `N(z)` drawn from the training points only.
pub fn estimate_for_new_point<F: CohortFunctional + ?Sized>(
    reference: &ReferenceEmbedding,
    training: &PointCloud,
    f: &F,
    z: &[f64],
    rule: &NeighborhoodRule,
) -> Result<NewPointEstimate> {
    let coordinates = reference.extend(z)?;
    let cohort = neighborhood(training, &coordinates, rule, f.min_cohort());
    let value = f.check_size(&cohort).and_then(|_| f.evaluate(&cohort));
    Ok(NewPointEstimate { coordinates, neighborhood: cohort, value })
}
