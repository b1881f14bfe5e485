use std::fmt::Write as _;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::estimate::{pointwise_estimate, NeighborhoodRule};
use super::kernel::{weighted_bandwidth, weighted_kernel, weighted_kernel_knn};
use super::weights::{aggregate_point_weights, compute_folder_weights, WeightField};
use super::CohortFunctional;
use crate::cloud::PointCloud;
use crate::data::DataMatrix;
use crate::diffusion::{
    build_gaussian, markov_normalize, spectral_embed, Bandwidth, DiffusionEmbedding, KernelConfig,
};
use crate::error::{CohortError, Error, Result};
use crate::rng::substream_seed;
use crate::tree::{build_topdown, PartitionTree, TreeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub kernel: KernelConfig,
    pub dimension: usize,
    pub diffusion_time: f64,
    pub tree: TreeConfig,
    pub k_bins: usize,
    pub alpha: f64,
    /// `None` selects the regularizer from the weights at every iteration.
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub neighborhood: NeighborhoodRule,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::default(),
            dimension: 10,
            diffusion_time: 1.0,
            tree: TreeConfig::default(),
            k_bins: 3,
            alpha: 1.0,
            lambda: None,
            tol: 1e-3,
            max_iters: 10,
            neighborhood: NeighborhoodRule::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(s) = self.kernel.bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("metric.kernel.bandwidth", "must be positive"));
            }
        }
        if !(self.kernel.truncation >= 0.0 && self.kernel.truncation < 1.0) {
            return Err(Error::config("metric.kernel.truncation", "must lie in [0, 1)"));
        }
        if self.kernel.knn == 0 {
            return Err(Error::config("metric.kernel.knn", "must be at least 1"));
        }
        if self.kernel.bandwidth_sample < 2 {
            return Err(Error::config("metric.kernel.bandwidth_sample", "must be at least 2"));
        }
        if self.dimension == 0 {
            return Err(Error::config("metric.dimension", "must be at least 1"));
        }
        if !(self.diffusion_time > 0.0 && self.diffusion_time.is_finite()) {
            return Err(Error::config("metric.diffusion_time", "must be positive"));
        }
        if self.k_bins < 2 {
            return Err(Error::config("metric.k_bins", "must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("metric.alpha", "must be positive"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config("metric.lambda", "must be positive"));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("metric.tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("metric.max_iters", "must be at least 1"));
        }
        self.tree.validate()?;
        self.neighborhood.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sigma: f64,
    pub weight_norm: f64,
    /// Relative Frobenius change between the weights that built this
    /// iteration's embedding and the weights derived from its tree.
    pub relative_change: f64,
    pub tree_depth: usize,
    pub leading_eigenvalues: Vec<f64>,
}

/// Final embedding of the alternation together with the weights that built it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedMetric {
    pub embedding: DiffusionEmbedding,
    pub weights: WeightField,
    pub sigma: f64,
    pub tree: PartitionTree,
    pub neighborhood: NeighborhoodRule,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
}

impl RegularizedMetric {
    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn cloud(&self) -> PointCloud {
        self.embedding.cloud()
    }

    /// `d_F^t(i, j)`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        crate::diffusion::diffusion_distance(&self.embedding, i, j)
    }

    /// `F` over the neighborhood of training point `i`.
    pub fn estimate<F: CohortFunctional + ?Sized>(
        &self,
        f: &F,
        i: usize,
    ) -> std::result::Result<f64, CohortError> {
        let cloud = self.cloud();
        pointwise_estimate(&cloud, f, cloud.row(i), &self.neighborhood)
    }

    /// Structured text summary of the iteration.
    pub fn report(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "iterations: {} ({})",
            self.iterations.len(),
            if self.converged { "converged" } else { "not converged" }
        )
        .unwrap();
        writeln!(s, "bandwidth: {:.6e}", self.sigma).unwrap();
        writeln!(s, "lambda: {:.6e}", self.weights.lambda).unwrap();
        for r in &self.iterations {
            let ev: Vec<String> = r.leading_eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(
                s,
                "iteration {}: sigma={:.4e} |w|={:.4e} change={:.4e} depth={} eigenvalues=[{}]",
                r.iteration,
                r.sigma,
                r.weight_norm,
                r.relative_change,
                r.tree_depth,
                ev.join(", ")
            )
            .unwrap();
        }
        let means = self.weights.mean_feature_weights();
        let mw: Vec<String> = means.iter().map(|v| format!("{v:.4e}")).collect();
        writeln!(s, "mean feature weights: [{}]", mw.join(", ")).unwrap();
        s
    }
}

/// Diffusion embedding of the weighted kernel and the bandwidth used.
pub fn weighted_embedding(
    x: &DataMatrix,
    weights: &WeightField,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<(DiffusionEmbedding, f64)> {
    let sigma = match cfg.kernel.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => weighted_bandwidth(x, weights, cfg.kernel.bandwidth_sample, seed)
            .unwrap_or(1.0),
    };
    let kernel = if x.n_points() > cfg.kernel.dense_limit {
        weighted_kernel_knn(x, weights, sigma, cfg.kernel.knn)?
    } else {
        weighted_kernel(x, weights, sigma)?
    };
    let p = markov_normalize(kernel)?;
    let d = cfg.dimension.min(x.n_points() - 1);
    Ok((spectral_embed(&p, cfg.diffusion_time, d)?, sigma))
}

fn relative_change(next: &WeightField, prev: &WeightField) -> f64 {
    let diff: f64 = next
        .point_weights()
        .iter()
        .zip(prev.point_weights())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / prev.frobenius().max(f64::MIN_POSITIVE)
}

/// Alternates embedding, tree and weights until the point weights stabilize.
///
/// The first embedding uses the unweighted Gaussian kernel. Each iteration
/// embeds with the current weights, rebuilds the tree on that embedding and
/// derives new weights; the loop stops when the relative Frobenius change of
/// the point weights drops below `tol`, returning the embedding built from
/// the stable weights.
pub fn iterate_algorithm1<F: CohortFunctional + ?Sized>(
    x: &DataMatrix,
    f: &F,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<RegularizedMetric> {
    cfg.validate()?;
    let n = x.n_points();
    let c = f.min_cohort();
    if n < 2 * c.max(1) {
        return Err(Error::config(
            "min_cohort",
            format!("{n} points cannot hold two cohorts of {c}"),
        ));
    }
    let d = cfg.dimension.min(n - 1);
    let base = build_gaussian(x, &cfg.kernel, substream_seed(seed, "bandwidth", 0))?;
    let emb0 = spectral_embed(&markov_normalize(base)?, cfg.diffusion_time, d)?;
    let tree0 = build_topdown(&emb0.cloud(), &cfg.tree, substream_seed(seed, "tree", 0))?;
    let fw = compute_folder_weights(&tree0, x, f, cfg.k_bins);
    let mut weights = aggregate_point_weights(&tree0, &fw, cfg.alpha, cfg.lambda);

    let mut records = Vec::new();
    let mut last: Option<(DiffusionEmbedding, f64, PartitionTree, WeightField)> = None;
    for k in 1..=cfg.max_iters {
        let (emb, sigma) =
            weighted_embedding(x, &weights, cfg, substream_seed(seed, "bandwidth", k as u64))?;
        let tree = build_topdown(&emb.cloud(), &cfg.tree, substream_seed(seed, "tree", k as u64))?;
        let fw = compute_folder_weights(&tree, x, f, cfg.k_bins);
        let next = aggregate_point_weights(&tree, &fw, cfg.alpha, cfg.lambda);
        let change = relative_change(&next, &weights);
        info!("iteration {k}: relative weight change {change:.3e}");
        records.push(IterationRecord {
            iteration: k,
            sigma,
            weight_norm: weights.frobenius(),
            relative_change: change,
            tree_depth: tree.depth(),
            leading_eigenvalues: emb.eigenvalues.iter().take(6).copied().collect(),
        });
        if change < cfg.tol {
            return Ok(RegularizedMetric {
                embedding: emb,
                weights,
                sigma,
                tree,
                neighborhood: cfg.neighborhood,
                converged: true,
                iterations: records,
            });
        }
        last = Some((emb, sigma, tree, std::mem::replace(&mut weights, next)));
    }
    warn!("weights did not stabilize after {} iterations", cfg.max_iters);
    let (embedding, sigma, tree, weights) = last.expect("at least one iteration");
    Ok(RegularizedMetric {
        embedding,
        weights,
        sigma,
        tree,
        neighborhood: cfg.neighborhood,
        converged: false,
        iterations: records,
    })
}
