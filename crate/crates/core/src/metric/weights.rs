use std::io::Write;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CohortFunctional;
use crate::data::DataMatrix;
use crate::diffusion::median_nonzero;
use crate::error::{CohortError, Result};
use crate::tree::PartitionTree;

/// A value interval of one feature inside a folder, with the folder points
/// falling in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub points: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

/// Quantile bins `[a_j, a_{j+1})` (last bin closed) of feature `y` over the
/// folder, with `a_j` the `floor(j n / k)`-th order statistic. Empty bins are
/// dropped; bins are ordered by value.
pub fn bin_feature(folder: &[usize], x: &DataMatrix, y: usize, k_bins: usize) -> Vec<Bin> {
    assert!(!folder.is_empty(), "cannot bin an empty folder");
    let mut order: Vec<(f64, usize)> = folder.iter().map(|&i| (x.get(i, y), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = order.len();
    let k = k_bins.max(1);
    let mut edges: Vec<f64> = (0..k).map(|j| order[j * n / k].0).collect();
    edges.dedup();
    let mut bins: Vec<Bin> = Vec::with_capacity(edges.len());
    let mut start = 0;
    for (b, _) in edges.iter().enumerate() {
        let end = match edges.get(b + 1) {
            Some(&next) => start + order[start..].partition_point(|p| p.0 < next),
            None => n,
        };
        if end > start {
            let mut points: Vec<usize> = order[start..end].iter().map(|p| p.1).collect();
            points.sort_unstable();
            bins.push(Bin {
                points,
                lo: order[start].0,
                hi: order[end - 1].0,
            });
        }
        start = end;
    }
    bins
}

fn merge_into_neighbor(bins: &mut Vec<Bin>, cache: &mut Vec<Option<std::result::Result<f64, CohortError>>>, j: usize) {
    let left_gap = if j > 0 { bins[j].lo - bins[j - 1].hi } else { f64::INFINITY };
    let right_gap = if j + 1 < bins.len() { bins[j + 1].lo - bins[j].hi } else { f64::INFINITY };
    let target = if left_gap <= right_gap { j - 1 } else { j + 1 };
    let moved = bins.remove(j);
    cache.remove(j);
    let t = if target > j { target - 1 } else { target };
    let bin = &mut bins[t];
    bin.points.extend(moved.points);
    bin.points.sort_unstable();
    bin.lo = bin.lo.min(moved.lo);
    bin.hi = bin.hi.max(moved.hi);
    cache[t] = None;
}

/// Size-weighted variance of `F` across the bins.
///
/// Bins smaller than the functional's minimum cohort, and bins on which `F`
/// is undefined, are merged into the neighboring bin with the closer value
/// gap first. A single remaining bin carries no discriminating power.
pub fn folder_weight<F: CohortFunctional + ?Sized>(bins: &[Bin], f: &F) -> f64 {
    let mut bins = bins.to_vec();
    let mut cache: Vec<Option<std::result::Result<f64, CohortError>>> = vec![None; bins.len()];
    let c = f.min_cohort();
    loop {
        if bins.len() <= 1 {
            if bins.len() == 1 {
                cache.resize(1, None);
                if cache[0].is_none() {
                    cache[0] = Some(f.evaluate(&bins[0].points));
                }
                if !matches!(cache[0], Some(Ok(_))) {
                    debug!("no valid bin after merging; folder weight set to 0");
                }
            }
            return 0.0;
        }
        if let Some(j) = bins.iter().position(|b| b.points.len() < c) {
            merge_into_neighbor(&mut bins, &mut cache, j);
            continue;
        }
        for (b, slot) in bins.iter().zip(cache.iter_mut()) {
            if slot.is_none() {
                *slot = Some(f.evaluate(&b.points));
            }
        }
        if let Some(j) = cache.iter().position(|v| !matches!(v, Some(Ok(_)))) {
            merge_into_neighbor(&mut bins, &mut cache, j);
            continue;
        }
        let values: Vec<f64> = cache.iter().map(|v| *v.as_ref().unwrap().as_ref().unwrap()).collect();
        let total: usize = bins.iter().map(|b| b.points.len()).sum();
        let total = total as f64;
        let mean: f64 = bins
            .iter()
            .zip(&values)
            .map(|(b, v)| b.points.len() as f64 / total * v)
            .sum();
        return bins
            .iter()
            .zip(&values)
            .map(|(b, v)| b.points.len() as f64 / total * (v - mean).powi(2))
            .sum();
    }
}

/// `levels[l][folder][feature]` for tree levels `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FolderWeights {
    pub levels: Vec<Vec<Vec<f64>>>,
}

/// Folder weights for every (level, folder, feature). Folders too small to
/// hold two admissible bins are skipped with weight zero.
pub fn compute_folder_weights<F: CohortFunctional + ?Sized>(
    tree: &PartitionTree,
    x: &DataMatrix,
    f: &F,
    k_bins: usize,
) -> FolderWeights {
    let m = x.n_features();
    let c = f.min_cohort().max(1);
    let mut jobs = Vec::new();
    for l in 1..=tree.depth() {
        for (fi, folder) in tree.level(l).iter().enumerate() {
            if folder.len() >= 2 * c && folder.len() >= 2 {
                for y in 0..m {
                    jobs.push((l, fi, y));
                }
            }
        }
    }
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(l, fi, y)| {
            let bins = bin_feature(&tree.folder(l, fi).points, x, y, k_bins);
            folder_weight(&bins, f)
        })
        .collect();
    let mut levels: Vec<Vec<Vec<f64>>> = (1..=tree.depth())
        .map(|l| vec![vec![0.0; m]; tree.level(l).len()])
        .collect();
    for (&(l, fi, y), w) in jobs.iter().zip(results) {
        levels[l - 1][fi][y] = w;
    }
    FolderWeights { levels }
}

/// Per-point feature weights and the induced diagonal metrics
/// `W_x[y, y] = 1 / (w_x(y) + lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    pub folder_weights: FolderWeights,
    n: usize,
    m: usize,
    point_weights: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
}

impl WeightField {
    /// Builds a field directly from point weights (row-major `n x m`).
    pub fn from_point_weights(point_weights: Vec<f64>, n: usize, m: usize, lambda: f64) -> Self {
        assert_eq!(point_weights.len(), n * m);
        assert!(lambda > 0.0, "regularizer must be positive");
        Self {
            folder_weights: FolderWeights { levels: Vec::new() },
            n,
            m,
            point_weights,
            alpha: 1.0,
            lambda,
        }
    }

    /// Isotropic field: every `w_x(y) = 0`, so `W_x = I / lambda`.
    pub fn isotropic(n: usize, m: usize, lambda: f64) -> Self {
        Self::from_point_weights(vec![0.0; n * m], n, m, lambda)
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.m
    }

    pub fn point_weights(&self) -> &[f64] {
        &self.point_weights
    }

    pub fn weights_of(&self, i: usize) -> &[f64] {
        &self.point_weights[i * self.m..(i + 1) * self.m]
    }

    /// Diagonal of `W_x` for point `i`.
    pub fn metric_diagonal(&self, i: usize) -> Vec<f64> {
        self.weights_of(i).iter().map(|w| 1.0 / (w + self.lambda)).collect()
    }

    /// Row-major `n x m` matrix of `W_x` diagonals.
    pub fn metric_diagonals(&self) -> Vec<f64> {
        self.point_weights.iter().map(|w| 1.0 / (w + self.lambda)).collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.point_weights.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mean point weight per feature.
    pub fn mean_feature_weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for i in 0..self.n {
            for (o, w) in out.iter_mut().zip(self.weights_of(i)) {
                *o += w;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.n as f64);
        out
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut pw = Vec::with_capacity(indices.len() * self.m);
        for &i in indices {
            pw.extend_from_slice(self.weights_of(i));
        }
        Self {
            folder_weights: self.folder_weights.clone(),
            n: indices.len(),
            m: self.m,
            point_weights: pw,
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    /// CSV with a header `id,<feature names>` and one row per point.
    pub fn write_csv<W: Write>(&self, out: W, ids: &[String], names: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend(names.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = vec![ids[i].clone()];
            rec.extend(self.weights_of(i).iter().map(|v| format!("{v:e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `w_x(y) = sum_l 2^{-alpha l} w^l_{folder(l, x)}(y)` over the point's ancestor
/// folders, root at `l = 1`. `lambda = None` picks `1e-3` times the median of
/// the nonzero aggregated weights, or `1e-6` when every weight is zero.
pub fn aggregate_point_weights(
    tree: &PartitionTree,
    folder_weights: &FolderWeights,
    alpha: f64,
    lambda: Option<f64>,
) -> WeightField {
    let n = tree.n_points();
    let m = folder_weights
        .levels
        .iter()
        .flatten()
        .next()
        .map_or(0, Vec::len);
    let mut pw = vec![0.0; n * m];
    for l in 1..=tree.depth() {
        let decay = 2f64.powf(-alpha * l as f64);
        let level = &folder_weights.levels[l - 1];
        for i in 0..n {
            let w = &level[tree.folder_of(l, i)];
            for (acc, v) in pw[i * m..(i + 1) * m].iter_mut().zip(w) {
                *acc += decay * v;
            }
        }
    }
    let lambda = lambda.unwrap_or_else(|| median_nonzero(pw.clone()).map_or(1e-6, |v| 1e-3 * v));
    WeightField {
        folder_weights: folder_weights.clone(),
        n,
        m,
        point_weights: pw,
        alpha,
        lambda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{CohortMean, Constant};

    fn column(values: &[f64]) -> DataMatrix {
        DataMatrix::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn quantile_bins_on_one_to_nine() {
        let x = column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let folder: Vec<usize> = (0..9).collect();
        let bins = bin_feature(&folder, &x, 0, 3);
        let pts: Vec<Vec<usize>> = bins.iter().map(|b| b.points.clone()).collect();
        assert_eq!(pts, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]]);
    }

    #[test]
    fn constant_column_single_bin() {
        let x = column(&[2.0; 7]);
        let bins = bin_feature(&(0..7).collect::<Vec<_>>(), &x, 0, 3);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].points.len(), 7);
    }

    #[test]
    fn duplicated_edges_still_partition() {
        let x = column(&[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        let folder: Vec<usize> = (0..10).collect();
        let bins = bin_feature(&folder, &x, 0, 4);
        let mut all: Vec<usize> = bins.iter().flat_map(|b| b.points.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, folder);
    }

    fn bins_of(sizes: &[usize]) -> Vec<Bin> {
        let mut next = 0;
        sizes
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let points: Vec<usize> = (next..next + s).collect();
                next += s;
                Bin {
                    points,
                    lo: j as f64,
                    hi: j as f64,
                }
            })
            .collect()
    }

    #[test]
    fn hand_examples() {
        let c = Constant { value: 3.0, min: 1 };
        assert_eq!(folder_weight(&bins_of(&[3, 3, 3]), &c), 0.0);

        let f = CohortMean {
            values: vec![0.0, 0.0, 1.0, 1.0],
            min: 1,
        };
        assert!((folder_weight(&bins_of(&[2, 2]), &f) - 0.25).abs() < 1e-15);
        let f = CohortMean {
            values: vec![0.0, 0.0, 1.0, 1.0],
            min: 1,
        };
        assert!((folder_weight(&bins_of(&[2, 1, 1]), &f) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn small_bins_merge_toward_closer_gap() {
        let bins = vec![
            Bin { points: vec![0, 1], lo: 0.0, hi: 0.1 },
            Bin { points: vec![2], lo: 0.9, hi: 0.9 },
            Bin { points: vec![3, 4], lo: 1.0, hi: 1.2 },
        ];
        let f = CohortMean {
            values: vec![0.0, 0.0, 1.0, 1.0, 1.0],
            min: 2,
        };
        // bin {2} joins {3,4}: F = (0, 1), sizes (2, 3)
        let mean = 0.6;
        let want = 0.4 * mean * mean + 0.6 * (1.0f64 - mean).powi(2);
        assert!((folder_weight(&bins, &f) - want).abs() < 1e-15);
    }

    #[test]
    fn aggregation_two_levels() {
        let tree = PartitionTree::from_levels(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap();
        let fw = FolderWeights {
            levels: vec![vec![vec![4.0, 0.0]], vec![vec![8.0, 2.0], vec![0.0, 1.0]]],
        };
        let wf = aggregate_point_weights(&tree, &fw, 1.0, Some(0.5));
        assert_eq!(wf.weights_of(0), &[4.0 / 2.0 + 8.0 / 4.0, 0.5]);
        assert_eq!(wf.weights_of(1), &[2.0, 0.25]);
        assert_eq!(wf.metric_diagonal(1), vec![1.0 / 2.5, 1.0 / 0.75]);
    }

    #[test]
    fn zero_weights_give_isotropic_metric() {
        let tree = PartitionTree::from_levels(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap();
        let fw = FolderWeights {
            levels: vec![vec![vec![0.0; 3]], vec![vec![0.0; 3], vec![0.0; 3]]],
        };
        let wf = aggregate_point_weights(&tree, &fw, 1.0, None);
        assert_eq!(wf.lambda, 1e-6);
        assert!(wf.metric_diagonals().iter().all(|v| (*v - 1e6).abs() < 1e-6));
    }
}
