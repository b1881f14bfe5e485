//! Dense point clouds with brute-force neighborhood queries.

use serde::{Deserialize, Serialize};

use crate::data::squared_distance;

/// `n` points in `R^d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    coords: Vec<f64>,
    n: usize,
    d: usize,
}

impl PointCloud {
    pub fn new(coords: Vec<f64>, n: usize, d: usize) -> Self {
        assert_eq!(coords.len(), n * d, "coordinate buffer does not match {n}x{d}");
        Self { coords, n, d }
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            coords.extend_from_slice(self.row(i));
        }
        Self::new(coords, indices.len(), self.d)
    }

    /// All points sorted by `(distance to query, index)`.
    pub fn ranked(&self, query: &[f64]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = (0..self.n)
            .map(|i| (squared_distance(self.row(i), query).sqrt(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d
    }

    /// Indices of the `k` nearest points, ties broken by index.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<usize> {
        let k = k.min(self.n);
        let mut d: Vec<(f64, usize)> = (0..self.n)
            .map(|i| (squared_distance(self.row(i), query), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() && k > 0 {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().take(k).map(|(_, i)| i).collect()
    }

    /// Indices strictly within `eps` of the query, ascending.
    pub fn within(&self, query: &[f64], eps: f64) -> Vec<usize> {
        let e2 = eps * eps;
        (0..self.n)
            .filter(|&i| squared_distance(self.row(i), query) < e2)
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.max(squared_distance(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_ties_by_index() {
        let c = PointCloud::new(vec![0.0, 1.0, -1.0, 2.0], 4, 1);
        assert_eq!(c.knn(&[0.0], 3), vec![0, 1, 2]);
        assert_eq!(c.within(&[0.0], 1.0), vec![0]);
        assert_eq!(c.within(&[0.0], 1.5), vec![0, 1, 2]);
        assert_eq!(c.diameter(), 3.0);
    }
}
