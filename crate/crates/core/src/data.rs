//! Point-by-feature data matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` points by `m` features, stored row-major, with point ids and feature
/// labels. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
    point_ids: Vec<String>,
    feature_names: Vec<String>,
}

impl DataMatrix {
    pub fn new(
        values: Vec<f64>,
        n: usize,
        m: usize,
        point_ids: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be at least 1x1, got {n}x{m}"
            )));
        }
        if values.len() != n * m {
            return Err(Error::InvalidInput(format!(
                "expected {} values for {n}x{m}, got {}",
                n * m,
                values.len()
            )));
        }
        if point_ids.len() != n || feature_names.len() != m {
            return Err(Error::InvalidInput(format!(
                "got {} point ids and {} feature names for a {n}x{m} matrix",
                point_ids.len(),
                feature_names.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / m,
                col: pos % m,
            });
        }
        Ok(Self {
            n,
            m,
            values,
            point_ids,
            feature_names,
        })
    }

    /// Builds a matrix from rows with generated ids `0..n` and labels `x_1..x_m`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(
            values,
            n,
            m,
            (0..n).map(|i| i.to_string()).collect(),
            (1..=m).map(|j| format!("x_{j}")).collect(),
        )
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point_ids(&self) -> &[String] {
        &self.point_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.m);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            m: self.m,
            values,
            point_ids: indices.iter().map(|&i| self.point_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.m, &self.values)
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![f64::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 0 }));
    }

    #[test]
    fn rejects_empty() {
        assert!(DataMatrix::from_rows(&[]).is_err());
    }

    #[test]
    fn select_keeps_ids() {
        let x = DataMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let s = x.select(&[2, 0]);
        assert_eq!(s.point_ids(), &["2".to_string(), "0".to_string()]);
        assert_eq!(s.row(0), &[3.0]);
    }
}
