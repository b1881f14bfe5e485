use serde::{Deserialize, Serialize};

use super::CohortFunctional;
use crate::cloud::PointCloud;
use crate::error::{CohortError, Error, Result};

/// How the cohort around a point is selected in the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NeighborhoodRule {
    /// The `k` nearest points; `None` means `max(c, ceil(fraction * n))`.
    Knn {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    /// Points strictly within `eps`; falls back to the `c` nearest points
    /// when the ball holds fewer than `c`.
    Radius { eps: f64 },
}

fn default_fraction() -> f64 {
    0.05
}

impl Default for NeighborhoodRule {
    fn default() -> Self {
        NeighborhoodRule::Knn {
            k: None,
            fraction: default_fraction(),
        }
    }
}

impl NeighborhoodRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NeighborhoodRule::Knn { k, fraction } => {
                if k == Some(0) {
                    return Err(Error::config("neighborhood.k", "must be at least 1"));
                }
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::config("neighborhood.fraction", "must lie in (0, 1]"));
                }
            }
            NeighborhoodRule::Radius { eps } => {
                if !(eps > 0.0) {
                    return Err(Error::config("neighborhood.eps", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Neighbor count used by the k-NN rule on `n` points with minimum cohort `c`.
    pub fn knn_count(&self, n: usize, c: usize) -> usize {
        match *self {
            NeighborhoodRule::Knn { k: Some(k), .. } => k,
            NeighborhoodRule::Knn { k: None, fraction } => c.max((fraction * n as f64).ceil() as usize),
            NeighborhoodRule::Radius { .. } => c,
        }
    }
}

/// Cohort of `query` in `cloud` under `rule`, for a functional with minimum
/// cohort `c`.
pub fn neighborhood(cloud: &PointCloud, query: &[f64], rule: &NeighborhoodRule, c: usize) -> Vec<usize> {
    match *rule {
        NeighborhoodRule::Knn { .. } => cloud.knn(query, rule.knn_count(cloud.n_points(), c)),
        NeighborhoodRule::Radius { eps } => {
            let ball = cloud.within(query, eps);
            if ball.len() >= c {
                ball
            } else {
                cloud.knn(query, c)
            }
        }
    }
}

/// `f_hat(x) = F(N(x))`.
pub fn pointwise_estimate<F: CohortFunctional + ?Sized>(
    cloud: &PointCloud,
    f: &F,
    query: &[f64],
    rule: &NeighborhoodRule,
) -> std::result::Result<f64, CohortError> {
    let cohort = neighborhood(cloud, query, rule, f.min_cohort());
    f.check_size(&cohort)?;
    f.evaluate(&cohort)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleEstimate {
    /// `F(N^{eps_1})` at the coarsest scale.
    pub coarse: f64,
    /// `F(N^{eps_j / 2}) - F(N^{eps_j})` for each retained scale.
    pub details: Vec<f64>,
    /// Index of the first scale dropped because its half-radius ball held
    /// fewer than `c` points.
    pub truncated_at: Option<usize>,
}

impl MultiscaleEstimate {
    /// Coarse term plus all retained details.
    pub fn reconstruction(&self) -> f64 {
        self.coarse + self.details.iter().sum::<f64>()
    }
}

/// Detail coefficients over decreasing radii `eps_1 > eps_2 > ...`.
pub fn multiscale_estimate<F: CohortFunctional + ?Sized>(
    cloud: &PointCloud,
    f: &F,
    query: &[f64],
    scales: &[f64],
) -> std::result::Result<MultiscaleEstimate, CohortError> {
    let Some(&first) = scales.first() else {
        return Err(CohortError::Undefined("no scales given".into()));
    };
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CohortError::Undefined("scales must be strictly decreasing".into()));
    }
    let c = f.min_cohort();
    let outer = cloud.within(query, first);
    f.check_size(&outer)?;
    let coarse = f.evaluate(&outer)?;
    let mut details = Vec::with_capacity(scales.len());
    let mut truncated_at = None;
    for (j, &eps) in scales.iter().enumerate() {
        let big = cloud.within(query, eps);
        let small = cloud.within(query, eps / 2.0);
        if big.len() < c || small.len() < c {
            truncated_at = Some(j);
            break;
        }
        details.push(f.evaluate(&small)? - f.evaluate(&big)?);
    }
    Ok(MultiscaleEstimate {
        coarse,
        details,
        truncated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{CohortMean, Constant};

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.to_vec(), xs.len(), 1)
    }

    #[test]
    fn huge_radius_gives_global_value() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let f = CohortMean { values: xs.clone(), min: 3 };
        let cloud = line(&xs);
        let rule = NeighborhoodRule::Radius { eps: 100.0 };
        for x in &xs {
            assert_eq!(pointwise_estimate(&cloud, &f, &[*x], &rule).unwrap(), 9.5);
        }
    }

    #[test]
    fn tiny_radius_falls_back_to_c_nearest() {
        let xs = [0.0, 0.1, 0.25, 0.7, 2.0, 3.0];
        let labels = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let f = CohortMean { values: labels, min: 3 };
        let rule = NeighborhoodRule::Radius { eps: 1e-9 };
        let v = pointwise_estimate(&line(&xs), &f, &[0.0], &rule).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn too_small_reports_size() {
        let f = Constant { value: 0.0, min: 5 };
        let err = pointwise_estimate(&line(&[0.0, 1.0]), &f, &[0.0], &NeighborhoodRule::default()).unwrap_err();
        assert_eq!(err, CohortError::TooSmall { size: 2, min: 5 });
    }

    #[test]
    fn dyadic_scales_telescope() {
        let xs: Vec<f64> = (0..64).map(|i| (i as f64 * 0.61).sin() * 4.0).collect();
        let f = CohortMean { values: xs.iter().map(|v| v * v).collect(), min: 2 };
        let cloud = line(&xs);
        let scales = [8.0, 4.0, 2.0, 1.0];
        let ms = multiscale_estimate(&cloud, &f, &[0.3], &scales).unwrap();
        assert_eq!(ms.details.len(), 4);
        let finest = f.evaluate(&cloud.within(&[0.3], 0.5)).unwrap();
        assert!((ms.reconstruction() - finest).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_details() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        let f = Constant { value: 2.0, min: 2 };
        let ms = multiscale_estimate(&line(&xs), &f, &[1.5], &[2.0, 1.0, 0.5]).unwrap();
        assert!(ms.details.iter().all(|d| *d == 0.0));
    }
}
