//! Function-regularized diffusion metrics.
//!
//! A [`CohortFunctional`] is evaluated on quantile bins of every feature inside
//! every folder of a partition tree. Features whose bins disagree about `F`
//! receive large local weights, the weights shrink the kernel's length scale
//! along those features, and the embedding/tree/weights loop is iterated until
//! the weights settle.

mod estimate;
mod iterate;
mod kernel;
mod weights;

pub use estimate::{
    multiscale_estimate, neighborhood, pointwise_estimate, MultiscaleEstimate, NeighborhoodRule,
};
pub use iterate::{
    iterate_algorithm1, weighted_embedding, IterationRecord, MetricConfig, RegularizedMetric,
};
pub use kernel::{weighted_bandwidth, weighted_kernel, weighted_kernel_knn, weighted_log_entry};
pub use weights::{
    aggregate_point_weights, bin_feature, compute_folder_weights, folder_weight, Bin,
    FolderWeights, WeightField,
};

use crate::error::CohortError;

/// A functional `F(E)` defined only on cohorts of at least `min_cohort` points.
pub trait CohortFunctional: Sync {
    fn min_cohort(&self) -> usize;

    /// Evaluates `F` on the index set `cohort`. Implementations must be
    /// deterministic and return [`CohortError::TooSmall`] below `min_cohort`.
    fn evaluate(&self, cohort: &[usize]) -> Result<f64, CohortError>;

    fn check_size(&self, cohort: &[usize]) -> Result<(), CohortError> {
        if cohort.len() < self.min_cohort() {
            Err(CohortError::TooSmall {
                size: cohort.len(),
                min: self.min_cohort(),
            })
        } else {
            Ok(())
        }
    }
}

/// Cohort mean of a stored per-point label.
#[derive(Debug, Clone)]
pub struct CohortMean {
    pub values: Vec<f64>,
    pub min: usize,
}

impl CohortFunctional for CohortMean {
    fn min_cohort(&self) -> usize {
        self.min
    }

    fn evaluate(&self, cohort: &[usize]) -> Result<f64, CohortError> {
        self.check_size(cohort)?;
        Ok(cohort.iter().map(|&i| self.values[i]).sum::<f64>() / cohort.len() as f64)
    }
}

/// `F(E) = value` for every admissible cohort.
#[derive(Debug, Clone, Copy)]
pub struct Constant {
    pub value: f64,
    pub min: usize,
}

impl CohortFunctional for Constant {
    fn min_cohort(&self) -> usize {
        self.min
    }

    fn evaluate(&self, cohort: &[usize]) -> Result<f64, CohortError> {
        self.check_size(cohort)?;
        Ok(self.value)
    }
}
