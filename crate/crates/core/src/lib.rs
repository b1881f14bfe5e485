//! Function-regularized diffusion metrics for cohort-level functionals.
//!
//! The crate builds diffusion embeddings whose kernel is reweighted, feature by
//! feature and locally, according to how well each feature discriminates a
//! functional `F` that can only be evaluated on sufficiently large cohorts
//! (for example a local hazard ratio). It also ships the survival estimators,
//! synthetic trial generators and validation pipelines used to exercise it.

pub mod cloud;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod extension;
pub mod harness;
pub mod linalg;
pub mod metric;
pub mod rng;
pub mod sim;
pub mod survival;
pub mod tree;

pub use cloud::PointCloud;
pub use data::DataMatrix;
pub use error::{CohortError, Error, Result};
