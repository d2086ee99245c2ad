//! Generalized skew-t probabilistic PCA.
//!
//! Observations follow `y = mu + x W^T + eps`, where the latent factors `x`
//! and the noise `eps` are independent normal variance-mean mixtures whose
//! Gamma mixing vectors are co-monotone transforms of one uniform each. The
//! crate fits the family by EM under missing data, reports model-implied
//! covariances and computes influence-function diagnostics.

pub mod baselines;
pub mod conditional;
pub mod covariance;
pub mod em;
pub mod error;
pub mod influence;
pub mod quadrature;
pub mod robust;
pub mod scenarios;
pub mod simulate;
pub mod skewt;
pub mod special;
pub mod types;

pub use baselines::{fit_gaussian_ppca, fit_student_t_ppca, BaselineEstimate};
pub use covariance::{eigendecompose, model_covariance, proportion_of_variance, CovarianceReport};
pub use em::{fit, fit_free, initial_params, log_likelihood, EmConfig, IntegralSet};
pub use error::{Error, Result};
pub use quadrature::{build_grid, QuadratureGrid};
pub use robust::{huber_location_scale, standardize, LocationScale};
pub use skewt::{fit_skew_t_grid, SkewGridConfig, SkewGridFit, SkewGridResult};
pub use types::{collapse_kind, validate, DataSet, FitResult, FreeParams, ModelKind, ModelParams};
