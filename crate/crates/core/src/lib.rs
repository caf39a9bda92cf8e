//! Gini covariance matrices and their affine equivariant version, together
//! with the comparison scatter estimators, influence functions and Monte
//! Carlo efficiency studies needed to evaluate them.
//!
//! ```
//! use gini_cov::{EllipticalSpec, EstimatorConfig, Family, Seed};
//!
//! let spec = EllipticalSpec::spherical(Family::Normal, 2).unwrap();
//! let x = spec.draw(500, Seed(1)).unwrap();
//! let gcm = gini_cov::sample_gcm(&x).unwrap();
//! let fit = gini_cov::tr_gini(&x, &EstimatorConfig::default()).unwrap();
//! assert!(fit.converged);
//! assert!((gcm.trace() - gini_cov::multivariate_gmd(&x).unwrap()).abs() < 1e-12);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod efficiency;
pub mod elliptical;
pub mod error;
pub mod influence;
pub mod linalg;
pub mod mest;
pub mod model;
mod pairwise;
pub mod scale;
pub mod sim;
pub mod spatial;

pub use elliptical::{EllipticalSpec, Family, Method};
pub use error::{Error, Result};
pub use mest::{duembgen, kotz_m, tr_gini, tyler_m, FixedPointReport};
pub use model::{
    CConvention, Consistency, EstimatorConfig, EstimatorKind, Sample, ScatterMatrix, Seed,
    ShapeMatrix,
};
pub use scale::{mad, mrcm, qn, sample_covariance, to_shape, ScaleKind};
pub use spatial::{
    gini_mean_difference, multivariate_gmd, sample_gcm, sample_rcm, sample_sscm, spatial_rank,
    spatial_sign, RankVector,
};
