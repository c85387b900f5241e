//! Mixtures of multivariate-t distributions whose components live in their
//! own low-dimensional subspaces.
//!
//! The 28 models of [`model_space`] constrain the subspace variances, noise
//! variance, orientation, intrinsic dimension and degrees of freedom across
//! groups. [`ecm::fit`] fits one model; [`selection::grid_search`] fits a
//! grid of models and component counts and picks the best by BIC.
//!
//! ```
//! use thddc::{data_io::fixtures, ecm::{fit, FitConfig}, model_space::parse_model};
//!
//! let iris = fixtures::iris();
//! let spec = parse_model("UUUCC").unwrap();
//! let result = fit(&iris.x, &spec, 3, &FitConfig::default()).unwrap();
//! assert_eq!(result.labels.len(), 150);
//! ```

pub mod data_io;
pub mod ecm;
pub mod error;
pub mod evaluation;
pub mod model_space;
pub mod numerics;
pub mod seeds;
pub mod selection;
pub mod tdist;

pub use error::{Error, Result};
