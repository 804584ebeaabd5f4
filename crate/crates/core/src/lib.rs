//! Variance-component and fixed-effect estimation for probit GLMMs under
//! case-control ascertainment.
//!
//! The estimators are ascertained expectation propagation ([`aep`]), the
//! ascertained pairwise likelihood ([`apl`]), a moment estimator ([`pcgc`])
//! and plain EP ([`ep`]). Fixed effects come from ascertained estimating
//! equations ([`agee`]); [`estimate::fit_study`] chains everything for one
//! study and [`simgen`] produces synthetic case-control studies.

pub mod aep;
pub mod agee;
pub mod apl;
pub mod bvn;
pub mod ep;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod optimize;
pub mod pcgc;
pub mod simgen;

pub use error::{Error, Result};
pub use estimate::{fit_study, FitOptions, FitResult, Method, SeMode};
pub use model::{AscertainmentScheme, Dataset, Kernel, ModelParams};
