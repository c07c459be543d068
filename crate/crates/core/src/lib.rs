#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod em;
pub mod error;
pub mod harness;
pub mod mixture;
pub mod seed;
pub mod simgen;
pub mod stp;

pub use dataset::Dataset;
pub use em::{fit_mle, FitConfig, FitResult};
pub use error::{ErrorKind, MixError, Result};
pub use mixture::{
    log_density_gaussian, log_likelihood, log_mixture_density, sample, GaussianComponent,
    MixtureParams,
};
