//! Priors, the penalized joint posterior, MCMC fitting and diagnostics.

pub mod archive;
pub mod diagnostics;
pub mod layout;
pub mod posterior;
pub mod priors;
pub mod sampler;

pub use archive::{ColumnSummary, PosteriorArchive};
pub use diagnostics::{gelman_rubin, Diagnostics};
pub use layout::Layout;
pub use posterior::{grad_log_posterior, log_posterior, PosteriorGradient, Problem};
pub use priors::PriorSpec;
pub use sampler::{fit, ChainConfig};
