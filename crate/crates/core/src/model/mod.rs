//! Model definition: outcome declarations, design, parameters, the latent
//! trait and the longitudinal likelihood.

pub mod data;
pub mod latent;
pub mod longitudinal;
pub mod outcome;
pub mod params;
pub mod spec;
pub mod spline;

pub use data::{Dataset, SubjectRecord, Visit};
pub use latent::{latent_trait, LinearDesign};
pub use longitudinal::{longitudinal_loglik, Observation, PreparedSubject};
pub use outcome::{outcome_distribution, OutcomeDistribution};
pub use params::{LatentState, OutcomeParams, ParameterDraw, SubjectEffects};
pub use spec::{Association, DesignSpec, ModelSpec, OutcomeKind, OutcomeSpec, Term};
pub use spline::spline_basis;
