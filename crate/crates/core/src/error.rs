use std::fmt;

/// Errors raised by model construction, fitting, prediction and persistence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("subject `{subject}` is missing covariate `{covariate}`")]
    MissingCovariate { subject: String, covariate: String },

    #[error("cumulative hazard overflow on {0}")]
    HazardOverflow(SegmentInfo),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The offending log-linear hazard piece reported by [`Error::HazardOverflow`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentInfo {
    pub t_lo: f64,
    pub t_hi: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl fmt::Display for SegmentInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "segment [{}, {}] with log h(s) = {} + {}·s",
            self.t_lo, self.t_hi, self.intercept, self.slope
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn data<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Data(msg.into()))
}
