use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Prior hyperparameters.
///
/// Locations (intercepts, first thresholds, regression and association
/// coefficients, `η`) are `N(0, location_variance)`; loadings are
/// `Uniform(0, loading_upper)`; threshold increments are half-normal with
/// variance `increment_variance`; correlations are `Uniform(-1, 1)`; every
/// variance is `InverseGamma(variance_shape, variance_rate)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub location_variance: f64,
    pub loading_upper: f64,
    pub increment_variance: f64,
    pub variance_shape: f64,
    pub variance_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            location_variance: 100.0,
            loading_upper: 10.0,
            increment_variance: 100.0,
            variance_shape: 0.01,
            variance_rate: 0.01,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.location_variance,
            self.loading_upper,
            self.increment_variance,
            self.variance_shape,
            self.variance_rate,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            config("prior hyperparameters must be positive and finite")
        }
    }

    #[inline]
    pub(crate) fn location(&self, x: f64) -> f64 {
        -0.5 * x * x / self.location_variance
    }

    #[inline]
    pub(crate) fn location_grad(&self, x: f64) -> f64 {
        -x / self.location_variance
    }

    #[inline]
    pub(crate) fn increment(&self, d: f64) -> f64 {
        if d > 0.0 {
            -0.5 * d * d / self.increment_variance
        } else {
            f64::NEG_INFINITY
        }
    }

    #[inline]
    pub(crate) fn loading(&self, b: f64) -> f64 {
        if b > 0.0 && b < self.loading_upper {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Inverse-gamma log density of a variance, without its constant.
    #[inline]
    pub(crate) fn variance(&self, v: f64) -> f64 {
        if v > 0.0 {
            -(self.variance_shape + 1.0) * v.ln() - self.variance_rate / v
        } else {
            f64::NEG_INFINITY
        }
    }
}
