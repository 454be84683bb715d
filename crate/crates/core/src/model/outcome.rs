//! Measurement models linking the latent trait to each outcome type.

use std::f64::consts::PI;

use crate::model::params::OutcomeParams;
use crate::model::spec::{OutcomeKind, OutcomeSpec};

/// Probabilities below this are floored before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn expit_deriv(x: f64) -> f64 {
    let p = expit(x);
    p * (1.0 - p)
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeDistribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    /// Probabilities of categories `1..=n`.
    Categorical { probs: Vec<f64> },
}

impl OutcomeDistribution {
    pub fn log_prob(&self, y: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => {
                let z = (y - mean) / sd;
                -0.5 * (2.0 * PI * sd * sd).ln() - 0.5 * z * z
            }
            Self::Bernoulli { p } => {
                let q = if y == 1.0 { *p } else { 1.0 - p };
                q.max(PROB_FLOOR).ln()
            }
            Self::Categorical { probs } => probs[y as usize - 1].max(PROB_FLOOR).ln(),
        }
    }

    /// Expected value on the outcome's own scale (category index for ordinal).
    pub fn mean(&self) -> f64 {
        match self {
            Self::Normal { mean, .. } => *mean,
            Self::Bernoulli { p } => *p,
            Self::Categorical { probs } => probs.iter().enumerate().map(|(l, p)| (l + 1) as f64 * p).sum(),
        }
    }
}

/// Cumulative logit `P(y ≤ l) = expit(a_l - bθ)` for `l = 1..n-1`.
pub fn ordinal_probs(a: &[f64], b: f64, theta: f64) -> Vec<f64> {
    let n = a.len() + 1;
    (1..=n).map(|l| ordinal_prob(a, b, theta, l)).collect()
}

/// `P(y = l)` computed on whichever tail keeps the difference well conditioned.
#[inline]
pub fn ordinal_prob(a: &[f64], b: f64, theta: f64, l: usize) -> f64 {
    let n = a.len() + 1;
    let hi = (l < n).then(|| a[l - 1] - b * theta);
    let lo = (l > 1).then(|| a[l - 2] - b * theta);
    match (lo, hi) {
        (None, Some(h)) => expit(h),
        (Some(lo), None) => expit(-lo),
        (Some(lo), Some(h)) => {
            if lo > 0.0 {
                (expit(-lo) - expit(-h)).max(0.0)
            } else {
                (expit(h) - expit(lo)).max(0.0)
            }
        }
        (None, None) => 1.0,
    }
}

pub fn outcome_distribution(outcome: &OutcomeSpec, params: &OutcomeParams, theta: f64) -> OutcomeDistribution {
    match outcome.kind {
        OutcomeKind::Continuous => OutcomeDistribution::Normal {
            mean: params.a[0] + params.b * theta,
            sd: params.sigma_eps.expect("continuous outcome has a residual sd"),
        },
        OutcomeKind::Binary => OutcomeDistribution::Bernoulli { p: expit(params.a[0] + params.b * theta) },
        OutcomeKind::Ordinal => OutcomeDistribution::Categorical { probs: ordinal_probs(&params.a, params.b, theta) },
    }
}

/// Log density/mass of one observation; the hot path of every likelihood.
#[inline]
pub fn log_obs(kind: OutcomeKind, params: &OutcomeParams, theta: f64, y: f64) -> f64 {
    match kind {
        OutcomeKind::Continuous => {
            let sd = params.sigma_eps.unwrap_or(f64::NAN);
            let r = y - params.a[0] - params.b * theta;
            -0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * r * r / (sd * sd)
        }
        OutcomeKind::Binary => {
            let eta = params.a[0] + params.b * theta;
            y * eta - softplus(eta)
        }
        OutcomeKind::Ordinal => {
            let a = &params.a;
            let n = a.len() + 1;
            let l = y as usize;
            let bt = params.b * theta;
            if l == 1 {
                -softplus(-(a[0] - bt))
            } else if l == n {
                -softplus(a[n - 2] - bt)
            } else {
                ordinal_prob(a, params.b, theta, l).max(PROB_FLOOR).ln()
            }
        }
    }
}

/// Partial derivatives of [`log_obs`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObsGradient {
    pub d_theta: f64,
    pub d_b: f64,
    pub d_sigma: f64,
    /// `(threshold index, derivative)`; at most two thresholds are involved.
    pub d_a: [(usize, f64); 2],
}

pub fn log_obs_gradient(kind: OutcomeKind, params: &OutcomeParams, theta: f64, y: f64) -> ObsGradient {
    let mut g = ObsGradient::default();
    match kind {
        OutcomeKind::Continuous => {
            let sd = params.sigma_eps.unwrap_or(f64::NAN);
            let r = y - params.a[0] - params.b * theta;
            let d_mu = r / (sd * sd);
            g.d_a[0] = (0, d_mu);
            g.d_b = theta * d_mu;
            g.d_theta = params.b * d_mu;
            g.d_sigma = -1.0 / sd + r * r / (sd * sd * sd);
        }
        OutcomeKind::Binary => {
            let eta = params.a[0] + params.b * theta;
            let d_eta = y - expit(eta);
            g.d_a[0] = (0, d_eta);
            g.d_b = theta * d_eta;
            g.d_theta = params.b * d_eta;
        }
        OutcomeKind::Ordinal => {
            let a = &params.a;
            let n = a.len() + 1;
            let l = y as usize;
            let p = ordinal_prob(a, params.b, theta, l);
            if p < PROB_FLOOR {
                return g;
            }
            let bt = params.b * theta;
            // d log p / d x_hi and d log p / d x_lo with x = a - bθ
            let d_hi = if l < n { expit_deriv(a[l - 1] - bt) / p } else { 0.0 };
            let d_lo = if l > 1 { -expit_deriv(a[l - 2] - bt) / p } else { 0.0 };
            if l < n {
                g.d_a[0] = (l - 1, d_hi);
            }
            if l > 1 {
                g.d_a[1] = (l - 2, d_lo);
            }
            g.d_theta = -params.b * (d_hi + d_lo);
            g.d_b = -theta * (d_hi + d_lo);
        }
    }
    g
}
