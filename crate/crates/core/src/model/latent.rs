use crate::error::Result;
use crate::model::data::SubjectRecord;
use crate::model::params::{LatentState, ParameterDraw, SubjectEffects};
use crate::model::spec::{DesignSpec, Term};
use crate::model::spline::{hinge_slope, hinge_sum};

/// A subject's design rows split into constant and time-proportional parts,
/// so that `X(t) = x0 + x1·t` and `Z(t) = z0 + z1·t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDesign {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub w: Vec<f64>,
}

fn split_terms(terms: &[Term], subject: &SubjectRecord) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut c = Vec::with_capacity(terms.len());
    let mut s = Vec::with_capacity(terms.len());
    for t in terms {
        let m = t.multiplier(&subject.covariates, &subject.id)?;
        if t.time {
            c.push(0.0);
            s.push(m);
        } else {
            c.push(m);
            s.push(0.0);
        }
    }
    Ok((c, s))
}

impl LinearDesign {
    pub fn new(design: &DesignSpec, subject: &SubjectRecord) -> Result<Self> {
        let (x0, x1) = split_terms(&design.fixed_effects, subject)?;
        let (z0, z1) = split_terms(&design.random_effects, subject)?;
        let w = design
            .survival_covariates
            .iter()
            .map(|name| Term::covariate(name).multiplier(&subject.covariates, &subject.id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { x0, x1, z0, z1, w })
    }

    /// Intercept and slope of the parametric part `X(t)β + Z(t)u`.
    #[inline]
    pub fn theta_line(&self, beta: &[f64], u: &[f64]) -> (f64, f64) {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        (dot(&self.x0, beta) + dot(&self.z0, u), dot(&self.x1, beta) + dot(&self.z1, u))
    }

    #[inline]
    pub fn w_gamma(&self, gamma: &[f64]) -> f64 {
        self.w.iter().zip(gamma).map(|(x, g)| x * g).sum()
    }
}

/// Latent trait `θ(t) = X(t)β + Z(t)u + Σ ζ_r (t-κ_r)+` and its derivative.
pub fn latent_trait(
    subject: &SubjectRecord,
    t: f64,
    draw: &ParameterDraw,
    effects: &SubjectEffects,
    design: &DesignSpec,
) -> Result<LatentState> {
    let lin = LinearDesign::new(design, subject)?;
    let (c0, c1) = lin.theta_line(&draw.beta, &effects.u);
    Ok(latent_at(c0, c1, t, &design.theta_knots, &draw.zeta))
}

#[inline]
pub(crate) fn latent_at(c0: f64, c1: f64, t: f64, knots: &[f64], zeta: &[f64]) -> LatentState {
    LatentState {
        theta: c0 + c1 * t + hinge_sum(t, knots, zeta),
        theta_prime: c1 + hinge_slope(t, knots, zeta),
    }
}
