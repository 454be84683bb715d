use crate::error::Result;
use crate::model::data::SubjectRecord;
use crate::model::latent::LinearDesign;
use crate::model::outcome::log_obs;
use crate::model::params::{OutcomeParams, ParameterDraw, SubjectEffects};
use crate::model::spec::{ModelSpec, OutcomeKind};
use crate::model::spline::hinge;

/// One non-missing outcome value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub visit: usize,
    pub outcome: usize,
    pub value: f64,
}

/// A subject with design rows and spline rows evaluated once, for repeated
/// likelihood evaluation inside samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSubject {
    pub lin: LinearDesign,
    pub visit_times: Vec<f64>,
    /// `(t_j - κ_r)+` for every visit `j` and trait knot `r`.
    pub visit_hinges: Vec<Vec<f64>>,
    pub obs: Vec<Observation>,
    pub observed_time: f64,
    pub event: bool,
}

impl PreparedSubject {
    pub fn new(subject: &SubjectRecord, spec: &ModelSpec) -> Result<Self> {
        let lin = LinearDesign::new(&spec.design, subject)?;
        let knots = &spec.design.theta_knots;
        let visit_times: Vec<f64> = subject.visits.iter().map(|v| v.time).collect();
        let visit_hinges = visit_times.iter().map(|&t| knots.iter().map(|&k| hinge(t, k)).collect()).collect();
        let obs = subject
            .visits
            .iter()
            .enumerate()
            .flat_map(|(j, v)| {
                v.values
                    .iter()
                    .enumerate()
                    .filter_map(move |(k, y)| y.map(|value| Observation { visit: j, outcome: k, value }))
            })
            .collect();
        Ok(Self { lin, visit_times, visit_hinges, obs, observed_time: subject.observed_time, event: subject.event })
    }

    /// Latent trait at every visit.
    pub fn visit_thetas(&self, beta: &[f64], u: &[f64], zeta: &[f64], out: &mut Vec<f64>) {
        let (c0, c1) = self.lin.theta_line(beta, u);
        out.clear();
        out.extend(self.visit_times.iter().zip(&self.visit_hinges).map(|(&t, h)| {
            c0 + c1 * t + h.iter().zip(zeta).map(|(a, b)| a * b).sum::<f64>()
        }));
    }
}

/// Sum of observation log-likelihoods given the trait at each visit.
pub(crate) fn loglik_given_thetas(
    obs: &[Observation],
    kinds: &[OutcomeKind],
    params: &[OutcomeParams],
    thetas: &[f64],
) -> f64 {
    obs.iter()
        .map(|o| log_obs(kinds[o.outcome], &params[o.outcome], thetas[o.visit], o.value))
        .sum()
}

/// Log-likelihood of a subject's recorded outcomes; missing values are skipped.
pub fn longitudinal_loglik(
    subject: &SubjectRecord,
    draw: &ParameterDraw,
    effects: &SubjectEffects,
    spec: &ModelSpec,
) -> Result<f64> {
    let prepared = PreparedSubject::new(subject, spec)?;
    let mut thetas = Vec::new();
    prepared.visit_thetas(&draw.beta, &effects.u, &draw.zeta, &mut thetas);
    let kinds: Vec<OutcomeKind> = spec.outcomes.iter().map(|o| o.kind).collect();
    Ok(loglik_given_thetas(&prepared.obs, &kinds, &draw.outcomes, &thetas))
}
