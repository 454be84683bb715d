//! Dynamic prediction for a new subject: posterior draws of the subject's
//! random effects given their history up to a landmark time, predicted outcome
//! trajectories and the conditional event risk `P(T ≤ t' | T > t, history)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::archive::PosteriorArchive;
use crate::inference::posterior::EffectsDensity;
use crate::model::data::{check_value, SubjectRecord, Visit};
use crate::model::latent::{latent_at, LinearDesign};
use crate::model::longitudinal::{loglik_given_thetas, PreparedSubject};
use crate::model::outcome::{outcome_distribution, OutcomeDistribution};
use crate::model::params::{ParameterDraw, SubjectEffects};
use crate::model::spec::{ModelSpec, OutcomeKind};
use crate::rng::{stream, tag};
use crate::stats::quantile_sorted;
use crate::survival::HazardContext;

fn default_iterations() -> usize {
    50
}

fn default_seed() -> u64 {
    1
}

/// Outcome values at one visit, keyed by outcome name; absent names are missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitInput {
    pub time: f64,
    #[serde(default)]
    pub outcomes: BTreeMap<String, f64>,
}

/// A new subject's history and what to predict for them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
    #[serde(default)]
    pub visits: Vec<VisitInput>,
    /// The subject is known to be event-free at this time.
    pub landmark: f64,
    /// Risk horizons, strictly increasing and not before the landmark.
    pub horizons: Vec<f64>,
    /// Times at which to summarize outcome trajectories; defaults to the horizons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_times: Option<Vec<f64>>,
    /// Number of archive draws to use; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_draws: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Metropolis iterations per archive draw when sampling the random effects.
    #[serde(default = "default_iterations")]
    pub mh_iterations: usize,
}

/// A request validation failure tied to the offending field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

fn join(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; ")
}

impl PredictionRequest {
    pub fn new(covariates: BTreeMap<String, f64>, visits: Vec<VisitInput>, landmark: f64, horizons: Vec<f64>) -> Self {
        Self {
            id: None,
            covariates,
            visits,
            landmark,
            horizons,
            trajectory_times: None,
            n_draws: None,
            seed: default_seed(),
            mh_iterations: default_iterations(),
        }
    }

    /// Every invariant violation, each naming its field. Missing covariates
    /// are reported under `covariates.<name>`.
    pub fn check(&self, spec: &ModelSpec) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if !(self.landmark.is_finite() && self.landmark >= 0.0) {
            errs.push(FieldError::new("landmark", "must be a finite time >= 0"));
        }
        if self.horizons.is_empty() {
            errs.push(FieldError::new("horizons", "at least one horizon is required"));
        }
        for (j, h) in self.horizons.iter().enumerate() {
            if !h.is_finite() || *h < self.landmark {
                errs.push(FieldError::new(format!("horizons[{j}]"), format!("{h} is before the landmark")));
            } else if j > 0 && *h <= self.horizons[j - 1] {
                errs.push(FieldError::new(format!("horizons[{j}]"), "horizons must be strictly increasing"));
            }
        }
        if let Some(times) = &self.trajectory_times {
            for (j, t) in times.iter().enumerate() {
                if !(t.is_finite() && *t >= 0.0) {
                    errs.push(FieldError::new(format!("trajectory_times[{j}]"), "must be a finite time >= 0"));
                }
            }
        }
        if self.n_draws == Some(0) {
            errs.push(FieldError::new("n_draws", "must be positive"));
        }
        for name in spec.design.covariate_names() {
            match self.covariates.get(&name) {
                Some(v) if v.is_finite() => {}
                Some(_) => errs.push(FieldError::new(format!("covariates.{name}"), "must be finite")),
                None => errs.push(FieldError::new(format!("covariates.{name}"), "required by the model")),
            }
        }
        for (j, v) in self.visits.iter().enumerate() {
            let field = format!("visits[{j}]");
            if !(v.time.is_finite() && v.time >= 0.0) {
                errs.push(FieldError::new(format!("{field}.time"), "must be a finite time >= 0"));
            } else if v.time > self.landmark {
                errs.push(FieldError::new(
                    format!("{field}.time"),
                    format!("visit at {} is after the landmark {}", v.time, self.landmark),
                ));
            }
            if j > 0 && v.time <= self.visits[j - 1].time {
                errs.push(FieldError::new(format!("{field}.time"), "visit times must be strictly increasing"));
            }
            for (name, value) in &v.outcomes {
                match spec.outcome_index(name) {
                    None => errs.push(FieldError::new(format!("{field}.outcomes.{name}"), "unknown outcome")),
                    Some(k) => {
                        if let Err(m) = check_value(&spec.outcomes[k], *value) {
                            errs.push(FieldError::new(format!("{field}.outcomes.{name}"), m));
                        }
                    }
                }
            }
        }
        errs
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let errs = self.check(spec);
        if errs.is_empty() {
            Ok(())
        } else if errs.iter().all(|e| e.field.starts_with("covariates.")) {
            Err(Error::Config(format!("request does not match the model: {}", join(&errs))))
        } else {
            Err(Error::Data(join(&errs)))
        }
    }

    /// The history as a record censored at the landmark.
    pub fn to_record(&self, spec: &ModelSpec) -> SubjectRecord {
        SubjectRecord {
            id: self.id.clone().unwrap_or_else(|| "new".into()),
            covariates: self.covariates.clone(),
            visits: self
                .visits
                .iter()
                .map(|v| Visit {
                    time: v.time,
                    values: spec.outcomes.iter().map(|o| v.outcomes.get(&o.name).copied()).collect(),
                })
                .collect(),
            observed_time: self.landmark,
            event: false,
        }
    }

    fn trajectory_times(&self) -> &[f64] {
        self.trajectory_times.as_deref().unwrap_or(&self.horizons)
    }
}

/// Indices of the archive draws to use: all of them, or `n` evenly spaced.
pub fn select_draws(len: usize, n: Option<usize>) -> Vec<usize> {
    match n {
        Some(n) if n < len => (0..n).map(|k| k * len / n).collect(),
        _ => (0..len).collect(),
    }
}

/// One random-effect draw per selected archive draw.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectsSample {
    pub draw_indices: Vec<usize>,
    pub effects: Vec<SubjectEffects>,
}

/// `log p(y | u) - H(landmark | u) + log N(u; 0, Σ)`, the unnormalized
/// posterior of a new subject's effects; `-∞` when the hazard overflows.
fn effects_log_target(
    spec: &ModelSpec,
    prepared: &PreparedSubject,
    kinds: &[OutcomeKind],
    draw: &ParameterDraw,
    re: &EffectsDensity,
    u: &[f64],
    landmark: f64,
    thetas: &mut Vec<f64>,
) -> f64 {
    prepared.visit_thetas(&draw.beta, u, &draw.zeta, thetas);
    let mut lp = loglik_given_thetas(&prepared.obs, kinds, &draw.outcomes, thetas) + re.log_pdf(u);
    if landmark > 0.0 {
        let h = HazardContext::new(spec, &prepared.lin, draw, u).and_then(|c| c.cumulative_between(0.0, landmark));
        match h {
            Ok(h) => lp -= h,
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// For every selected archive draw, runs a short random-walk Metropolis chain
/// on the subject's random effects started at zero, with proposal covariance
/// `(2.38²/q)Σ`, and keeps its final state.
pub fn sample_subject_effects(request: &PredictionRequest, archive: &PosteriorArchive) -> Result<EffectsSample> {
    let spec = &archive.spec;
    request.validate(spec)?;
    if archive.is_empty() {
        return Err(Error::Config("archive holds no draws".into()));
    }
    let prepared = PreparedSubject::new(&request.to_record(spec), spec)?;
    let kinds: Vec<OutcomeKind> = spec.outcomes.iter().map(|o| o.kind).collect();
    let q = spec.design.n_random();
    let draw_indices = select_draws(archive.len(), request.n_draws);
    let scale = 2.38 / (q.max(1) as f64).sqrt();

    let effects = draw_indices
        .par_iter()
        .map(|&m| -> Result<SubjectEffects> {
            let draw = &archive.draws[m];
            if q == 0 {
                return Ok(SubjectEffects::default());
            }
            let cov: DMatrix<f64> = draw.covariance();
            let (Some(re), Some(chol)) = (EffectsDensity::new(draw), cov.cholesky()) else {
                return Err(Error::Archive(format!("draw {m} has a covariance that is not positive definite")));
            };
            let l = chol.l();
            let mut rng = stream(request.seed, tag::SUBJECT_EFFECTS, m as u64);
            let mut thetas = Vec::new();
            let mut u = vec![0.0; q];
            let mut cur = effects_log_target(spec, &prepared, &kinds, draw, &re, &u, request.landmark, &mut thetas);
            let mut prop = vec![0.0; q];
            for _ in 0..request.mh_iterations {
                let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
                for i in 0..q {
                    prop[i] = u[i] + scale * (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
                }
                let new = effects_log_target(spec, &prepared, &kinds, draw, &re, &prop, request.landmark, &mut thetas);
                let log_u: f64 = rng.random::<f64>().ln();
                if new > f64::NEG_INFINITY && (cur == f64::NEG_INFINITY || log_u < new - cur) {
                    u.copy_from_slice(&prop);
                    cur = new;
                }
            }
            Ok(SubjectEffects { u })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EffectsSample { draw_indices, effects })
}

/// Mean, median and central 95% interval of a set of draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    pub fn from_draws(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile_sorted(&v, 0.5),
            lower: quantile_sorted(&v, 0.025),
            upper: quantile_sorted(&v, 0.975),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    /// The time precedes the last recorded visit.
    pub retrodiction: bool,
    /// Continuous: predictive draws including residual noise. Binary: the
    /// probability of a 1. Ordinal: the expected category.
    pub value: Band,
    /// Ordinal only: per-category probabilities, categories `1..=n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<Band>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTrajectory {
    pub outcome: String,
    pub kind: OutcomeKind,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub time: f64,
    pub band: Band,
}

/// Predicted outcome and latent-trait trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBand {
    pub latent: Vec<LatentPoint>,
    pub outcomes: Vec<OutcomeTrajectory>,
}

pub fn predict_trajectory(
    request: &PredictionRequest,
    archive: &PosteriorArchive,
    sample: &EffectsSample,
) -> Result<TrajectoryBand> {
    let spec = &archive.spec;
    request.validate(spec)?;
    let lin = LinearDesign::new(&spec.design, &request.to_record(spec))?;
    let times = request.trajectory_times();
    let last_visit = request.visits.last().map(|v| v.time);

    // per draw: [time][outcome] -> (value, category probabilities)
    type DrawRow = (Vec<f64>, Vec<Vec<(f64, Vec<f64>)>>);
    let rows: Vec<DrawRow> = sample
        .draw_indices
        .par_iter()
        .zip(&sample.effects)
        .map(|(&m, e)| {
            let draw = &archive.draws[m];
            let mut rng = stream(request.seed, tag::TRAJECTORY_NOISE, m as u64);
            let (c0, c1) = lin.theta_line(&draw.beta, &e.u);
            let mut latent = Vec::with_capacity(times.len());
            let mut per_time = Vec::with_capacity(times.len());
            for &t in times {
                let theta = latent_at(c0, c1, t, &spec.design.theta_knots, &draw.zeta).theta;
                latent.push(theta);
                let mut cells = Vec::with_capacity(spec.outcomes.len());
                for (o, p) in spec.outcomes.iter().zip(&draw.outcomes) {
                    let dist = outcome_distribution(o, p, theta);
                    cells.push(match dist {
                        OutcomeDistribution::Normal { mean, sd } => {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (mean + sd * z, Vec::new())
                        }
                        OutcomeDistribution::Bernoulli { p } => (p, Vec::new()),
                        OutcomeDistribution::Categorical { ref probs } => (dist.mean(), probs.clone()),
                    });
                }
                per_time.push(cells);
            }
            (latent, per_time)
        })
        .collect();

    let latent = times
        .iter()
        .enumerate()
        .map(|(j, &t)| LatentPoint { time: t, band: Band::from_draws(&rows.iter().map(|r| r.0[j]).collect::<Vec<_>>()) })
        .collect();
    let outcomes = spec
        .outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| OutcomeTrajectory {
            outcome: o.name.clone(),
            kind: o.kind,
            points: times
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    let values: Vec<f64> = rows.iter().map(|r| r.1[j][k].0).collect();
                    let categories = (o.kind == OutcomeKind::Ordinal).then(|| {
                        (0..o.n_categories.unwrap_or(0))
                            .map(|l| Band::from_draws(&rows.iter().map(|r| r.1[j][k].1[l]).collect::<Vec<_>>()))
                            .collect()
                    });
                    TrajectoryPoint {
                        time: t,
                        retrodiction: last_visit.is_some_and(|lv| t < lv),
                        value: Band::from_draws(&values),
                        categories,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(TrajectoryBand { latent, outcomes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub horizon: f64,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Conditional event probabilities per horizon, with the per-draw values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub points: Vec<RiskPoint>,
    /// Draws whose hazard overflowed and were left out of the summaries.
    pub skipped_draws: usize,
    pub used_draws: usize,
    #[serde(skip)]
    pub per_draw: Vec<Vec<f64>>,
}

/// Per-draw conditional risk `1 - exp(-∫_t^{t'} h)` at every horizon;
/// accumulated piece by piece so each draw's curve is nondecreasing.
pub fn draw_risks(
    spec: &ModelSpec,
    lin: &LinearDesign,
    draw: &ParameterDraw,
    u: &[f64],
    landmark: f64,
    horizons: &[f64],
) -> Result<Vec<f64>> {
    let ctx = HazardContext::new(spec, lin, draw, u)?;
    let mut from = landmark;
    let mut h = 0.0;
    let mut out = Vec::with_capacity(horizons.len());
    for &t in horizons {
        h += ctx.cumulative_between(from, t)?;
        from = t;
        out.push(-(-h).exp_m1());
    }
    Ok(out)
}

pub fn predict_risk(request: &PredictionRequest, archive: &PosteriorArchive, sample: &EffectsSample) -> Result<RiskCurve> {
    let spec = &archive.spec;
    request.validate(spec)?;
    let lin = LinearDesign::new(&spec.design, &request.to_record(spec))?;
    let per: Vec<Option<Vec<f64>>> = sample
        .draw_indices
        .par_iter()
        .zip(&sample.effects)
        .map(|(&m, e)| match draw_risks(spec, &lin, &archive.draws[m], &e.u, request.landmark, &request.horizons) {
            Ok(r) => Ok(Some(r)),
            Err(Error::HazardOverflow(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let skipped_draws = per.iter().filter(|r| r.is_none()).count();
    let per_draw: Vec<Vec<f64>> = per.into_iter().flatten().collect();
    if per_draw.is_empty() {
        return Err(Error::Data("every draw overflowed the cumulative hazard".into()));
    }
    let points = request
        .horizons
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            let b = Band::from_draws(&per_draw.iter().map(|r| r[j]).collect::<Vec<_>>());
            RiskPoint { horizon: h, mean: b.mean, median: b.median, lower: b.lower, upper: b.upper }
        })
        .collect();
    Ok(RiskCurve { points, skipped_draws, used_draws: per_draw.len(), per_draw })
}

/// Everything the `predict` command and endpoint return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub landmark: f64,
    pub seed: u64,
    pub n_draws: usize,
    pub skipped_draw_fraction: f64,
    pub warnings: Vec<String>,
    pub risk_curve: Vec<RiskPoint>,
    pub trajectories: TrajectoryBand,
}

pub fn predict(request: &PredictionRequest, archive: &PosteriorArchive) -> Result<Prediction> {
    let sample = sample_subject_effects(request, archive)?;
    let risk = predict_risk(request, archive, &sample)?;
    let trajectories = predict_trajectory(request, archive, &sample)?;
    let n = sample.draw_indices.len();
    let skipped = risk.skipped_draws as f64 / n as f64;
    let mut warnings = Vec::new();
    if skipped > 0.01 {
        warnings.push(format!("{} of {n} draws overflowed the cumulative hazard and were skipped", risk.skipped_draws));
    }
    Ok(Prediction {
        landmark: request.landmark,
        seed: request.seed,
        n_draws: n,
        skipped_draw_fraction: skipped,
        warnings,
        risk_curve: risk.points,
        trajectories,
    })
}
