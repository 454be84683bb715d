//! Data-generating process for simulation studies: a continuous outcome and
//! two seven-category ordinal outcomes driven by a linear latent trait, with
//! event times from a proportional-hazards model linked through the trait
//! value.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::data::{Dataset, SubjectRecord, Visit};
use crate::model::latent::LinearDesign;
use crate::model::outcome::ordinal_probs;
use crate::model::params::{OutcomeParams, ParameterDraw};
use crate::model::spec::{Association, DesignSpec, ModelSpec, OutcomeKind, OutcomeSpec, Term};
use crate::rng::{stream, tag};
use crate::survival::HazardContext;

/// Model used by the default scenario.
pub fn simulation_spec() -> ModelSpec {
    ModelSpec {
        outcomes: vec![
            OutcomeSpec::continuous("y1"),
            OutcomeSpec::ordinal("y2", 7, true),
            OutcomeSpec::ordinal("y3", 7, false),
        ],
        design: DesignSpec {
            fixed_effects: vec![Term::intercept(), Term::covariate("x1"), Term::time(), Term::covariate_by_time("x1")],
            random_effects: vec![Term::intercept(), Term::time()],
            survival_covariates: vec!["x2".into()],
            theta_knots: vec![],
            hazard_knots: None,
        },
        association: Association::Value,
    }
}

/// Generating values of the default scenario.
pub fn true_parameters() -> ParameterDraw {
    ParameterDraw {
        outcomes: vec![
            OutcomeParams { a: vec![15.0], b: 7.0, sigma_eps: Some(5.0) },
            OutcomeParams { a: vec![0.0, 1.0, 2.0, 4.0, 5.0, 6.0], b: 1.0, sigma_eps: None },
            OutcomeParams { a: vec![-1.0, 1.0, 3.0, 4.0, 6.0, 8.0], b: 1.2, sigma_eps: None },
        ],
        beta: vec![-1.0, -0.2, 0.8, -0.2],
        sigma_u: vec![1.5, 0.15],
        rho_u: vec![0.4],
        zeta: vec![],
        sigma_zeta: 1.0,
        gamma: vec![-0.12],
        assoc: vec![0.75],
        eta0: 0.1f64.ln(),
        eta1: 0.0,
        xi: vec![],
        sigma_xi: 1.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub visit_times: Vec<f64>,
    pub spec: ModelSpec,
    pub truth: ParameterDraw,
    /// Probability that the binary covariate `x1` is 1.
    pub x1_prob: f64,
    /// Inclusive integer range of `x2`.
    pub x2_range: (i64, i64),
    /// Independent censoring times are uniform on this interval.
    pub censoring: (f64, f64),
    /// End of follow-up, applied after the censoring draw.
    pub admin_cap: f64,
    /// Landmark/horizon pairs at which true conditional risks are reported.
    pub risk_pairs: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            visit_times: vec![0.0, 3.0, 6.0, 12.0, 18.0, 24.0],
            spec: simulation_spec(),
            truth: true_parameters(),
            x1_prob: 0.5,
            x2_range: (30, 80),
            censoring: (10.0, 24.0),
            admin_cap: 24.0,
            risk_pairs: vec![(3.0, 12.0), (6.0, 12.0)],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.visit_times.windows(2).any(|w| !(w[0] < w[1])) || self.visit_times.iter().any(|t| *t < 0.0) {
            return config("visit grid must be nonnegative and strictly increasing");
        }
        let covs = self.spec.design.covariate_names();
        if covs.iter().any(|c| c != "x1" && c != "x2") {
            return config("the simulation design may only use covariates x1 and x2");
        }
        let eps = self.truth.outcomes.iter().filter_map(|p| p.sigma_eps);
        if self.truth.sigma_u.iter().copied().chain(eps).any(|s| !(s >= 0.0)) {
            return config("simulation scales must be nonnegative");
        }
        // zero scales are allowed for degenerate scenarios, so the remaining
        // constraints are checked on a copy with unit scales
        let mut check = self.truth.clone();
        check.sigma_u.iter_mut().for_each(|s| *s = 1.0);
        for p in &mut check.outcomes {
            if let Some(s) = p.sigma_eps.as_mut() {
                *s = 1.0;
            }
        }
        check.validate(&self.spec)?;
        let (lo, hi) = self.censoring;
        if !(lo >= 0.0 && lo <= hi && self.admin_cap > 0.0) {
            return config("invalid censoring interval or follow-up cap");
        }
        if !(0.0..=1.0).contains(&self.x1_prob) || self.x2_range.0 > self.x2_range.1 {
            return config("invalid covariate distribution");
        }
        Ok(())
    }
}

/// Event time solving `∫₀ᵀ exp(c + dslope·s) ds = e`; `+∞` when the total
/// hazard stays below `e`.
pub fn inverse_survival_sample(c: f64, dslope: f64, e: f64) -> f64 {
    let scaled = e * (-c).exp();
    if dslope.abs() < 1e-12 {
        return scaled;
    }
    let arg = dslope * scaled;
    if arg <= -1.0 {
        f64::INFINITY
    } else {
        arg.ln_1p() / dslope
    }
}

/// Lower-triangular factor of a positive semi-definite matrix (row-major).
fn psd_factor(cov: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let q = cov.nrows();
    let mut l = vec![0.0; q * q];
    for j in 0..q {
        let d = cov[(j, j)] - (0..j).map(|k| l[j * q + k] * l[j * q + k]).sum::<f64>();
        let ljj = d.max(0.0).sqrt();
        l[j * q + j] = ljj;
        for i in j + 1..q {
            let v = cov[(i, j)] - (0..j).map(|k| l[i * q + k] * l[j * q + k]).sum::<f64>();
            l[i * q + j] = if ljj > 0.0 { v / ljj } else { 0.0 };
        }
    }
    l
}

/// Risk of an event in `(t, t']` given survival to `t`, under known
/// parameters and random effects.
pub fn conditional_risk(
    spec: &ModelSpec,
    draw: &ParameterDraw,
    subject: &SubjectRecord,
    u: &[f64],
    t: f64,
    t_prime: f64,
) -> Result<f64> {
    let lin = LinearDesign::new(&spec.design, subject)?;
    let ctx = HazardContext::new(spec, &lin, draw, u)?;
    if t_prime <= t {
        return Ok(0.0);
    }
    Ok(-(-ctx.cumulative_between(t, t_prime)?).exp_m1())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTruth {
    pub landmark: f64,
    pub horizon: f64,
    /// `None` when the subject is no longer at risk at the landmark.
    pub risk: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub u: Vec<f64>,
    /// Latent event time; `None` when the total hazard is finite and never reached.
    pub event_time: Option<f64>,
    pub censoring_time: f64,
    pub risks: Vec<RiskTruth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: SimScenario,
    /// Outcome collection stops at the observed time: visits after an event
    /// or censoring are dropped.
    pub visits_truncated_at_observed_time: bool,
    pub subjects: Vec<SubjectTruth>,
}

fn event_time(ctx: &HazardContext, e: f64) -> Result<f64> {
    let last_knot = ctx.theta_knots.iter().chain(ctx.hazard_knots).copied().fold(0.0, f64::max);
    let mut remaining = e;
    for seg in ctx.segments_between(0.0, last_knot + 1.0) {
        let is_last = seg.t_hi > last_knot;
        let c = seg.intercept + seg.slope * seg.t_lo;
        if !is_last {
            let h = seg.integral()?;
            if remaining > h {
                remaining -= h;
                continue;
            }
        }
        return Ok(seg.t_lo + inverse_survival_sample(c, seg.slope, remaining));
    }
    unreachable!("segments always end past the last knot")
}

pub fn generate_dataset(scenario: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    scenario.validate()?;
    let spec = &scenario.spec;
    let truth = &scenario.truth;
    let factor = psd_factor(&truth.covariance());
    let q = spec.design.n_random();
    let width = scenario.n.to_string().len().max(4);
    let mut subjects = Vec::with_capacity(scenario.n);
    let mut truths = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let mut rng = stream(scenario.seed, tag::SIM_SUBJECT, i as u64);
        let x1 = if rng.random::<f64>() < scenario.x1_prob { 1.0 } else { 0.0 };
        let x2 = rng.random_range(scenario.x2_range.0..=scenario.x2_range.1) as f64;
        let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u: Vec<f64> = (0..q).map(|r| (0..=r).map(|c| factor[r * q + c] * z[c]).sum()).collect();
        let e: f64 = Exp1.sample(&mut rng);
        let (lo, hi) = scenario.censoring;
        let censor = lo + (hi - lo) * rng.random::<f64>();

        let mut subject = SubjectRecord {
            id: format!("S{:0width$}", i + 1),
            covariates: BTreeMap::from([("x1".to_string(), x1), ("x2".to_string(), x2)]),
            visits: vec![],
            observed_time: 0.0,
            event: false,
        };
        let lin = LinearDesign::new(&spec.design, &subject)?;
        let ctx = HazardContext::new(spec, &lin, truth, &u)?;
        let t_event = event_time(&ctx, e)?;
        let follow_up = censor.min(scenario.admin_cap);
        subject.event = t_event <= follow_up;
        subject.observed_time = t_event.min(follow_up);

        let (c0, c1) = lin.theta_line(&truth.beta, &u);
        for &t in scenario.visit_times.iter().filter(|t| **t <= subject.observed_time) {
            let theta = crate::model::latent::latent_at(c0, c1, t, &spec.design.theta_knots, &truth.zeta).theta;
            let values = spec
                .outcomes
                .iter()
                .zip(&truth.outcomes)
                .map(|(o, p)| {
                    let draw = match o.kind {
                        OutcomeKind::Continuous => {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            p.a[0] + p.b * theta + p.sigma_eps.unwrap_or(0.0) * eps
                        }
                        OutcomeKind::Binary => {
                            let pr = crate::model::outcome::expit(p.a[0] + p.b * theta);
                            f64::from(u8::from(rng.random::<f64>() < pr))
                        }
                        OutcomeKind::Ordinal => {
                            let probs = ordinal_probs(&p.a, p.b, theta);
                            let r: f64 = rng.random();
                            let mut acc = 0.0;
                            let mut cat = probs.len();
                            for (l, pl) in probs.iter().enumerate() {
                                acc += pl;
                                if r < acc {
                                    cat = l + 1;
                                    break;
                                }
                            }
                            cat as f64
                        }
                    };
                    Some(draw)
                })
                .collect();
            subject.visits.push(Visit { time: t, values });
        }

        let risks = scenario
            .risk_pairs
            .iter()
            .map(|&(landmark, horizon)| {
                let risk = if subject.observed_time > landmark {
                    Some(-(-ctx.cumulative_between(landmark, horizon)?).exp_m1())
                } else {
                    None
                };
                Ok(RiskTruth { landmark, horizon, risk })
            })
            .collect::<Result<_>>()?;
        truths.push(SubjectTruth {
            id: subject.id.clone(),
            u,
            event_time: t_event.is_finite().then_some(t_event),
            censoring_time: censor,
            risks,
        });
        subjects.push(subject);
    }
    let truth = GroundTruth { scenario: scenario.clone(), visits_truncated_at_observed_time: true, subjects: truths };
    Ok((Dataset::new(subjects), truth))
}
