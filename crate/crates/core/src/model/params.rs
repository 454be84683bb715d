use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::spec::{Association, ModelSpec, OutcomeKind};

/// Measurement-model parameters of one outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    /// Intercept (continuous, binary) or ordered thresholds (ordinal).
    pub a: Vec<f64>,
    /// Positive loading on the latent trait.
    pub b: f64,
    /// Residual standard deviation, continuous outcomes only.
    pub sigma_eps: Option<f64>,
}

/// One joint draw of every population-level parameter.
///
/// When the design has no knots, `zeta`/`xi` are empty and the matching
/// smoothing scale is carried as 1.0 without being sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub outcomes: Vec<OutcomeParams>,
    pub beta: Vec<f64>,
    /// Random-effect standard deviations.
    pub sigma_u: Vec<f64>,
    /// Random-effect correlations, strict lower triangle in row order.
    pub rho_u: Vec<f64>,
    pub zeta: Vec<f64>,
    pub sigma_zeta: f64,
    pub gamma: Vec<f64>,
    /// `ν` (value), `(ν₁, ν₂)` (value and slope) or one entry per random effect.
    pub assoc: Vec<f64>,
    pub eta0: f64,
    pub eta1: f64,
    pub xi: Vec<f64>,
    pub sigma_xi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectEffects {
    pub u: Vec<f64>,
}

impl SubjectEffects {
    pub fn zeros(q: usize) -> Self {
        Self { u: vec![0.0; q] }
    }
}

/// Latent trait and its time derivative at one time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentState {
    pub theta: f64,
    pub theta_prime: f64,
}

#[inline]
pub(crate) fn corr_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

impl ParameterDraw {
    /// Starting point: locations 0, loadings 1, scales 1, thresholds 0,1,2,…
    pub fn initial(spec: &ModelSpec) -> Self {
        let q = spec.design.n_random();
        let outcomes = spec
            .outcomes
            .iter()
            .map(|o| OutcomeParams {
                a: (0..o.n_thresholds()).map(|l| l as f64).collect(),
                b: 1.0,
                sigma_eps: (o.kind == OutcomeKind::Continuous).then_some(1.0),
            })
            .collect();
        Self {
            outcomes,
            beta: vec![0.0; spec.design.n_fixed()],
            sigma_u: vec![1.0; q],
            rho_u: vec![0.0; q * q.saturating_sub(1) / 2],
            zeta: vec![0.0; spec.design.theta_knots.len()],
            sigma_zeta: 1.0,
            gamma: vec![0.0; spec.design.survival_covariates.len()],
            assoc: vec![0.0; spec.assoc_dim()],
            eta0: 0.0,
            eta1: 0.0,
            xi: vec![0.0; spec.design.hazard_knots().len()],
            sigma_xi: 1.0,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let q = self.sigma_u.len();
        DMatrix::from_fn(q, q, |i, j| {
            let r = match i.cmp(&j) {
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => self.rho_u[corr_index(i, j)],
                std::cmp::Ordering::Less => self.rho_u[corr_index(j, i)],
            };
            r * self.sigma_u[i.max(j)] * self.sigma_u[i.min(j)]
        })
    }

    /// Checks dimensions and every parameter constraint.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let q = spec.design.n_random();
        let dims = [
            ("outcomes", self.outcomes.len(), spec.outcomes.len()),
            ("beta", self.beta.len(), spec.design.n_fixed()),
            ("sigma_u", self.sigma_u.len(), q),
            ("rho_u", self.rho_u.len(), q * q.saturating_sub(1) / 2),
            ("zeta", self.zeta.len(), spec.design.theta_knots.len()),
            ("gamma", self.gamma.len(), spec.design.survival_covariates.len()),
            ("assoc", self.assoc.len(), spec.assoc_dim()),
            ("xi", self.xi.len(), spec.design.hazard_knots().len()),
        ];
        for (name, got, want) in dims {
            if got != want {
                return config(format!("parameter `{name}` has length {got}, model needs {want}"));
            }
        }
        for (o, p) in spec.outcomes.iter().zip(&self.outcomes) {
            if p.a.len() != o.n_thresholds() {
                return config(format!("outcome `{}` needs {} intercepts/thresholds", o.name, o.n_thresholds()));
            }
            if p.a.windows(2).any(|w| !(w[0] < w[1])) {
                return config(format!("thresholds of `{}` are not strictly increasing", o.name));
            }
            if !(p.b > 0.0 && p.b.is_finite()) {
                return config(format!("loading of `{}` must be positive", o.name));
            }
            if o.is_anchor && (p.a[0] != 0.0 || p.b != 1.0) {
                return config(format!("anchor `{}` must have a_1 = 0 and b = 1", o.name));
            }
            match (o.kind, p.sigma_eps) {
                (OutcomeKind::Continuous, Some(s)) if s > 0.0 && s.is_finite() => {}
                (OutcomeKind::Continuous, _) => {
                    return config(format!("continuous `{}` needs a positive residual sd", o.name))
                }
                (_, None) => {}
                (_, Some(_)) => return config(format!("`{}` is not continuous but has a residual sd", o.name)),
            }
        }
        let scales = self.sigma_u.iter().chain([&self.sigma_zeta, &self.sigma_xi]);
        if scales.into_iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return config("scale parameters must be positive and finite");
        }
        if self.rho_u.iter().any(|r| !(r.abs() < 1.0)) {
            return config("correlations must lie in (-1, 1)");
        }
        if q > 0 && self.covariance().cholesky().is_none() {
            return config("random-effect covariance is not positive definite");
        }
        let all_finite = self
            .beta
            .iter()
            .chain(&self.zeta)
            .chain(&self.gamma)
            .chain(&self.assoc)
            .chain(&self.xi)
            .chain([&self.eta0, &self.eta1])
            .chain(self.outcomes.iter().flat_map(|o| o.a.iter()))
            .all(|x| x.is_finite());
        if !all_finite {
            return config("parameters must be finite");
        }
        Ok(())
    }

    /// Column names of the flat encoding used by archives and summaries.
    pub fn column_names(spec: &ModelSpec) -> Vec<String> {
        let mut names = Vec::new();
        for o in &spec.outcomes {
            if o.kind == OutcomeKind::Ordinal {
                for l in 1..=o.n_thresholds() {
                    names.push(format!("a[{}][{l}]", o.name));
                }
            } else {
                names.push(format!("a[{}]", o.name));
            }
            names.push(format!("b[{}]", o.name));
            if o.kind == OutcomeKind::Continuous {
                names.push(format!("sigma_eps[{}]", o.name));
            }
        }
        let d = &spec.design;
        names.extend(d.fixed_effects.iter().map(|t| format!("beta[{}]", t.label())));
        names.extend(d.random_effects.iter().map(|t| format!("sigma_u[{}]", t.label())));
        for i in 1..d.n_random() {
            for j in 0..i {
                names.push(format!("rho_u[{},{}]", d.random_effects[i].label(), d.random_effects[j].label()));
            }
        }
        if !d.theta_knots.is_empty() {
            names.extend((1..=d.theta_knots.len()).map(|r| format!("zeta[{r}]")));
            names.push("sigma_zeta".into());
        }
        names.extend(d.survival_covariates.iter().map(|c| format!("gamma[{c}]")));
        match spec.association {
            Association::Value => names.push("nu".into()),
            Association::ValueSlope => names.extend(["nu[value]".to_string(), "nu[slope]".to_string()]),
            Association::RandomEffects => {
                names.extend(d.random_effects.iter().map(|t| format!("nu[{}]", t.label())))
            }
        }
        names.push("eta0".into());
        names.push("eta1".into());
        if !d.hazard_knots().is_empty() {
            names.extend((1..=d.hazard_knots().len()).map(|r| format!("xi[{r}]")));
            names.push("sigma_xi".into());
        }
        names
    }

    pub fn to_columns(&self, spec: &ModelSpec) -> Vec<f64> {
        let mut out = Vec::new();
        for (o, p) in spec.outcomes.iter().zip(&self.outcomes) {
            out.extend(&p.a);
            out.push(p.b);
            if o.kind == OutcomeKind::Continuous {
                out.push(p.sigma_eps.unwrap_or(f64::NAN));
            }
        }
        out.extend(&self.beta);
        out.extend(&self.sigma_u);
        out.extend(&self.rho_u);
        if !self.zeta.is_empty() {
            out.extend(&self.zeta);
            out.push(self.sigma_zeta);
        }
        out.extend(&self.gamma);
        out.extend(&self.assoc);
        out.push(self.eta0);
        out.push(self.eta1);
        if !self.xi.is_empty() {
            out.extend(&self.xi);
            out.push(self.sigma_xi);
        }
        out
    }

    pub fn from_columns(spec: &ModelSpec, cols: &[f64]) -> Result<Self> {
        let expected = Self::column_names(spec).len();
        if cols.len() != expected {
            return config(format!("draw has {} columns, model needs {expected}", cols.len()));
        }
        let mut it = cols.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
        let mut outcomes = Vec::with_capacity(spec.outcomes.len());
        for o in &spec.outcomes {
            let a = take(o.n_thresholds());
            let b = take(1)[0];
            let sigma_eps = (o.kind == OutcomeKind::Continuous).then(|| take(1)[0]);
            outcomes.push(OutcomeParams { a, b, sigma_eps });
        }
        let d = &spec.design;
        let q = d.n_random();
        let beta = take(d.n_fixed());
        let sigma_u = take(q);
        let rho_u = take(q * q.saturating_sub(1) / 2);
        let (zeta, sigma_zeta) = if d.theta_knots.is_empty() {
            (Vec::new(), 1.0)
        } else {
            (take(d.theta_knots.len()), take(1)[0])
        };
        let gamma = take(d.survival_covariates.len());
        let assoc = take(spec.assoc_dim());
        let eta0 = take(1)[0];
        let eta1 = take(1)[0];
        let (xi, sigma_xi) = if d.hazard_knots().is_empty() {
            (Vec::new(), 1.0)
        } else {
            (take(d.hazard_knots().len()), take(1)[0])
        };
        Ok(Self { outcomes, beta, sigma_u, rho_u, zeta, sigma_zeta, gamma, assoc, eta0, eta1, xi, sigma_xi })
    }
}
