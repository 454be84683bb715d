//! Flat unconstrained parameterisation used by the sampler and the gradient.
//!
//! Loadings, threshold increments and scales enter on the log scale and
//! correlations through `atanh`; every other coordinate is unchanged.

use std::ops::Range;

use crate::inference::priors::PriorSpec;
use crate::model::params::{OutcomeParams, ParameterDraw};
use crate::model::spec::{ModelSpec, OutcomeKind};

/// What one unconstrained coordinate represents, for prior evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coord {
    Location,
    LogLoading,
    LogIncrement,
    /// Log standard deviation of a parameter whose variance has an
    /// inverse-gamma prior.
    LogScale,
    AtanhCorrelation,
    /// Smoothing coefficient; its prior is the roughness penalty.
    Penalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeLayout {
    pub kind: OutcomeKind,
    pub is_anchor: bool,
    pub n_thresholds: usize,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub outcomes: Vec<OutcomeLayout>,
    pub beta: Range<usize>,
    pub zeta: Range<usize>,
    pub log_sigma_zeta: Option<usize>,
    pub gamma: Range<usize>,
    pub assoc: Range<usize>,
    pub eta0: usize,
    pub eta1: usize,
    pub xi: Range<usize>,
    pub log_sigma_xi: Option<usize>,
    pub log_sigma_u: Range<usize>,
    pub atanh_rho: Range<usize>,
    pub coords: Vec<Coord>,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut coords = Vec::new();
        let mut take = |kinds: &[Coord]| {
            let start = coords.len();
            coords.extend_from_slice(kinds);
            start..coords.len()
        };
        let mut outcomes = Vec::new();
        for o in &spec.outcomes {
            let n_thr = o.n_thresholds();
            let kinds: Vec<Coord> = match o.kind {
                OutcomeKind::Continuous => vec![Coord::Location, Coord::LogLoading, Coord::LogScale],
                OutcomeKind::Binary => vec![Coord::Location, Coord::LogLoading],
                OutcomeKind::Ordinal => {
                    let mut v = Vec::new();
                    if !o.is_anchor {
                        v.push(Coord::Location);
                    }
                    v.extend(std::iter::repeat_n(Coord::LogIncrement, n_thr - 1));
                    if !o.is_anchor {
                        v.push(Coord::LogLoading);
                    }
                    v
                }
            };
            outcomes.push(OutcomeLayout { kind: o.kind, is_anchor: o.is_anchor, n_thresholds: n_thr, range: take(&kinds) });
        }
        let d = &spec.design;
        let q = d.n_random();
        let beta = take(&vec![Coord::Location; d.n_fixed()]);
        let zeta = take(&vec![Coord::Penalized; d.theta_knots.len()]);
        let log_sigma_zeta = (!zeta.is_empty()).then(|| take(&[Coord::LogScale]).start);
        let gamma = take(&vec![Coord::Location; d.survival_covariates.len()]);
        let assoc = take(&vec![Coord::Location; spec.assoc_dim()]);
        let eta0 = take(&[Coord::Location]).start;
        let eta1 = take(&[Coord::Location]).start;
        let xi = take(&vec![Coord::Penalized; d.hazard_knots().len()]);
        let log_sigma_xi = (!xi.is_empty()).then(|| take(&[Coord::LogScale]).start);
        let log_sigma_u = take(&vec![Coord::LogScale; q]);
        let atanh_rho = take(&vec![Coord::AtanhCorrelation; q * q.saturating_sub(1) / 2]);
        Self {
            outcomes,
            beta,
            zeta,
            log_sigma_zeta,
            gamma,
            assoc,
            eta0,
            eta1,
            xi,
            log_sigma_xi,
            log_sigma_u,
            atanh_rho,
            coords,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// The contiguous block `(γ, ν, η₀, η₁, ξ)`.
    pub fn survival(&self) -> Range<usize> {
        self.gamma.start..self.xi.end
    }

    pub fn encode_outcome(&self, k: usize, p: &OutcomeParams, out: &mut [f64]) {
        let ol = &self.outcomes[k];
        let x = &mut out[ol.range.clone()];
        match ol.kind {
            OutcomeKind::Continuous => {
                x[0] = p.a[0];
                x[1] = p.b.ln();
                x[2] = p.sigma_eps.unwrap_or(f64::NAN).ln();
            }
            OutcomeKind::Binary => {
                x[0] = p.a[0];
                x[1] = p.b.ln();
            }
            OutcomeKind::Ordinal => {
                let mut i = 0;
                if !ol.is_anchor {
                    x[0] = p.a[0];
                    i = 1;
                }
                for w in p.a.windows(2) {
                    x[i] = (w[1] - w[0]).ln();
                    i += 1;
                }
                if !ol.is_anchor {
                    x[i] = p.b.ln();
                }
            }
        }
    }

    pub fn decode_outcome(&self, k: usize, x: &[f64]) -> OutcomeParams {
        let ol = &self.outcomes[k];
        let x = &x[ol.range.clone()];
        match ol.kind {
            OutcomeKind::Continuous => OutcomeParams { a: vec![x[0]], b: x[1].exp(), sigma_eps: Some(x[2].exp()) },
            OutcomeKind::Binary => OutcomeParams { a: vec![x[0]], b: x[1].exp(), sigma_eps: None },
            OutcomeKind::Ordinal => {
                let (first, incs, b) = if ol.is_anchor {
                    (0.0, x, 1.0)
                } else {
                    (x[0], &x[1..x.len() - 1], x[x.len() - 1].exp())
                };
                let mut a = Vec::with_capacity(ol.n_thresholds);
                a.push(first);
                for d in incs {
                    a.push(a[a.len() - 1] + d.exp());
                }
                OutcomeParams { a, b, sigma_eps: None }
            }
        }
    }

    pub fn encode(&self, d: &ParameterDraw) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (k, p) in d.outcomes.iter().enumerate() {
            self.encode_outcome(k, p, &mut x);
        }
        x[self.beta.clone()].copy_from_slice(&d.beta);
        x[self.zeta.clone()].copy_from_slice(&d.zeta);
        if let Some(i) = self.log_sigma_zeta {
            x[i] = d.sigma_zeta.ln();
        }
        x[self.gamma.clone()].copy_from_slice(&d.gamma);
        x[self.assoc.clone()].copy_from_slice(&d.assoc);
        x[self.eta0] = d.eta0;
        x[self.eta1] = d.eta1;
        x[self.xi.clone()].copy_from_slice(&d.xi);
        if let Some(i) = self.log_sigma_xi {
            x[i] = d.sigma_xi.ln();
        }
        for (xi, s) in x[self.log_sigma_u.clone()].iter_mut().zip(&d.sigma_u) {
            *xi = s.ln();
        }
        for (xi, r) in x[self.atanh_rho.clone()].iter_mut().zip(&d.rho_u) {
            *xi = r.atanh();
        }
        x
    }

    pub fn decode(&self, x: &[f64]) -> ParameterDraw {
        ParameterDraw {
            outcomes: (0..self.outcomes.len()).map(|k| self.decode_outcome(k, x)).collect(),
            beta: x[self.beta.clone()].to_vec(),
            sigma_u: x[self.log_sigma_u.clone()].iter().map(|v| v.exp()).collect(),
            rho_u: x[self.atanh_rho.clone()].iter().map(|v| v.tanh()).collect(),
            zeta: x[self.zeta.clone()].to_vec(),
            sigma_zeta: self.log_sigma_zeta.map_or(1.0, |i| x[i].exp()),
            gamma: x[self.gamma.clone()].to_vec(),
            assoc: x[self.assoc.clone()].to_vec(),
            eta0: x[self.eta0],
            eta1: x[self.eta1],
            xi: x[self.xi.clone()].to_vec(),
            sigma_xi: self.log_sigma_xi.map_or(1.0, |i| x[i].exp()),
        }
    }

    /// Prior density of coordinate `i` on the unconstrained scale, including
    /// the change-of-variables term. Penalized coordinates contribute 0 here.
    #[inline]
    pub fn coord_log_prior(&self, i: usize, v: f64, priors: &PriorSpec) -> f64 {
        match self.coords[i] {
            Coord::Location => priors.location(v),
            Coord::LogLoading => priors.loading(v.exp()) + v,
            Coord::LogIncrement => priors.increment(v.exp()) + v,
            Coord::LogScale => priors.variance((2.0 * v).exp()) + 2.0 * v,
            Coord::AtanhCorrelation => {
                let r = v.tanh();
                (1.0 - r * r).ln()
            }
            Coord::Penalized => 0.0,
        }
    }

    #[inline]
    pub fn coord_log_prior_grad(&self, i: usize, v: f64, priors: &PriorSpec) -> f64 {
        match self.coords[i] {
            Coord::Location => priors.location_grad(v),
            Coord::LogLoading => 1.0,
            Coord::LogIncrement => 1.0 - (2.0 * v).exp() / priors.increment_variance,
            Coord::LogScale => -2.0 * priors.variance_shape + 2.0 * priors.variance_rate * (-2.0 * v).exp(),
            Coord::AtanhCorrelation => -2.0 * v.tanh(),
            Coord::Penalized => 0.0,
        }
    }

    /// `log |∂natural/∂unconstrained|` of coordinate `i`, up to constants.
    #[inline]
    pub fn coord_log_jacobian(&self, i: usize, v: f64) -> f64 {
        match self.coords[i] {
            Coord::Location | Coord::Penalized => 0.0,
            Coord::LogLoading | Coord::LogIncrement => v,
            Coord::LogScale => 2.0 * v,
            Coord::AtanhCorrelation => {
                let r = v.tanh();
                (1.0 - r * r).ln()
            }
        }
    }

    /// Roughness penalty `-c'c/σ² - R log σ` for one smoothing block.
    #[inline]
    pub fn penalty(coef: &[f64], log_sigma: f64) -> f64 {
        let ss: f64 = coef.iter().map(|c| c * c).sum();
        -ss * (-2.0 * log_sigma).exp() - coef.len() as f64 * log_sigma
    }

    pub fn smoothing_log_prior(&self, x: &[f64]) -> f64 {
        let mut lp = 0.0;
        if let Some(i) = self.log_sigma_zeta {
            lp += Self::penalty(&x[self.zeta.clone()], x[i]);
        }
        if let Some(i) = self.log_sigma_xi {
            lp += Self::penalty(&x[self.xi.clone()], x[i]);
        }
        lp
    }

    /// Full prior on the unconstrained scale (random-effect density excluded).
    pub fn log_prior(&self, x: &[f64], priors: &PriorSpec) -> f64 {
        let simple: f64 = (0..self.dim()).map(|i| self.coord_log_prior(i, x[i], priors)).sum();
        simple + self.smoothing_log_prior(x)
    }

    pub fn log_jacobian(&self, x: &[f64]) -> f64 {
        (0..self.dim()).map(|i| self.coord_log_jacobian(i, x[i])).sum()
    }

    /// Human-readable name of each coordinate.
    pub fn coord_names(&self, spec: &ModelSpec) -> Vec<String> {
        let mut names = vec![String::new(); self.dim()];
        for (o, ol) in spec.outcomes.iter().zip(&self.outcomes) {
            let mut i = ol.range.start;
            let mut put = |n: String| {
                names[i] = n;
                i += 1;
            };
            match o.kind {
                OutcomeKind::Continuous => {
                    put(format!("a[{}]", o.name));
                    put(format!("log b[{}]", o.name));
                    put(format!("log sigma_eps[{}]", o.name));
                }
                OutcomeKind::Binary => {
                    put(format!("a[{}]", o.name));
                    put(format!("log b[{}]", o.name));
                }
                OutcomeKind::Ordinal => {
                    if !o.is_anchor {
                        put(format!("a[{}][1]", o.name));
                    }
                    for l in 2..=ol.n_thresholds {
                        put(format!("log increment[{}][{l}]", o.name));
                    }
                    if !o.is_anchor {
                        put(format!("log b[{}]", o.name));
                    }
                }
            }
        }
        let d = &spec.design;
        for (i, t) in self.beta.clone().zip(&d.fixed_effects) {
            names[i] = format!("beta[{}]", t.label());
        }
        for (r, i) in self.zeta.clone().enumerate() {
            names[i] = format!("zeta[{}]", r + 1);
        }
        if let Some(i) = self.log_sigma_zeta {
            names[i] = "log sigma_zeta".into();
        }
        for (i, c) in self.gamma.clone().zip(&d.survival_covariates) {
            names[i] = format!("gamma[{c}]");
        }
        for (r, i) in self.assoc.clone().enumerate() {
            names[i] = format!("nu[{}]", r + 1);
        }
        names[self.eta0] = "eta0".into();
        names[self.eta1] = "eta1".into();
        for (r, i) in self.xi.clone().enumerate() {
            names[i] = format!("xi[{}]", r + 1);
        }
        if let Some(i) = self.log_sigma_xi {
            names[i] = "log sigma_xi".into();
        }
        for (i, t) in self.log_sigma_u.clone().zip(&d.random_effects) {
            names[i] = format!("log sigma_u[{}]", t.label());
        }
        for (r, i) in self.atanh_rho.clone().enumerate() {
            names[i] = format!("atanh rho[{}]", r + 1);
        }
        names
    }
}
