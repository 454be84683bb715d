//! Penalized joint log posterior and its analytic gradient.

use crate::error::{config, Result};
use crate::inference::layout::Layout;
use crate::inference::priors::PriorSpec;
use crate::model::data::Dataset;
use crate::model::longitudinal::{loglik_given_thetas, PreparedSubject};
use crate::model::outcome::log_obs_gradient;
use crate::model::params::{ParameterDraw, SubjectEffects};
use crate::model::spec::{ModelSpec, OutcomeKind};
use crate::survival::HazardContext;

/// Multivariate normal density of the random effects under one `Σ`.
#[derive(Clone, Debug)]
pub struct EffectsDensity {
    q: usize,
    /// Row-major `Σ⁻¹`.
    pub precision: Vec<f64>,
    log_norm: f64,
}

impl EffectsDensity {
    /// `None` when `Σ` is not positive definite.
    pub fn new(draw: &ParameterDraw) -> Option<Self> {
        let q = draw.sigma_u.len();
        if q == 0 {
            return Some(Self { q, precision: vec![], log_norm: 0.0 });
        }
        let chol = draw.covariance().cholesky()?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        let precision = (0..q * q).map(|k| inv[(k / q, k % q)]).collect();
        let log_norm = -0.5 * q as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        Some(Self { q, precision, log_norm })
    }

    #[inline]
    pub fn quad(&self, u: &[f64]) -> f64 {
        let q = self.q;
        let mut s = 0.0;
        for i in 0..q {
            let mut r = 0.0;
            for j in 0..q {
                r += self.precision[i * q + j] * u[j];
            }
            s += u[i] * r;
        }
        s
    }

    #[inline]
    pub fn log_pdf(&self, u: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.quad(u)
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }
}

/// A dataset prepared for repeated posterior evaluation.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub priors: &'a PriorSpec,
    pub layout: Layout,
    pub subjects: Vec<PreparedSubject>,
    pub kinds: Vec<OutcomeKind>,
}

impl<'a> Problem<'a> {
    pub fn new(spec: &'a ModelSpec, priors: &'a PriorSpec, dataset: &Dataset) -> Result<Self> {
        spec.validate()?;
        priors.validate()?;
        dataset.validate(spec)?;
        let subjects = dataset.subjects.iter().map(|s| PreparedSubject::new(s, spec)).collect::<Result<_>>()?;
        Ok(Self {
            spec,
            priors,
            layout: Layout::new(spec),
            subjects,
            kinds: spec.outcomes.iter().map(|o| o.kind).collect(),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn q(&self) -> usize {
        self.spec.design.n_random()
    }

    pub fn subject_longitudinal(&self, i: usize, draw: &ParameterDraw, u: &[f64], thetas: &mut Vec<f64>) -> f64 {
        let s = &self.subjects[i];
        s.visit_thetas(&draw.beta, u, &draw.zeta, thetas);
        loglik_given_thetas(&s.obs, &self.kinds, &draw.outcomes, thetas)
    }

    /// Survival log-likelihood; `-∞` for draws whose hazard overflows.
    pub fn subject_survival(&self, i: usize, draw: &ParameterDraw, u: &[f64]) -> f64 {
        let s = &self.subjects[i];
        HazardContext::new(self.spec, &s.lin, draw, u)
            .and_then(|ctx| ctx.loglik(s.observed_time, s.event))
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Log posterior on the unconstrained scale (the sampler's target).
    pub fn log_density(&self, x: &[f64], effects: &[SubjectEffects]) -> f64 {
        let lp = self.layout.log_prior(x, self.priors);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let draw = self.layout.decode(x);
        let Some(re) = EffectsDensity::new(&draw) else {
            return f64::NEG_INFINITY;
        };
        let mut thetas = Vec::new();
        let mut total = lp;
        for (i, e) in effects.iter().enumerate() {
            total += self.subject_longitudinal(i, &draw, &e.u, &mut thetas);
            total += self.subject_survival(i, &draw, &e.u);
            total += re.log_pdf(&e.u);
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    /// Gradient of [`Problem::log_density`] with respect to the unconstrained
    /// parameters and every subject's random effects.
    pub fn gradient(&self, x: &[f64], effects: &[SubjectEffects]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let layout = &self.layout;
        let draw = layout.decode(x);
        let re = EffectsDensity::new(&draw)
            .ok_or_else(|| crate::Error::Config("random-effect covariance is not positive definite".into()))?;
        let q = self.q();
        let mut gx = vec![0.0; layout.dim()];
        let mut gu = Vec::with_capacity(effects.len());
        // natural-scale accumulators per outcome: thresholds, loading, sd
        let mut d_a: Vec<Vec<f64>> = draw.outcomes.iter().map(|o| vec![0.0; o.a.len()]).collect();
        let mut d_b = vec![0.0; draw.outcomes.len()];
        let mut d_sigma = vec![0.0; draw.outcomes.len()];
        let mut thetas = Vec::new();
        let mut s_mat = vec![0.0; q * q];

        for (i, e) in effects.iter().enumerate() {
            let s = &self.subjects[i];
            let u = &e.u;
            s.visit_thetas(&draw.beta, u, &draw.zeta, &mut thetas);
            let mut d_theta = vec![0.0; thetas.len()];
            for o in &s.obs {
                let k = o.outcome;
                let g = log_obs_gradient(self.kinds[k], &draw.outcomes[k], thetas[o.visit], o.value);
                d_theta[o.visit] += g.d_theta;
                for (l, v) in g.d_a {
                    if v != 0.0 {
                        d_a[k][l] += v;
                    }
                }
                d_b[k] += g.d_b;
                d_sigma[k] += g.d_sigma;
            }
            let (mut d_c0, mut d_c1) = (0.0, 0.0);
            for (j, dt) in d_theta.iter().enumerate() {
                d_c0 += dt;
                d_c1 += dt * s.visit_times[j];
                for (r, h) in s.visit_hinges[j].iter().enumerate() {
                    gx[layout.zeta.start + r] += dt * h;
                }
            }

            let ctx = HazardContext::new(self.spec, &s.lin, &draw, u)?;
            let (_, sg) = ctx.loglik_gradient(s.observed_time, s.event, u)?;
            d_c0 += sg.d_c0;
            d_c1 += sg.d_c1;
            gx[layout.eta0] += sg.d_base;
            for (c, w) in layout.gamma.clone().zip(&s.lin.w) {
                gx[c] += w * sg.d_base;
            }
            gx[layout.eta1] += sg.d_eta1;
            for (c, v) in layout.xi.clone().zip(&sg.d_xi) {
                gx[c] += v;
            }
            for (c, v) in layout.assoc.clone().zip(&sg.d_assoc) {
                gx[c] += v;
            }
            for (c, v) in layout.zeta.clone().zip(&sg.d_zeta) {
                gx[c] += v;
            }
            for (j, c) in layout.beta.clone().enumerate() {
                gx[c] += s.lin.x0[j] * d_c0 + s.lin.x1[j] * d_c1;
            }

            let mut g = vec![0.0; q];
            for r in 0..q {
                g[r] = s.lin.z0[r] * d_c0 + s.lin.z1[r] * d_c1;
                if !sg.d_u.is_empty() {
                    g[r] += sg.d_u[r];
                }
                for c in 0..q {
                    g[r] -= re.precision[r * q + c] * u[c];
                    s_mat[r * q + c] += u[r] * u[c];
                }
            }
            gu.push(g);
        }

        // measurement parameters to unconstrained coordinates
        for (k, ol) in layout.outcomes.iter().enumerate() {
            let p = &draw.outcomes[k];
            let r = ol.range.start;
            match ol.kind {
                OutcomeKind::Continuous => {
                    gx[r] += d_a[k][0];
                    gx[r + 1] += d_b[k] * p.b;
                    gx[r + 2] += d_sigma[k] * p.sigma_eps.unwrap_or(f64::NAN);
                }
                OutcomeKind::Binary => {
                    gx[r] += d_a[k][0];
                    gx[r + 1] += d_b[k] * p.b;
                }
                OutcomeKind::Ordinal => {
                    let n = p.a.len();
                    let mut suffix = vec![0.0; n + 1];
                    for l in (0..n).rev() {
                        suffix[l] = suffix[l + 1] + d_a[k][l];
                    }
                    let mut c = r;
                    if !ol.is_anchor {
                        gx[c] += suffix[0];
                        c += 1;
                    }
                    for m in 1..n {
                        gx[c] += (p.a[m] - p.a[m - 1]) * suffix[m];
                        c += 1;
                    }
                    if !ol.is_anchor {
                        gx[c] += d_b[k] * p.b;
                    }
                }
            }
        }

        // random-effect covariance through (log σ, atanh ρ)
        if q > 0 {
            let n = effects.len() as f64;
            let p = &re.precision;
            let sigma = draw.covariance();
            // G = -n/2 P + 1/2 P S P
            let mut ps = vec![0.0; q * q];
            for a in 0..q {
                for b in 0..q {
                    ps[a * q + b] = (0..q).map(|c| p[a * q + c] * s_mat[c * q + b]).sum();
                }
            }
            let mut gm = vec![0.0; q * q];
            for a in 0..q {
                for b in 0..q {
                    let psp: f64 = (0..q).map(|c| ps[a * q + c] * p[c * q + b]).sum();
                    gm[a * q + b] = -0.5 * n * p[a * q + b] + 0.5 * psp;
                }
            }
            for (k, c) in layout.log_sigma_u.clone().enumerate() {
                gx[c] += 2.0 * (0..q).map(|j| gm[k * q + j] * sigma[(k, j)]).sum::<f64>();
            }
            let mut c = layout.atanh_rho.start;
            for a in 1..q {
                for b in 0..a {
                    let rho = draw.rho_u[crate::model::params::corr_index(a, b)];
                    gx[c] += 2.0 * gm[a * q + b] * draw.sigma_u[a] * draw.sigma_u[b] * (1.0 - rho * rho);
                    c += 1;
                }
            }
        }

        for (i, g) in gx.iter_mut().enumerate() {
            *g += layout.coord_log_prior_grad(i, x[i], self.priors);
        }
        let smooth = [(layout.zeta.clone(), layout.log_sigma_zeta), (layout.xi.clone(), layout.log_sigma_xi)];
        for (range, ls) in smooth {
            if let Some(ls) = ls {
                let inv = (-2.0 * x[ls]).exp();
                let mut ss = 0.0;
                for c in range.clone() {
                    gx[c] -= 2.0 * x[c] * inv;
                    ss += x[c] * x[c];
                }
                gx[ls] += 2.0 * ss * inv - range.len() as f64;
            }
        }
        Ok((gx, gu))
    }
}

fn check_effects(spec: &ModelSpec, dataset: &Dataset, effects: &[SubjectEffects]) -> Result<()> {
    if effects.len() != dataset.len() {
        return config(format!("{} subjects but {} random-effect vectors", dataset.len(), effects.len()));
    }
    if effects.iter().any(|e| e.u.len() != spec.design.n_random()) {
        return config(format!("every random-effect vector needs {} entries", spec.design.n_random()));
    }
    Ok(())
}

/// Penalized joint log posterior on the natural parameter scale:
/// longitudinal and survival log-likelihoods, the roughness penalties
/// `-ζ'ζ/σ_ζ² - ξ'ξ/σ_ξ²`, the random-effect density and the priors.
/// Constraint violations give `-∞`.
pub fn log_posterior(
    dataset: &Dataset,
    draw: &ParameterDraw,
    effects: &[SubjectEffects],
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<f64> {
    check_effects(spec, dataset, effects)?;
    if draw.validate(spec).is_err() {
        return Ok(f64::NEG_INFINITY);
    }
    let problem = Problem::new(spec, priors, dataset)?;
    let x = problem.layout.encode(draw);
    Ok(problem.log_density(&x, effects) - problem.layout.log_jacobian(&x))
}

/// Gradient of the log posterior expressed in unconstrained coordinates
/// (log loadings, log increments, log scales, atanh correlations), including
/// the change-of-variables terms.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGradient {
    pub coordinates: Vec<String>,
    pub params: Vec<f64>,
    pub effects: Vec<Vec<f64>>,
}

pub fn grad_log_posterior(
    dataset: &Dataset,
    draw: &ParameterDraw,
    effects: &[SubjectEffects],
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<PosteriorGradient> {
    check_effects(spec, dataset, effects)?;
    draw.validate(spec)?;
    let problem = Problem::new(spec, priors, dataset)?;
    let x = problem.layout.encode(draw);
    let (params, effects) = problem.gradient(&x, effects)?;
    Ok(PosteriorGradient { coordinates: problem.layout.coord_names(spec), params, effects })
}
