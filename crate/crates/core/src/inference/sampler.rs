//! Metropolis-within-Gibbs sampler.
//!
//! One iteration updates, in order: each outcome's measurement parameters
//! (exact Gibbs draws for continuous outcomes, adaptive random-walk blocks
//! otherwise), `β`, `ζ` and `σ_ζ`, the survival block `(γ, ν, η₀, η₁, ξ)` and
//! `σ_ξ`, every subject's random effects, the random-effect covariance, and
//! finally one translation move per random term that has a matching fixed
//! term. Proposal scales and covariances adapt during burn-in only.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config, data, Result};
use crate::inference::archive::PosteriorArchive;
use crate::inference::diagnostics::{gelman_rubin, Diagnostics};
use crate::inference::layout::{Coord, Layout};
use crate::inference::posterior::{EffectsDensity, Problem};
use crate::inference::priors::PriorSpec;
use crate::model::data::Dataset;
use crate::model::longitudinal::Observation;
use crate::model::outcome::log_obs;
use crate::model::params::{OutcomeParams, ParameterDraw, SubjectEffects};
use crate::model::spec::{Association, ModelSpec, OutcomeKind};
use crate::rng::{stream, tag, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_chains: usize,
    /// Iterations per chain, burn-in included.
    pub n_iter: usize,
    pub n_burnin: usize,
    pub seed: u64,
    pub thin: usize,
    /// Burn-in iterations between re-estimates of block proposal covariances.
    pub adapt_interval: usize,
    pub keep_subject_effects: bool,
    /// Hold the association coefficients at these values instead of sampling them.
    pub fixed_association: Option<Vec<f64>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            n_iter: 2000,
            n_burnin: 1000,
            seed: 1,
            thin: 1,
            adapt_interval: 50,
            keep_subject_effects: true,
            fixed_association: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.n_chains < 2 {
            return config("at least two chains are needed for convergence diagnostics");
        }
        if self.n_burnin >= self.n_iter {
            return config("burn-in must be shorter than the number of iterations");
        }
        if self.thin == 0 || self.adapt_interval == 0 {
            return config("thinning and adaptation interval must be positive");
        }
        if let Some(a) = &self.fixed_association {
            if a.len() != spec.assoc_dim() || a.iter().any(|v| !v.is_finite()) {
                return config(format!("fixed association needs {} finite value(s)", spec.assoc_dim()));
            }
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.n_burnin).div_ceil(self.thin)
    }
}

const TARGET_ACCEPTANCE: f64 = 0.44;
const BETA_UPDATES: usize = 2;
const SURVIVAL_UPDATES: usize = 3;
const COVARIANCE_UPDATES: usize = 5;
const GROUP_UPDATES: usize = 2;

#[inline]
fn adaptation_gain(iter: usize) -> f64 {
    (iter as f64 + 1.0).powf(-0.6)
}

/// Random-walk proposal for a block of coordinates whose covariance is
/// learned from the burn-in history.
#[derive(Clone, Debug)]
struct Proposal {
    dim: usize,
    /// Lower-triangular factor, row-major.
    factor: Vec<f64>,
    log_scale: f64,
    learned: bool,
    n: f64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

impl Proposal {
    fn new(steps: &[f64]) -> Self {
        let dim = steps.len();
        let mut factor = vec![0.0; dim * dim];
        for (i, s) in steps.iter().enumerate() {
            factor[i * dim + i] = *s;
        }
        Self {
            dim,
            factor,
            log_scale: 0.0,
            learned: false,
            n: 0.0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            accepted: 0,
            proposed: 0,
        }
    }

    fn step(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        let s = self.log_scale.exp();
        (0..self.dim).map(|i| s * (0..=i).map(|j| self.factor[i * self.dim + j] * z[j]).sum::<f64>()).collect()
    }

    fn record(&mut self, x: &[f64]) {
        self.n += 1.0;
        let d = self.dim;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / self.n;
        }
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn relearn(&mut self) {
        let d = self.dim;
        if self.n < (2 * d + 10) as f64 {
            return;
        }
        let mut cov: Vec<f64> = self.comoment.iter().map(|c| c / (self.n - 1.0)).collect();
        for i in 0..d {
            cov[i * d + i] += 1e-10 + 1e-6 * cov[i * d + i];
        }
        let mut l = vec![0.0; d * d];
        for j in 0..d {
            let v = cov[j * d + j] - (0..j).map(|k| l[j * d + k] * l[j * d + k]).sum::<f64>();
            if v <= 0.0 {
                return;
            }
            l[j * d + j] = v.sqrt();
            for i in j + 1..d {
                l[i * d + j] = (cov[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>()) / l[j * d + j];
            }
        }
        let c = 2.38 / (d as f64).sqrt();
        self.factor = l.into_iter().map(|v| v * c).collect();
        if !self.learned {
            self.log_scale = 0.0;
            self.learned = true;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BlockKind {
    Outcome(usize),
    Beta,
    Zeta,
    Survival,
    Covariance,
}

#[derive(Clone, Debug)]
struct Block {
    name: String,
    kind: BlockKind,
    coords: Vec<usize>,
    proposal: Proposal,
}

/// Per-chain output.
struct ChainOutput {
    draws: Vec<ParameterDraw>,
    effects: Vec<Vec<f64>>,
    acceptance: Vec<(String, u64, u64)>,
}

struct Chain<'a> {
    p: &'a Problem<'a>,
    layout: &'a Layout,
    by_outcome: Vec<Vec<Vec<Observation>>>,
    n: usize,
    q: usize,
    k: usize,
    x: Vec<f64>,
    draw: ParameterDraw,
    u: Vec<f64>,
    thetas: Vec<Vec<f64>>,
    ll_obs: Vec<f64>,
    ll_surv: Vec<f64>,
    re: EffectsDensity,
    rng: StreamRng,
    blocks: Vec<Block>,
    u_log_step: Vec<f64>,
    u_accepted: u64,
    u_proposed: u64,
    /// `(fixed term, random term, per-subject multiplier)` triples whose
    /// joint shift leaves every latent trait unchanged.
    shift_pairs: Vec<(usize, usize, Vec<f64>)>,
    intercept: Option<usize>,
    /// Random-walk log step of the rescaling and translation moves.
    group_log_step: [f64; 2],
    group_accepted: [u64; 2],
    group_proposed: [u64; 2],
    shift_accepted: u64,
    shift_proposed: u64,
    survival_uses_trait: bool,
    fixed_association: bool,
    scratch_thetas: Vec<Vec<f64>>,
    scratch_obs: Vec<f64>,
    scratch_surv: Vec<f64>,
}

/// Typical magnitude of each unconstrained coordinate, from the design.
fn coordinate_scales(p: &Problem) -> Vec<f64> {
    let layout = &p.layout;
    let mut scale = vec![1.0; layout.dim()];
    for (i, c) in layout.coords.iter().enumerate() {
        scale[i] = match c {
            Coord::Location | Coord::Penalized => 1.0,
            _ => 0.5,
        };
    }
    let max_abs = |f: &dyn Fn(&crate::model::longitudinal::PreparedSubject, f64) -> f64| {
        let mut m: f64 = 0.0;
        for s in &p.subjects {
            for &t in s.visit_times.iter().chain(std::iter::once(&s.observed_time)) {
                m = m.max(f(s, t).abs());
            }
        }
        m
    };
    for (j, c) in layout.beta.clone().enumerate() {
        scale[c] = 1.0 / (1.0 + max_abs(&|s, t| s.lin.x0[j] + s.lin.x1[j] * t));
    }
    let tmax = max_abs(&|_, t| t);
    for (r, c) in layout.zeta.clone().enumerate() {
        let k = p.spec.design.theta_knots[r];
        scale[c] = 1.0 / (1.0 + (tmax - k).max(0.0));
    }
    for (j, c) in layout.gamma.clone().enumerate() {
        scale[c] = 1.0 / (1.0 + max_abs(&|s, _| s.lin.w[j]));
    }
    if p.spec.association == Association::ValueSlope {
        scale[layout.assoc.start + 1] = 0.5;
    }
    scale[layout.eta1] = 1.0 / (1.0 + tmax);
    for (r, c) in layout.xi.clone().enumerate() {
        let k = p.spec.design.hazard_knots()[r];
        scale[c] = 1.0 / (1.0 + (tmax - k).max(0.0));
    }
    scale
}

fn sample_truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut StreamRng) -> f64 {
    let std = Normal::standard();
    let (pl, pu) = (std.cdf((lo - mean) / sd), std.cdf((hi - mean) / sd));
    if pu - pl > 1e-300 {
        let v = pl + (pu - pl) * rng.random::<f64>();
        (mean + sd * std.inverse_cdf(v)).clamp(lo, hi)
    } else {
        // the whole interval sits in one extreme tail: the mass piles up at
        // the nearer end
        if mean < lo {
            lo + (hi - lo) * 1e-12
        } else {
            hi - (hi - lo) * 1e-12
        }
    }
}

impl<'a> Chain<'a> {
    fn new(p: &'a Problem<'a>, cfg: &ChainConfig, index: usize) -> Self {
        let layout = &p.layout;
        let n = p.n_subjects();
        let q = p.q();
        let k = p.spec.outcomes.len();
        let mut rng = stream(cfg.seed, tag::CHAIN, index as u64);
        let scales = coordinate_scales(p);

        let mut x = layout.encode(&ParameterDraw::initial(p.spec));
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += scales[i] * rng.random_range(-1.0..1.0);
        }
        if let Some(a) = &cfg.fixed_association {
            x[layout.assoc.clone()].copy_from_slice(a);
        }
        // loadings start inside their support whatever the jitter
        let draw = layout.decode(&x);

        let by_outcome = p
            .subjects
            .iter()
            .map(|s| {
                let mut v = vec![Vec::new(); k];
                for o in &s.obs {
                    v[o.outcome].push(*o);
                }
                v
            })
            .collect();

        let steps = |coords: &[usize]| coords.iter().map(|&c| 0.1 * scales[c]).collect::<Vec<_>>();
        let mut blocks = Vec::new();
        for (kk, (o, ol)) in p.spec.outcomes.iter().zip(&layout.outcomes).enumerate() {
            if o.kind != OutcomeKind::Continuous && !ol.range.is_empty() {
                let coords: Vec<usize> = ol.range.clone().collect();
                blocks.push(Block {
                    name: format!("outcome[{}]", o.name),
                    kind: BlockKind::Outcome(kk),
                    proposal: Proposal::new(&steps(&coords)),
                    coords,
                });
            }
        }
        let mut push = |name: &str, kind: BlockKind, coords: Vec<usize>| {
            if !coords.is_empty() {
                blocks.push(Block { name: name.into(), kind, proposal: Proposal::new(&steps(&coords)), coords });
            }
        };
        push("beta", BlockKind::Beta, layout.beta.clone().collect());
        push("zeta", BlockKind::Zeta, layout.zeta.clone().collect());
        let survival: Vec<usize> = layout
            .survival()
            .filter(|c| cfg.fixed_association.is_none() || !layout.assoc.contains(c))
            .collect();
        push("survival", BlockKind::Survival, survival);
        let cov: Vec<usize> = layout.log_sigma_u.clone().chain(layout.atanh_rho.clone()).collect();
        push("covariance", BlockKind::Covariance, cov);

        let design = &p.spec.design;
        let mut shift_pairs = Vec::new();
        for (r, rt) in design.random_effects.iter().enumerate() {
            if rt.covariate.is_some() {
                continue;
            }
            for (j, ft) in design.fixed_effects.iter().enumerate() {
                if ft.time == rt.time {
                    let m = p.subjects.iter().map(|s| if ft.time { s.lin.x1[j] } else { s.lin.x0[j] }).collect();
                    shift_pairs.push((j, r, m));
                }
            }
        }
        let intercept = design.fixed_effects.iter().position(|t| *t == crate::model::spec::Term::intercept());

        let mut u_log_step = vec![0.0; n * q];
        for (i, s) in p.subjects.iter().enumerate() {
            for r in 0..q {
                let m = s
                    .visit_times
                    .iter()
                    .chain(std::iter::once(&s.observed_time))
                    .map(|t| (s.lin.z0[r] + s.lin.z1[r] * t).abs())
                    .fold(0.0, f64::max);
                u_log_step[i * q + r] = (0.5 / (1.0 + m)).ln();
            }
        }

        let re = EffectsDensity::new(&draw).expect("initial covariance is diagonal");
        let mut chain = Self {
            p,
            layout,
            by_outcome,
            n,
            q,
            k,
            x,
            draw,
            u: vec![0.0; n * q],
            thetas: vec![Vec::new(); n],
            ll_obs: vec![0.0; n * k],
            ll_surv: vec![0.0; n],
            re,
            rng,
            blocks,
            u_log_step,
            u_accepted: 0,
            u_proposed: 0,
            shift_pairs,
            intercept,
            group_log_step: [(-3.0f64), (-2.0f64)],
            group_accepted: [0; 2],
            group_proposed: [0; 2],
            shift_accepted: 0,
            shift_proposed: 0,
            survival_uses_trait: p.spec.association != Association::RandomEffects,
            fixed_association: cfg.fixed_association.is_some(),
            scratch_thetas: vec![Vec::new(); n],
            scratch_obs: vec![0.0; n * k],
            scratch_surv: vec![0.0; n],
        };
        chain.refresh();
        chain
    }

    fn u_of(&self, i: usize) -> &[f64] {
        &self.u[i * self.q..(i + 1) * self.q]
    }

    /// Recomputes every cached likelihood term from the current state.
    fn refresh(&mut self) {
        let draw = self.draw.clone();
        let total = self.evaluate(&draw, true, true);
        std::mem::swap(&mut self.thetas, &mut self.scratch_thetas);
        std::mem::swap(&mut self.ll_obs, &mut self.scratch_obs);
        std::mem::swap(&mut self.ll_surv, &mut self.scratch_surv);
        debug_assert!(!total.is_nan());
    }

    #[inline]
    fn outcome_ll(&self, i: usize, k: usize, params: &OutcomeParams, thetas: &[f64]) -> f64 {
        let kind = self.p.kinds[k];
        self.by_outcome[i][k].iter().map(|o| log_obs(kind, params, thetas[o.visit], o.value)).sum()
    }

    /// Evaluates `draw` for all subjects into the scratch buffers; returns the
    /// total of the recomputed parts.
    fn evaluate(&mut self, draw: &ParameterDraw, long: bool, surv: bool) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let u = &self.u[i * self.q..(i + 1) * self.q];
            if long {
                let s = &self.p.subjects[i];
                let mut th = std::mem::take(&mut self.scratch_thetas[i]);
                s.visit_thetas(&draw.beta, u, &draw.zeta, &mut th);
                for k in 0..self.k {
                    let v = self.outcome_ll(i, k, &draw.outcomes[k], &th);
                    self.scratch_obs[i * self.k + k] = v;
                    total += v;
                }
                self.scratch_thetas[i] = th;
            }
            if surv {
                let v = self.p.subject_survival(i, draw, u);
                self.scratch_surv[i] = v;
                total += v;
            }
        }
        total
    }

    fn block_prior(&self, coords: &[usize], x: &[f64]) -> f64 {
        coords.iter().map(|&c| self.layout.coord_log_prior(c, x[c], self.p.priors)).sum()
    }

    fn gibbs_continuous(&mut self, k: usize) {
        let priors = self.p.priors;
        let range = self.layout.outcomes[k].range.clone();
        let mut par = self.draw.outcomes[k].clone();
        let collect = |this: &Self| -> Vec<(f64, f64)> {
            let mut v = Vec::new();
            for i in 0..this.n {
                for o in &this.by_outcome[i][k] {
                    v.push((this.thetas[i][o.visit], o.value));
                }
            }
            v
        };
        let pts = collect(self);
        let nobs = pts.len() as f64;
        let var = par.sigma_eps.unwrap_or(1.0).powi(2);

        // intercept
        let prec = nobs / var + 1.0 / priors.location_variance;
        let mean = pts.iter().map(|(t, y)| y - par.b * t).sum::<f64>() / var / prec;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        par.a[0] = mean + z / prec.sqrt();

        // loading, normal likelihood truncated to the prior support
        let stt: f64 = pts.iter().map(|(t, _)| t * t).sum();
        if stt > 1e-12 {
            let str_: f64 = pts.iter().map(|(t, y)| t * (y - par.a[0])).sum();
            par.b = sample_truncated_normal(str_ / stt, (var / stt).sqrt(), 0.0, priors.loading_upper, &mut self.rng);
        } else {
            par.b = priors.loading_upper * self.rng.random::<f64>();
        }
        if par.b <= 0.0 {
            par.b = f64::MIN_POSITIVE;
        }

        // residual precision
        let ss: f64 = pts.iter().map(|(t, y)| (y - par.a[0] - par.b * t).powi(2)).sum();
        let shape = priors.variance_shape + 0.5 * nobs;
        let rate = priors.variance_rate + 0.5 * ss;
        let precision = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(&mut self.rng);
        par.sigma_eps = Some(precision.max(1e-300).recip().sqrt());

        let mut x = self.x.clone();
        self.layout.encode_outcome(k, &par, &mut x);
        self.x[range.clone()].copy_from_slice(&x[range]);
        self.draw.outcomes[k] = self.layout.decode_outcome(k, &self.x);
        for i in 0..self.n {
            self.ll_obs[i * self.k + k] = self.outcome_ll(i, k, &self.draw.outcomes[k], &self.thetas[i]);
        }
    }

    fn gibbs_smoothing(&mut self, coef: std::ops::Range<usize>, log_sigma: Option<usize>) {
        let Some(ls) = log_sigma else { return };
        let priors = self.p.priors;
        let ss: f64 = self.x[coef.clone()].iter().map(|c| c * c).sum();
        let shape = priors.variance_shape + 0.5 * coef.len() as f64;
        let rate = priors.variance_rate + ss;
        let precision: f64 = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(&mut self.rng);
        self.x[ls] = -0.5 * precision.ln();
        self.draw = self.layout.decode(&self.x);
    }

    fn metropolis_block(&mut self, b: usize, iter: usize, burnin: usize) {
        let coords = self.blocks[b].coords.clone();
        let kind = self.blocks[b].kind;
        let step = self.blocks[b].proposal.step(&mut self.rng);
        let mut x_new = self.x.clone();
        for (c, s) in coords.iter().zip(&step) {
            x_new[*c] += s;
        }
        let mut log_ratio = self.block_prior(&coords, &x_new) - self.block_prior(&coords, &self.x);
        let zeta_pen = |x: &[f64], l: &Layout| l.log_sigma_zeta.map_or(0.0, |s| Layout::penalty(&x[l.zeta.clone()], x[s]));
        let xi_pen = |x: &[f64], l: &Layout| l.log_sigma_xi.map_or(0.0, |s| Layout::penalty(&x[l.xi.clone()], x[s]));

        let mut accept_fn: Option<Box<dyn FnOnce(&mut Self)>> = None;
        if log_ratio.is_finite() {
            match kind {
                BlockKind::Outcome(k) => {
                    let par = self.layout.decode_outcome(k, &x_new);
                    let mut new_ll = vec![0.0; self.n];
                    let mut diff = 0.0;
                    for i in 0..self.n {
                        new_ll[i] = self.outcome_ll(i, k, &par, &self.thetas[i]);
                        diff += new_ll[i] - self.ll_obs[i * self.k + k];
                    }
                    log_ratio += diff;
                    accept_fn = Some(Box::new(move |c: &mut Self| {
                        for (i, v) in new_ll.into_iter().enumerate() {
                            c.ll_obs[i * c.k + k] = v;
                        }
                        c.draw.outcomes[k] = par;
                    }));
                }
                BlockKind::Beta | BlockKind::Zeta => {
                    let mut draw = self.draw.clone();
                    draw.beta = x_new[self.layout.beta.clone()].to_vec();
                    draw.zeta = x_new[self.layout.zeta.clone()].to_vec();
                    let surv = self.survival_uses_trait;
                    let new_total = self.evaluate(&draw, true, surv);
                    let old_total: f64 =
                        self.ll_obs.iter().sum::<f64>() + if surv { self.ll_surv.iter().sum::<f64>() } else { 0.0 };
                    log_ratio += new_total - old_total;
                    if kind == BlockKind::Zeta {
                        log_ratio += zeta_pen(&x_new, self.layout) - zeta_pen(&self.x, self.layout);
                    }
                    accept_fn = Some(Box::new(move |c: &mut Self| {
                        std::mem::swap(&mut c.thetas, &mut c.scratch_thetas);
                        std::mem::swap(&mut c.ll_obs, &mut c.scratch_obs);
                        if surv {
                            std::mem::swap(&mut c.ll_surv, &mut c.scratch_surv);
                        }
                        c.draw = draw;
                    }));
                }
                BlockKind::Survival => {
                    let l = self.layout;
                    let mut draw = self.draw.clone();
                    draw.gamma = x_new[l.gamma.clone()].to_vec();
                    draw.assoc = x_new[l.assoc.clone()].to_vec();
                    draw.eta0 = x_new[l.eta0];
                    draw.eta1 = x_new[l.eta1];
                    draw.xi = x_new[l.xi.clone()].to_vec();
                    let new_total = self.evaluate(&draw, false, true);
                    log_ratio += new_total - self.ll_surv.iter().sum::<f64>();
                    log_ratio += xi_pen(&x_new, l) - xi_pen(&self.x, l);
                    accept_fn = Some(Box::new(move |c: &mut Self| {
                        std::mem::swap(&mut c.ll_surv, &mut c.scratch_surv);
                        c.draw = draw;
                    }));
                }
                BlockKind::Covariance => {
                    let l = self.layout;
                    let mut draw = self.draw.clone();
                    draw.sigma_u = x_new[l.log_sigma_u.clone()].iter().map(|v| v.exp()).collect();
                    draw.rho_u = x_new[l.atanh_rho.clone()].iter().map(|v| v.tanh()).collect();
                    match EffectsDensity::new(&draw) {
                        Some(re) => {
                            let mut diff = 0.0;
                            for i in 0..self.n {
                                let u = self.u_of(i);
                                diff += re.log_pdf(u) - self.re.log_pdf(u);
                            }
                            log_ratio += diff;
                            accept_fn = Some(Box::new(move |c: &mut Self| {
                                c.re = re;
                                c.draw = draw;
                            }));
                        }
                        None => log_ratio = f64::NEG_INFINITY,
                    }
                }
            }
        }
        let accept = log_ratio.is_finite() && self.rng.random::<f64>().ln() < log_ratio;
        if accept {
            if let Some(f) = accept_fn {
                f(self);
            }
            for &c in &coords {
                self.x[c] = x_new[c];
            }
        }
        let prop = &mut self.blocks[b].proposal;
        if iter < burnin {
            let alpha = if log_ratio.is_finite() { log_ratio.min(0.0).exp() } else { 0.0 };
            prop.log_scale += adaptation_gain(iter) * (alpha - TARGET_ACCEPTANCE);
            if iter >= burnin / 4 {
                let vals: Vec<f64> = coords.iter().map(|&c| self.x[c]).collect();
                prop.record(&vals);
            }
        } else {
            prop.proposed += 1;
            prop.accepted += u64::from(accept);
        }
    }

    fn update_effects(&mut self, iter: usize, burnin: usize) {
        let (q, k) = (self.q, self.k);
        let mut th = Vec::new();
        let mut lls = vec![0.0; k];
        let mut u_new = vec![0.0; q];
        for i in 0..self.n {
            for r in 0..q {
                u_new.copy_from_slice(self.u_of(i));
                let z: f64 = StandardNormal.sample(&mut self.rng);
                u_new[r] += self.u_log_step[i * q + r].exp() * z;

                let s = &self.p.subjects[i];
                s.visit_thetas(&self.draw.beta, &u_new, &self.draw.zeta, &mut th);
                let mut new_long = 0.0;
                for (kk, l) in lls.iter_mut().enumerate() {
                    *l = self.outcome_ll(i, kk, &self.draw.outcomes[kk], &th);
                    new_long += *l;
                }
                let old_long: f64 = self.ll_obs[i * k..(i + 1) * k].iter().sum();
                let new_surv = self.p.subject_survival(i, &self.draw, &u_new);
                let log_ratio = new_long - old_long + new_surv - self.ll_surv[i] + self.re.log_pdf(&u_new)
                    - self.re.log_pdf(self.u_of(i));
                let accept = log_ratio.is_finite() && self.rng.random::<f64>().ln() < log_ratio;
                if accept {
                    self.u[i * q..(i + 1) * q].copy_from_slice(&u_new);
                    self.ll_obs[i * k..(i + 1) * k].copy_from_slice(&lls);
                    self.ll_surv[i] = new_surv;
                    std::mem::swap(&mut self.thetas[i], &mut th);
                }
                if iter < burnin {
                    let alpha = if log_ratio.is_finite() { log_ratio.min(0.0).exp() } else { 0.0 };
                    self.u_log_step[i * q + r] += adaptation_gain(iter) * (alpha - TARGET_ACCEPTANCE);
                } else {
                    self.u_proposed += 1;
                    self.u_accepted += u64::from(accept);
                }
            }
        }
    }

    /// Moves `β_j += δ`, `u_ir -= m_i δ` for every subject, where `m_i` is the
    /// subject's multiplier of fixed term `j`. The latent traits are unchanged,
    /// so `δ` is drawn from its exact conditional under the random-effect
    /// density and the prior; only a survival term that uses the random
    /// effects directly needs an accept step.
    fn shift_moves(&mut self, iter: usize, burnin: usize) {
        let q = self.q;
        let v = self.p.priors.location_variance;
        for pi in 0..self.shift_pairs.len() {
            let (j, r) = (self.shift_pairs[pi].0, self.shift_pairs[pi].1);
            let m = &self.shift_pairs[pi].2;
            let bc = self.layout.beta.start + j;
            let prec_rr = self.re.precision[r * q + r];
            let (mut lin, mut mm) = (0.0, 0.0);
            for (i, &mi) in m.iter().enumerate() {
                let u = &self.u[i * q..(i + 1) * q];
                lin += mi * (0..q).map(|c| self.re.precision[r * q + c] * u[c]).sum::<f64>();
                mm += mi * mi;
            }
            if mm == 0.0 {
                continue;
            }
            let prec = mm * prec_rr + 1.0 / v;
            let mean = (lin - self.x[bc] / v) / prec;
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let delta = mean + z / prec.sqrt();

            let mut accept = true;
            let mut new_surv = Vec::new();
            if !self.survival_uses_trait {
                let mut u_shift = vec![0.0; q];
                let mut diff = 0.0;
                for (i, &mi) in m.iter().enumerate() {
                    u_shift.copy_from_slice(&self.u[i * q..(i + 1) * q]);
                    u_shift[r] -= mi * delta;
                    let s = self.p.subject_survival(i, &self.draw, &u_shift);
                    diff += s - self.ll_surv[i];
                    new_surv.push(s);
                }
                accept = diff.is_finite() && self.rng.random::<f64>().ln() < diff;
            }
            if accept {
                self.x[bc] += delta;
                self.draw.beta[j] = self.x[bc];
                for (i, &mi) in self.shift_pairs[pi].2.iter().enumerate() {
                    self.u[i * q + r] -= mi * delta;
                }
                if !new_surv.is_empty() {
                    self.ll_surv = new_surv;
                }
            }
            if iter >= burnin {
                self.shift_proposed += 1;
                self.shift_accepted += u64::from(accept);
            }
        }
    }

    /// Rescales the latent trait by `c`: locations and random effects scale by
    /// `c`, loadings and association coefficients by `1/c`, and the anchor's
    /// threshold gaps by `c`. Only the anchor outcome and the priors see the
    /// change. Returns the log Jacobian of the map on the sampler's coordinates.
    fn rescaled(&self, log_c: f64, x: &mut [f64], u: &mut [f64]) -> f64 {
        let l = self.layout;
        let c = log_c.exp();
        for i in l.beta.clone().chain(l.zeta.clone()) {
            x[i] *= c;
        }
        for i in l.log_sigma_zeta.into_iter().chain(l.log_sigma_u.clone()) {
            x[i] += log_c;
        }
        for ol in &l.outcomes {
            for i in ol.range.clone() {
                match l.coords[i] {
                    Coord::LogLoading => x[i] -= log_c,
                    Coord::LogIncrement if ol.is_anchor => x[i] += log_c,
                    _ => {}
                }
            }
        }
        for i in l.assoc.clone() {
            x[i] /= c;
        }
        for v in u.iter_mut() {
            *v *= c;
        }
        log_c * (l.beta.len() + l.zeta.len() + u.len()) as f64 - log_c * l.assoc.len() as f64
    }

    /// Shifts the latent trait by `δ` through the fixed intercept, moving every
    /// non-anchor intercept or threshold and the hazard intercept to match.
    fn translated(&self, delta: f64, x: &mut [f64]) {
        let l = self.layout;
        let Some(j) = self.intercept else { return };
        x[l.beta.start + j] += delta;
        for (k, ol) in l.outcomes.iter().enumerate() {
            if ol.is_anchor {
                continue;
            }
            let b = self.draw.outcomes[k].b;
            let a0 = ol.range.start;
            match ol.kind {
                OutcomeKind::Ordinal => x[a0] += b * delta,
                _ => x[a0] -= b * delta,
            }
        }
        match self.p.spec.association {
            Association::Value | Association::ValueSlope => x[l.eta0] -= self.draw.assoc[0] * delta,
            Association::RandomEffects => {}
        }
    }

    fn group_moves(&mut self, iter: usize, burnin: usize) {
        let effects = |u: &[f64], q: usize| -> Vec<SubjectEffects> {
            u.chunks(q.max(1)).map(|c| SubjectEffects { u: c.to_vec() }).collect()
        };
        let fixed_assoc = self.fixed_association;
        for g in 0..2 {
            if g == 1 && self.intercept.is_none() || g == 0 && fixed_assoc {
                continue;
            }
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let step = self.group_log_step[g].exp() * z;
            let mut x_new = self.x.clone();
            let mut u_new = self.u.clone();
            let log_jac = if g == 0 { self.rescaled(step, &mut x_new, &mut u_new) } else {
                self.translated(step, &mut x_new);
                0.0
            };
            let q = self.q;
            let n = self.n;
            let (cur, new) = if q == 0 {
                let e = vec![SubjectEffects::default(); n];
                (self.p.log_density(&self.x, &e), self.p.log_density(&x_new, &e))
            } else {
                (self.p.log_density(&self.x, &effects(&self.u, q)), self.p.log_density(&x_new, &effects(&u_new, q)))
            };
            let log_ratio = new - cur + log_jac;
            let accept = log_ratio.is_finite() && self.rng.random::<f64>().ln() < log_ratio;
            if accept {
                self.x = x_new;
                self.u = u_new;
                self.draw = self.layout.decode(&self.x);
                if let Some(re) = EffectsDensity::new(&self.draw) {
                    self.re = re;
                }
                self.refresh();
            }
            if iter < burnin {
                let alpha = if log_ratio.is_finite() { log_ratio.min(0.0).exp() } else { 0.0 };
                self.group_log_step[g] += adaptation_gain(iter) * (alpha - TARGET_ACCEPTANCE);
            } else {
                self.group_proposed[g] += 1;
                self.group_accepted[g] += u64::from(accept);
            }
        }
    }

    fn iterate(&mut self, iter: usize, burnin: usize, interval: usize) {
        for k in 0..self.k {
            if self.p.kinds[k] == OutcomeKind::Continuous {
                self.gibbs_continuous(k);
            }
        }
        for b in 0..self.blocks.len() {
            let reps = match self.blocks[b].kind {
                BlockKind::Outcome(_) | BlockKind::Zeta => 1,
                BlockKind::Beta => BETA_UPDATES,
                BlockKind::Survival => SURVIVAL_UPDATES,
                BlockKind::Covariance => continue,
            };
            for _ in 0..reps {
                self.metropolis_block(b, iter, burnin);
            }
            if self.blocks[b].kind == BlockKind::Zeta {
                self.gibbs_smoothing(self.layout.zeta.clone(), self.layout.log_sigma_zeta);
            }
            if self.blocks[b].kind == BlockKind::Survival {
                self.gibbs_smoothing(self.layout.xi.clone(), self.layout.log_sigma_xi);
                let s = self.draw.clone();
                let total = self.evaluate(&s, false, true);
                if total.is_finite() {
                    std::mem::swap(&mut self.ll_surv, &mut self.scratch_surv);
                }
            }
        }
        self.update_effects(iter, burnin);
        if let Some(b) = self.blocks.iter().position(|b| b.kind == BlockKind::Covariance) {
            for _ in 0..COVARIANCE_UPDATES {
                self.metropolis_block(b, iter, burnin);
            }
        }
        self.shift_moves(iter, burnin);
        for _ in 0..GROUP_UPDATES {
            self.group_moves(iter, burnin);
        }
        if iter < burnin && iter >= burnin / 4 && (iter + 1) % interval == 0 {
            for b in &mut self.blocks {
                b.proposal.relearn();
            }
        }
    }

    fn run(mut self, cfg: &ChainConfig) -> ChainOutput {
        let mut draws = Vec::with_capacity(cfg.draws_per_chain());
        let mut effects = Vec::new();
        for iter in 0..cfg.n_iter {
            self.iterate(iter, cfg.n_burnin, cfg.adapt_interval);
            if iter >= cfg.n_burnin && (iter - cfg.n_burnin) % cfg.thin == 0 {
                draws.push(self.layout.decode(&self.x));
                if cfg.keep_subject_effects {
                    effects.push(self.u.clone());
                }
            }
        }
        let mut acceptance: Vec<(String, u64, u64)> =
            self.blocks.iter().map(|b| (b.name.clone(), b.proposal.accepted, b.proposal.proposed)).collect();
        if self.q > 0 {
            acceptance.push(("effects".into(), self.u_accepted, self.u_proposed));
        }
        if !self.shift_pairs.is_empty() && !self.survival_uses_trait {
            acceptance.push(("shift".into(), self.shift_accepted, self.shift_proposed));
        }
        for (g, name) in ["rescale", "translate"].iter().enumerate() {
            if self.group_proposed[g] > 0 {
                acceptance.push((name.to_string(), self.group_accepted[g], self.group_proposed[g]));
            }
        }
        ChainOutput { draws, effects, acceptance }
    }
}

/// Fits the joint model by running independent chains in parallel.
pub fn fit(dataset: &Dataset, spec: &ModelSpec, priors: &PriorSpec, cfg: &ChainConfig) -> Result<PosteriorArchive> {
    cfg.validate(spec)?;
    let with_visits = dataset.subjects.iter().filter(|s| !s.visits.is_empty()).count();
    if dataset.len() < 2 || with_visits < 2 {
        return data("fitting needs at least two subjects with at least one visit");
    }
    let problem = Problem::new(spec, priors, dataset)?;
    let anchor = spec.anchor_index();
    if !dataset.subjects.iter().flat_map(|s| &s.visits).any(|v| v.values[anchor].is_some()) {
        return config(format!("no observations of the anchor outcome `{}`", spec.outcomes[anchor].name));
    }
    let mut warnings = Vec::new();
    if dataset.subjects.iter().all(|s| !s.event) {
        warnings.push("all subjects are censored; the survival submodel is informed by priors only".to_string());
        log::warn!("{}", warnings[0]);
    }

    let outputs: Vec<ChainOutput> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            log::info!("chain {} started", c + 1);
            let out = Chain::new(&problem, cfg, c).run(cfg);
            log::info!("chain {} finished", c + 1);
            out
        })
        .collect();

    let per_chain = cfg.draws_per_chain();
    let mut draws = Vec::with_capacity(per_chain * cfg.n_chains);
    let mut effects = Vec::new();
    let mut acc: Vec<(String, u64, u64)> = Vec::new();
    for out in outputs {
        draws.extend(out.draws);
        effects.extend(out.effects);
        for (name, a, p) in out.acceptance {
            match acc.iter_mut().find(|(n, _, _)| *n == name) {
                Some(e) => {
                    e.1 += a;
                    e.2 += p;
                }
                None => acc.push((name, a, p)),
            }
        }
    }

    let names = ParameterDraw::column_names(spec);
    let cols: Vec<Vec<f64>> = draws.iter().map(|d| d.to_columns(spec)).collect();
    let mut rhat = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = cols.chunks(per_chain).map(|c| c.iter().map(|row| row[j]).collect()).collect();
        let r = gelman_rubin(&chains);
        if !r.is_nan() {
            rhat.push((name.clone(), r));
        }
    }
    let acceptance = acc.into_iter().filter(|(_, _, p)| *p > 0).map(|(n, a, p)| (n, a as f64 / p as f64)).collect();
    let diagnostics = Diagnostics { rhat, acceptance, warnings };
    log::info!("max R-hat {:.4}", diagnostics.max_rhat());

    Ok(PosteriorArchive {
        spec: spec.clone(),
        priors: priors.clone(),
        config: cfg.clone(),
        draws,
        draws_per_chain: per_chain,
        subject_ids: dataset.subjects.iter().map(|s| s.id.clone()).collect(),
        subject_effects: effects,
        diagnostics,
    })
}
