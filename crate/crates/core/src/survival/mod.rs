//! Hazard evaluation and closed-form cumulative hazard.
//!
//! Because the trait and the log baseline hazard are both piecewise linear in
//! time, the log hazard is linear on every interval between knots and each
//! piece integrates in closed form.

use crate::error::{config, Error, Result, SegmentInfo};
use crate::model::data::SubjectRecord;
use crate::model::latent::LinearDesign;
use crate::model::params::{ParameterDraw, SubjectEffects};
use crate::model::spec::{Association, ModelSpec};

/// `log h(s) = intercept + slope·s` on `[t_lo, t_hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazardSegment {
    pub t_lo: f64,
    pub t_hi: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl HazardSegment {
    fn info(&self) -> SegmentInfo {
        SegmentInfo { t_lo: self.t_lo, t_hi: self.t_hi, intercept: self.intercept, slope: self.slope }
    }

    /// `∫ exp(A + B s) ds` over the segment.
    pub fn integral(&self) -> Result<f64> {
        let (a, b) = (self.intercept, self.slope);
        let len = self.t_hi - self.t_lo;
        let v = if b.abs() < 1e-8 {
            (a + b * 0.5 * (self.t_lo + self.t_hi)).exp() * len
        } else {
            (a + b * self.t_lo).exp() * (b * len).exp_m1() / b
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::HazardOverflow(self.info()))
        }
    }

    /// `(∫ e^{A+Bs} ds, ∫ s e^{A+Bs} ds)`, used for gradients.
    pub(crate) fn moments(&self) -> Result<(f64, f64)> {
        let (a, b) = (self.intercept, self.slope);
        let lo = self.t_lo;
        let len = self.t_hi - lo;
        let x = b * len;
        // E0 = ∫_0^L e^{Br} dr, E1 = ∫_0^L r e^{Br} dr
        let (e0, e1) = if x.abs() < 0.05 {
            let (mut s0, mut s1) = (0.0, 0.0);
            let mut pow_over_fact = 1.0; // x^k / k!
            for k in 0..16 {
                s0 += pow_over_fact / (k + 1) as f64;
                s1 += pow_over_fact / (k + 2) as f64;
                pow_over_fact *= x / (k + 1) as f64;
            }
            (len * s0, len * len * s1)
        } else {
            let e0 = x.exp_m1() / b;
            (e0, (len * x.exp() - e0) / b)
        };
        let scale = (a + b * lo).exp();
        let (m0, m1) = (scale * e0, scale * (lo * e0 + e1));
        if m0.is_finite() && m1.is_finite() {
            Ok((m0, m1))
        } else {
            Err(Error::HazardOverflow(self.info()))
        }
    }
}

/// Everything needed to evaluate one subject's log hazard under one draw.
#[derive(Clone, Debug)]
pub struct HazardContext<'a> {
    /// `η₀ + Wγ`
    pub base: f64,
    pub eta1: f64,
    pub xi: &'a [f64],
    pub hazard_knots: &'a [f64],
    /// Parametric trait line `c0 + c1·t`.
    pub c0: f64,
    pub c1: f64,
    pub zeta: &'a [f64],
    pub theta_knots: &'a [f64],
    pub link: Link,
    pub assoc: &'a [f64],
}

/// How the trait enters the log hazard.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Link {
    Value(f64),
    ValueSlope(f64, f64),
    /// `ν·u`, already evaluated.
    Constant(f64),
}

impl<'a> HazardContext<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        lin: &LinearDesign,
        draw: &'a ParameterDraw,
        u: &[f64],
    ) -> Result<Self> {
        if draw.assoc.len() != spec.assoc_dim() {
            return config(format!(
                "association needs {} coefficient(s), draw has {}",
                spec.assoc_dim(),
                draw.assoc.len()
            ));
        }
        let link = match spec.association {
            Association::Value => Link::Value(draw.assoc[0]),
            Association::ValueSlope => Link::ValueSlope(draw.assoc[0], draw.assoc[1]),
            Association::RandomEffects => Link::Constant(draw.assoc.iter().zip(u).map(|(n, x)| n * x).sum()),
        };
        let (c0, c1) = lin.theta_line(&draw.beta, u);
        Ok(Self {
            base: draw.eta0 + lin.w_gamma(&draw.gamma),
            eta1: draw.eta1,
            xi: &draw.xi,
            hazard_knots: spec.design.hazard_knots(),
            c0,
            c1,
            zeta: &draw.zeta,
            theta_knots: &spec.design.theta_knots,
            link,
            assoc: &draw.assoc,
        })
    }

    /// Trait line `(TA, TB)` with `θ(s) = TA + TB·s` on the piece containing `s`
    /// (knots at exactly `s` are treated as not yet active).
    #[inline]
    fn theta_piece(&self, s: f64) -> (f64, f64) {
        let (mut ta, mut tb) = (self.c0, self.c1);
        for (k, z) in self.theta_knots.iter().zip(self.zeta) {
            if s > *k {
                ta -= z * k;
                tb += z;
            }
        }
        (ta, tb)
    }

    /// Log-hazard line `(A, B)` on the piece containing `s`.
    #[inline]
    pub fn piece(&self, s: f64) -> (f64, f64) {
        let (mut a, mut b) = (self.base, self.eta1);
        for (k, x) in self.hazard_knots.iter().zip(self.xi) {
            if s > *k {
                a -= x * k;
                b += x;
            }
        }
        match self.link {
            Link::Value(nu) => {
                let (ta, tb) = self.theta_piece(s);
                a += nu * ta;
                b += nu * tb;
            }
            Link::ValueSlope(n1, n2) => {
                let (ta, tb) = self.theta_piece(s);
                a += n1 * ta + n2 * tb;
                b += n1 * tb;
            }
            Link::Constant(c) => a += c,
        }
        (a, b)
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        let (a, b) = self.piece(t);
        a + b * t
    }

    /// Pieces covering `[from, to]`, split at every knot strictly inside.
    pub fn segments_between(&self, from: f64, to: f64) -> Vec<HazardSegment> {
        let mut cuts: Vec<f64> = self
            .theta_knots
            .iter()
            .chain(self.hazard_knots)
            .copied()
            .filter(|k| *k > from && *k < to)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut out = Vec::with_capacity(cuts.len() + 1);
        let mut lo = from;
        for hi in cuts.into_iter().chain(std::iter::once(to)) {
            if hi > lo {
                let (a, b) = self.piece(0.5 * (lo + hi));
                out.push(HazardSegment { t_lo: lo, t_hi: hi, intercept: a, slope: b });
            }
            lo = hi;
        }
        out
    }

    pub fn segments(&self, upto: f64) -> Vec<HazardSegment> {
        self.segments_between(0.0, upto)
    }

    /// Cumulative hazard over `[from, to]`.
    pub fn cumulative_between(&self, from: f64, to: f64) -> Result<f64> {
        cumulative_hazard(&self.segments_between(from, to))
    }

    /// `δ log h(t) - H(t)`.
    pub fn loglik(&self, time: f64, event: bool) -> Result<f64> {
        let h = cumulative_hazard(&self.segments(time))?;
        Ok(if event { self.log_hazard(time) - h } else { -h })
    }
}

pub fn cumulative_hazard(segments: &[HazardSegment]) -> Result<f64> {
    segments.iter().map(HazardSegment::integral).sum()
}

pub fn log_hazard(
    subject: &SubjectRecord,
    t: f64,
    draw: &ParameterDraw,
    effects: &SubjectEffects,
    spec: &ModelSpec,
) -> Result<f64> {
    let lin = LinearDesign::new(&spec.design, subject)?;
    Ok(HazardContext::new(spec, &lin, draw, &effects.u)?.log_hazard(t))
}

pub fn segmentize(
    subject: &SubjectRecord,
    upto: f64,
    draw: &ParameterDraw,
    effects: &SubjectEffects,
    spec: &ModelSpec,
) -> Result<Vec<HazardSegment>> {
    let lin = LinearDesign::new(&spec.design, subject)?;
    Ok(HazardContext::new(spec, &lin, draw, &effects.u)?.segments(upto))
}

/// Event-time log-likelihood `δ log h(t) - H(t)` at the subject's observed time.
pub fn survival_loglik(
    subject: &SubjectRecord,
    draw: &ParameterDraw,
    effects: &SubjectEffects,
    spec: &ModelSpec,
) -> Result<f64> {
    let lin = LinearDesign::new(&spec.design, subject)?;
    HazardContext::new(spec, &lin, draw, &effects.u)?.loglik(subject.observed_time, subject.event)
}

/// Partial derivatives of the survival log-likelihood.
///
/// `d_c0`/`d_c1` are with respect to the trait line and must be chained
/// through the design rows by the caller; `d_u` holds the direct dependence on
/// the random effects under the random-effects link.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurvivalGradient {
    pub d_base: f64,
    pub d_eta1: f64,
    pub d_xi: Vec<f64>,
    pub d_assoc: Vec<f64>,
    pub d_c0: f64,
    pub d_c1: f64,
    pub d_zeta: Vec<f64>,
    pub d_u: Vec<f64>,
}

impl HazardContext<'_> {
    /// Log-likelihood and its gradient; `u` is only read under the
    /// random-effects link.
    pub fn loglik_gradient(&self, time: f64, event: bool, u: &[f64]) -> Result<(f64, SurvivalGradient)> {
        let segs = self.segments(time);
        let mut g = SurvivalGradient {
            d_xi: vec![0.0; self.xi.len()],
            d_zeta: vec![0.0; self.zeta.len()],
            ..Default::default()
        };
        g.d_assoc = match self.link {
            Link::Value(_) => vec![0.0],
            Link::ValueSlope(..) => vec![0.0; 2],
            Link::Constant(_) => vec![0.0; u.len()],
        };
        let mut ll = if event { self.log_hazard(time) } else { 0.0 };
        let (mut sum_ga, mut sum_gb) = (0.0, 0.0);
        let last = segs.len().saturating_sub(1);
        for (k, seg) in segs.iter().enumerate() {
            let (m0, m1) = seg.moments()?;
            ll -= m0;
            let mut ga = -m0;
            let mut gb = -m1;
            if event && k == last {
                ga += 1.0;
                gb += time;
            }
            sum_ga += ga;
            sum_gb += gb;
            let mid = 0.5 * (seg.t_lo + seg.t_hi);
            for (r, kn) in self.hazard_knots.iter().enumerate() {
                if mid > *kn {
                    g.d_xi[r] += -kn * ga + gb;
                }
            }
            match self.link {
                Link::Value(nu) => {
                    let (ta, tb) = self.theta_piece(mid);
                    g.d_assoc[0] += ga * ta + gb * tb;
                    for (r, kn) in self.theta_knots.iter().enumerate() {
                        if mid > *kn {
                            g.d_zeta[r] += nu * (-kn * ga + gb);
                        }
                    }
                }
                Link::ValueSlope(n1, n2) => {
                    let (ta, tb) = self.theta_piece(mid);
                    g.d_assoc[0] += ga * ta + gb * tb;
                    g.d_assoc[1] += ga * tb;
                    for (r, kn) in self.theta_knots.iter().enumerate() {
                        if mid > *kn {
                            g.d_zeta[r] += n1 * (-kn * ga + gb) + n2 * ga;
                        }
                    }
                }
                Link::Constant(_) => {}
            }
        }
        // A segment covering an empty interval never occurs, but an event at
        // time 0 would leave no segment to carry the event term.
        if segs.is_empty() && event {
            sum_ga += 1.0;
        }
        g.d_base = sum_ga;
        g.d_eta1 = sum_gb;
        match self.link {
            Link::Value(nu) => {
                g.d_c0 = nu * sum_ga;
                g.d_c1 = nu * sum_gb;
            }
            Link::ValueSlope(n1, n2) => {
                g.d_c0 = n1 * sum_ga;
                g.d_c1 = n1 * sum_gb + n2 * sum_ga;
            }
            Link::Constant(_) => {
                g.d_u = vec![0.0; u.len()];
                for (j, (nu, x)) in self.assoc.iter().zip(u).enumerate() {
                    g.d_assoc[j] = x * sum_ga;
                    g.d_u[j] = nu * sum_ga;
                }
            }
        }
        Ok((ll, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::{DesignSpec, OutcomeSpec, Term};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn spec(association: Association, theta_knots: Vec<f64>, hazard_knots: Option<Vec<f64>>) -> ModelSpec {
        ModelSpec {
            outcomes: vec![OutcomeSpec::ordinal("h", 4, true)],
            design: DesignSpec {
                fixed_effects: vec![Term::intercept(), Term::covariate("x1"), Term::time(), Term::covariate_by_time("x1")],
                random_effects: vec![Term::intercept(), Term::time()],
                survival_covariates: vec!["x2".into()],
                theta_knots,
                hazard_knots,
            },
            association,
        }
    }

    fn subject(time: f64, event: bool) -> SubjectRecord {
        SubjectRecord {
            id: "s".into(),
            covariates: BTreeMap::from([("x1".into(), 1.0), ("x2".into(), 50.0)]),
            visits: vec![],
            observed_time: time,
            event,
        }
    }

    fn constant(spec: &ModelSpec) -> ParameterDraw {
        let mut d = ParameterDraw::initial(spec);
        d.eta0 = 0.1f64.ln();
        d.beta = vec![-1.0, -0.2, 0.8, -0.2];
        d
    }

    fn random_draw(spec: &ModelSpec, v: &[f64]) -> ParameterDraw {
        let mut d = ParameterDraw::initial(spec);
        let mut it = v.iter().copied().cycle();
        let mut next = |s: f64| it.next().unwrap() * s;
        d.beta = (0..4).map(|_| next(0.5)).collect();
        d.zeta = d.zeta.iter().map(|_| next(0.3)).collect();
        d.xi = d.xi.iter().map(|_| next(0.3)).collect();
        d.gamma = vec![next(0.02)];
        d.assoc = d.assoc.iter().map(|_| next(0.8)).collect();
        d.eta0 = -2.0 + next(0.5);
        d.eta1 = next(0.05);
        d
    }

    #[test]
    fn switched_off_association_gives_baseline() {
        let s = spec(Association::Value, vec![], None);
        let d = constant(&s);
        let e = SubjectEffects { u: vec![0.3, -0.1] };
        for t in [0.0, 1.0, 7.3, 20.0] {
            let lh = log_hazard(&subject(24.0, false), t, &d, &e, &s).unwrap();
            assert!((lh - 0.1f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_effects_under_random_effects_link() {
        let m1 = spec(Association::Value, vec![2.0], None);
        let m3 = spec(Association::RandomEffects, vec![2.0], None);
        let mut d1 = random_draw(&m1, &[0.3, -0.7, 1.1, 0.2]);
        d1.assoc = vec![0.0];
        let mut d3 = d1.clone();
        d3.assoc = vec![0.4, -0.9];
        let e = SubjectEffects::zeros(2);
        for t in [0.5, 2.0, 9.0] {
            let a = log_hazard(&subject(24.0, false), t, &d1, &e, &m1).unwrap();
            let b = log_hazard(&subject(24.0, false), t, &d3, &e, &m3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn slope_link_without_slope_is_value_link() {
        let m1 = spec(Association::Value, vec![2.0, 5.0], None);
        let m2 = spec(Association::ValueSlope, vec![2.0, 5.0], None);
        let d1 = random_draw(&m1, &[0.3, -0.7, 1.1, 0.2, 0.9]);
        let mut d2 = d1.clone();
        d2.assoc = vec![d1.assoc[0], 0.0];
        let e = SubjectEffects { u: vec![0.2, 0.05] };
        for t in [0.5, 2.0, 3.3, 9.0] {
            let a = log_hazard(&subject(24.0, false), t, &d1, &e, &m1).unwrap();
            let b = log_hazard(&subject(24.0, false), t, &d2, &e, &m2).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn segments_split_at_knots_below_horizon() {
        let s = spec(Association::Value, vec![], None);
        let segs = segmentize(&subject(24.0, false), 5.0, &constant(&s), &SubjectEffects::zeros(2), &s).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].t_lo, segs[0].t_hi), (0.0, 5.0));

        let s = spec(Association::Value, vec![3.0, 6.0], None);
        let segs = segmentize(&subject(24.0, false), 5.0, &constant(&s), &SubjectEffects::zeros(2), &s).unwrap();
        let ends: Vec<_> = segs.iter().map(|g| (g.t_lo, g.t_hi)).collect();
        assert_eq!(ends, vec![(0.0, 3.0), (3.0, 5.0)]);
    }

    #[test]
    fn segment_lines_reproduce_log_hazard() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for assoc in [Association::Value, Association::ValueSlope, Association::RandomEffects] {
            let s = spec(assoc, vec![1.2, 3.0, 6.0], Some(vec![2.0, 6.0, 9.0]));
            let d = random_draw(&s, &[0.3, -0.7, 1.1, 0.2, 0.9, -0.4, 0.6]);
            let e = SubjectEffects { u: vec![0.2, 0.05] };
            let subj = subject(12.0, true);
            let segs = segmentize(&subj, 12.0, &d, &e, &s).unwrap();
            for _ in 0..100 {
                let t: f64 = rng.random_range(0.0..12.0);
                let seg = segs.iter().find(|g| g.t_lo <= t && t <= g.t_hi).unwrap();
                let direct = log_hazard(&subj, t, &d, &e, &s).unwrap();
                assert!((seg.intercept + seg.slope * t - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_hazard_rectangle() {
        let seg = HazardSegment { t_lo: 0.0, t_hi: 10.0, intercept: 0.1f64.ln(), slope: 0.0 };
        assert!((cumulative_hazard(&[seg]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_linear_piece() {
        // frozen from adaptive quadrature of 0.1·e^{0.05 s} over [0, 2]
        let seg = HazardSegment { t_lo: 0.0, t_hi: 2.0, intercept: 0.1f64.ln(), slope: 0.05 };
        let h = cumulative_hazard(&[seg]).unwrap();
        assert!((h - 0.210_341_836_151_295_26).abs() < 1e-12);
    }

    #[test]
    fn tiny_slope_branch_is_continuous() {
        let flat = HazardSegment { t_lo: 1.0, t_hi: 4.0, intercept: -1.3, slope: 0.0 };
        let tiny = HazardSegment { slope: 1e-12, ..flat };
        let (a, b) = (flat.integral().unwrap(), tiny.integral().unwrap());
        assert!(((a - b) / a).abs() < 1e-10);
        let near = HazardSegment { slope: 2e-8, ..flat };
        assert!(((near.integral().unwrap() - a) / a).abs() < 1e-7);
    }

    #[test]
    fn overflow_reports_segment() {
        let seg = HazardSegment { t_lo: 0.0, t_hi: 24.0, intercept: 0.0, slope: 100.0 };
        match cumulative_hazard(&[seg]) {
            Err(Error::HazardOverflow(info)) => assert_eq!(info.slope, 100.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn survival_loglik_constant_hazard() {
        let s = spec(Association::Value, vec![], None);
        let d = constant(&s);
        let e = SubjectEffects::zeros(2);
        let ev = survival_loglik(&subject(10.0, true), &d, &e, &s).unwrap();
        assert!((ev - (0.1f64.ln() - 1.0)).abs() < 1e-14);
        let cen = survival_loglik(&subject(10.0, false), &d, &e, &s).unwrap();
        assert!((cen + 1.0).abs() < 1e-14);
    }

    #[test]
    fn moments_match_midpoint_sums() {
        for (a, b) in [(-1.0, 0.3), (0.2, -0.7), (-2.0, 1e-4), (0.0, 0.0)] {
            let seg = HazardSegment { t_lo: 0.5, t_hi: 3.0, intercept: a, slope: b };
            let (m0, m1) = seg.moments().unwrap();
            let n = 200_000;
            let h = 2.5 / n as f64;
            let (mut q0, mut q1) = (0.0, 0.0);
            for i in 0..n {
                let s = 0.5 + (i as f64 + 0.5) * h;
                let f = (a + b * s).exp();
                q0 += f * h;
                q1 += s * f * h;
            }
            assert!((m0 - q0).abs() / q0 < 1e-9, "{a} {b}");
            assert!((m1 - q1).abs() / q1 < 1e-9, "{a} {b}");
            assert!((m0 - seg.integral().unwrap()).abs() / m0 < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn cumulative_hazard_is_additive(
            v in prop::collection::vec(-1.0..1.0f64, 8),
            t1 in 0.1..12.0f64,
            dt in 0.1..12.0f64,
            assoc in prop::sample::select(vec![Association::Value, Association::ValueSlope, Association::RandomEffects]),
        ) {
            let s = spec(assoc, vec![1.2, 3.0, 6.0, 9.0], Some(vec![2.0, 8.0]));
            let d = random_draw(&s, &v);
            let lin = LinearDesign::new(&s.design, &subject(30.0, false)).unwrap();
            let u = [v[0] * 0.5, v[1] * 0.05];
            let ctx = HazardContext::new(&s, &lin, &d, &u).unwrap();
            let t2 = t1 + dt;
            let whole = ctx.cumulative_between(0.0, t2).unwrap();
            let parts = ctx.cumulative_between(0.0, t1).unwrap() + ctx.cumulative_between(t1, t2).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
            prop_assert!(ctx.cumulative_between(0.0, t1).unwrap() <= whole);
        }

        #[test]
        fn no_association_ignores_trait(
            v in prop::collection::vec(-1.0..1.0f64, 8),
            w in prop::collection::vec(-1.0..1.0f64, 6),
        ) {
            let s = spec(Association::Value, vec![3.0, 6.0], Some(vec![4.0]));
            let mut d1 = random_draw(&s, &v);
            d1.assoc = vec![0.0];
            let mut d2 = d1.clone();
            d2.beta = w[..4].to_vec();
            d2.zeta = w[4..6].to_vec();
            d2.sigma_u = vec![3.0, 0.5];
            let subj = subject(11.0, true);
            let a = survival_loglik(&subj, &d1, &SubjectEffects { u: vec![0.0, 0.0] }, &s).unwrap();
            let b = survival_loglik(&subj, &d2, &SubjectEffects { u: vec![w[0], w[1]] }, &s).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
