mod common;

use std::collections::BTreeMap;

use jointrait_core::model::{LinearDesign, ParameterDraw, SubjectEffects};
use jointrait_core::predict::{
    draw_risks, predict, predict_risk, predict_trajectory, sample_subject_effects, EffectsSample, PredictionRequest,
    VisitInput,
};
use jointrait_core::sim::{simulation_spec, true_parameters};
use jointrait_core::stats::{ks_two_sample, mean, variance};
use jointrait_core::survival::HazardContext;
use jointrait_core::{Association, ModelSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn covariates() -> BTreeMap<String, f64> {
    BTreeMap::from([("x1".into(), 1.0), ("x2".into(), 55.0)])
}

fn visit(time: f64, y1: f64, y2: f64, y3: f64) -> VisitInput {
    VisitInput { time, outcomes: BTreeMap::from([("y1".into(), y1), ("y2".into(), y2), ("y3".into(), y3)]) }
}

/// Draws around the simulation truth with varying random-effect covariance.
fn varied_draws(n: usize, seed: u64) -> Vec<ParameterDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut d = true_parameters();
            d.sigma_u = vec![rng.random_range(1.0..2.0), rng.random_range(0.1..0.2)];
            d.rho_u = vec![rng.random_range(-0.5..0.7)];
            d
        })
        .collect()
}

#[test]
fn empty_history_at_time_zero_recovers_the_prior() {
    let spec = simulation_spec();
    let draws = varied_draws(2000, 1);
    let archive = common::archive_of(&spec, draws.clone());
    for seed in [1u64, 2, 3] {
        let mut req = PredictionRequest::new(covariates(), vec![], 0.0, vec![3.0]);
        req.seed = seed;
        let s = sample_subject_effects(&req, &archive).unwrap();
        // direct draws u = L z under each draw's covariance
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let direct: Vec<Vec<f64>> = draws
            .iter()
            .map(|d| {
                let l = d.covariance().cholesky().unwrap().l();
                let z = DMatrix::from_fn(2, 1, |_, _| StandardNormal.sample(&mut rng));
                (l * z).iter().copied().collect()
            })
            .collect();
        for r in 0..2 {
            let a: Vec<f64> = s.effects.iter().map(|e| e.u[r]).collect();
            let b: Vec<f64> = direct.iter().map(|u| u[r]).collect();
            let (_, p) = ks_two_sample(&a, &b);
            assert!(p > 0.01, "seed {seed} component {r}: p = {p}");
        }
    }
}

#[test]
fn repeated_visits_sharpen_the_posterior() {
    let spec = simulation_spec();
    let archive = common::archive_of(&spec, vec![true_parameters(); 400]);
    for seed in 0..5u64 {
        let one = vec![visit(0.0, 14.0, 2.0, 3.0)];
        let many: Vec<VisitInput> = (0..4).map(|j| visit(j as f64 * 0.001, 14.0, 2.0, 3.0)).collect();
        let var_u0 = |visits: Vec<VisitInput>| {
            let mut r = PredictionRequest::new(covariates(), visits, 1.0, vec![3.0]);
            r.seed = seed;
            let s = sample_subject_effects(&r, &archive).unwrap();
            variance(&s.effects.iter().map(|e| e.u[0]).collect::<Vec<_>>())
        };
        let (v1, v4) = (var_u0(one), var_u0(many));
        assert!(v4 < v1, "seed {seed}: {v4} >= {v1}");
    }
}

#[test]
fn unassociated_survival_does_not_move_the_effects() {
    let spec = simulation_spec();
    let mut d = true_parameters();
    d.assoc = vec![0.0];
    let archive = common::archive_of(&spec, vec![d; 200]);
    let visits = vec![visit(0.0, 14.0, 2.0, 3.0), visit(3.0, 20.0, 3.0, 3.0)];
    let at = |landmark: f64| {
        sample_subject_effects(&PredictionRequest::new(covariates(), visits.clone(), landmark, vec![20.0]), &archive)
            .unwrap()
    };
    let (a, b) = (at(3.0), at(9.0));
    for (x, y) in a.effects.iter().zip(&b.effects) {
        for (p, q) in x.u.iter().zip(&y.u) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn plug_in_trajectory_mean_matches_the_truth() {
    let spec = simulation_spec();
    let truth = true_parameters();
    let m = 2000;
    let archive = common::archive_of(&spec, vec![truth.clone(); m]);
    let u = vec![0.8, -0.1];
    let sample = EffectsSample { draw_indices: (0..m).collect(), effects: vec![SubjectEffects { u: u.clone() }; m] };
    let mut req = PredictionRequest::new(covariates(), vec![], 6.0, vec![12.0]);
    req.trajectory_times = Some(vec![9.0, 12.0]);
    let band = predict_trajectory(&req, &archive, &sample).unwrap();
    let y1 = &band.outcomes[0];
    let sd = truth.outcomes[0].sigma_eps.unwrap();
    for p in &y1.points {
        // trait from the simulation design: (β0+β1 x1+u0) + (β2+β3 x1+u1) t
        let b = &truth.beta;
        let theta = b[0] + b[1] + u[0] + (b[2] + b[3] + u[1]) * p.time;
        let expected = truth.outcomes[0].a[0] + truth.outcomes[0].b * theta;
        let se = sd / (m as f64).sqrt();
        assert!((p.value.mean - expected).abs() < 2.0 * se + 1e-9, "t={}: {} vs {expected}", p.time, p.value.mean);
    }
}

#[test]
fn per_draw_risk_is_monotone_and_bounded() {
    let spec = simulation_spec();
    let archive = common::archive_of(&spec, varied_draws(100, 4));
    let req = PredictionRequest::new(
        covariates(),
        vec![visit(0.0, 14.0, 2.0, 3.0), visit(3.0, 22.0, 4.0, 4.0)],
        3.0,
        vec![3.0, 6.0, 9.0, 12.0, 18.0, 24.0],
    );
    let s = sample_subject_effects(&req, &archive).unwrap();
    let r = predict_risk(&req, &archive, &s).unwrap();
    assert_eq!(r.per_draw.len(), 100);
    for d in &r.per_draw {
        assert_eq!(d[0], 0.0);
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert!(d.iter().all(|p| (0.0..=1.0).contains(p)));
    }
    assert!(r.points.windows(2).all(|w| w[0].mean <= w[1].mean));
}

/// Random value-link configurations against quadrature of the hazard.
#[test]
fn risk_matches_quadrature() {
    let spec: ModelSpec = common::rich_spec(Association::Value);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let subject = jointrait_core::SubjectRecord {
        id: "q".into(),
        covariates: BTreeMap::from([("x1".into(), 1.0), ("x2".into(), 0.5)]),
        visits: vec![],
        observed_time: 1.0,
        event: false,
    };
    let lin = LinearDesign::new(&spec.design, &subject).unwrap();
    for _ in 0..50 {
        let d = common::random_draw(&spec, &mut rng);
        let u = vec![rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)];
        let t = rng.random_range(0.0..8.0);
        let horizons = [t + 2.0, t + 7.0];
        let risks = draw_risks(&spec, &lin, &d, &u, t, &horizons).unwrap();
        let ctx = HazardContext::new(&spec, &lin, &d, &u).unwrap();
        for (h, r) in horizons.iter().zip(&risks) {
            let cum = common::integrate(&|s| ctx.log_hazard(s).exp(), t, *h, 1e-14);
            assert!((r - (1.0 - (-cum).exp())).abs() < 1e-9);
        }
    }
}

#[test]
fn later_landmark_under_constant_hazard_is_analytic() {
    let spec = simulation_spec();
    let mut d = true_parameters();
    d.assoc = vec![0.0];
    d.gamma = vec![0.0];
    let archive = common::archive_of(&spec, vec![d; 50]);
    let visits = vec![visit(0.0, 14.0, 2.0, 3.0)];
    for landmark in [2.0, 6.0, 10.0] {
        let req = PredictionRequest::new(covariates(), visits.clone(), landmark, vec![12.0, 18.0]);
        let p = predict(&req, &archive).unwrap();
        for pt in &p.risk_curve {
            let exact = 1.0 - (-0.1 * (pt.horizon - landmark)).exp();
            assert!((pt.mean - exact).abs() < 1e-12);
        }
    }
}

#[test]
fn fitted_archive_predictions_are_reproducible() {
    let (data, archive) = common::small_fit(40, 21);
    let s = &data.subjects[0];
    let names: Vec<String> = archive.spec.outcomes.iter().map(|o| o.name.clone()).collect();
    let visits = s
        .visits
        .iter()
        .filter(|v| v.time <= 6.0)
        .map(|v| VisitInput {
            time: v.time,
            outcomes: names.iter().zip(&v.values).filter_map(|(n, x)| x.map(|x| (n.clone(), x))).collect(),
        })
        .collect();
    let mut req = PredictionRequest::new(s.covariates.clone(), visits, 6.0, vec![9.0, 12.0]);
    req.n_draws = Some(100);
    let a = serde_json::to_vec(&predict(&req, &archive).unwrap()).unwrap();
    let b = serde_json::to_vec(&predict(&req, &archive).unwrap()).unwrap();
    assert_eq!(a, b);
    let p = predict(&req, &archive).unwrap();
    assert_eq!(p.n_draws, 100);
    assert!(mean(&p.risk_curve.iter().map(|r| r.mean).collect::<Vec<_>>()).is_finite());
}
