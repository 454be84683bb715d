//! Independent oracles and random fixtures shared by the integration suites.
#![allow(dead_code)]

use jointrait_core::model::{Association, DesignSpec, ModelSpec, OutcomeSpec, ParameterDraw, SubjectEffects, Term};
use jointrait_core::sim::{generate_dataset, SimScenario};
use jointrait_core::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];
    fn rule<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WK[7] * fc;
        let mut g = WG[3] * fc;
        for i in 0..7 {
            let s = f(c - h * XK[i]) + f(c + h * XK[i]);
            k += WK[i] * s;
            if i % 2 == 1 {
                g += WG[i / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = rule(f, a, b);
        if err <= tol.max(1e-15 * v.abs()) || depth > 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, tol / 2.0, depth + 1) + recurse(f, m, b, tol / 2.0, depth + 1)
    }
    recurse(f, a, b, tol, 0)
}

/// Exhaustive case/control concordance with ties counted as one half.
pub fn brute_concordance(cases: &[f64], controls: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in cases {
        for k in controls {
            s += if c > k {
                1.0
            } else if c == k {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (cases.len() * controls.len()) as f64
}

pub fn rich_spec(association: Association) -> ModelSpec {
    ModelSpec {
        outcomes: vec![
            OutcomeSpec::continuous("y1"),
            OutcomeSpec::ordinal("y2", 5, true),
            OutcomeSpec::ordinal("y3", 4, false),
            OutcomeSpec::binary("y4"),
        ],
        design: DesignSpec {
            fixed_effects: vec![Term::intercept(), Term::covariate("x1"), Term::time(), Term::covariate_by_time("x1")],
            random_effects: vec![Term::intercept(), Term::time()],
            survival_covariates: vec!["x1".into(), "x2".into()],
            theta_knots: vec![4.0, 9.0],
            hazard_knots: Some(vec![6.0]),
        },
        association,
    }
}

/// A random, valid parameter draw for [`rich_spec`].
pub fn random_draw(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParameterDraw {
    let mut d = ParameterDraw::initial(spec);
    let mut unif = |lo: f64, hi: f64| rng.random_range(lo..hi);
    d.outcomes[0].a = vec![unif(5.0, 20.0)];
    d.outcomes[0].b = unif(1.0, 8.0);
    d.outcomes[0].sigma_eps = Some(unif(1.0, 5.0));
    let mut a = vec![0.0];
    for _ in 1..4 {
        a.push(a.last().unwrap() + unif(0.3, 2.0));
    }
    d.outcomes[1].a = a;
    let mut a = vec![unif(-2.0, 1.0)];
    for _ in 1..3 {
        a.push(a.last().unwrap() + unif(0.3, 2.0));
    }
    d.outcomes[2].a = a;
    d.outcomes[2].b = unif(0.5, 2.0);
    d.outcomes[3].a = vec![unif(-1.0, 1.0)];
    d.outcomes[3].b = unif(0.5, 2.0);
    d.beta = vec![unif(-1.5, 0.5), unif(-0.5, 0.5), unif(-0.2, 0.6), unif(-0.3, 0.3)];
    d.sigma_u = vec![unif(0.5, 1.5), unif(0.05, 0.3)];
    d.rho_u = vec![unif(-0.6, 0.6)];
    d.zeta = vec![unif(-0.2, 0.2), unif(-0.2, 0.2)];
    d.sigma_zeta = unif(0.3, 2.0);
    d.gamma = vec![unif(-0.5, 0.5), unif(-0.05, 0.0)];
    d.assoc = d.assoc.iter().map(|_| unif(-1.0, 1.0)).collect();
    d.eta0 = unif(-3.0, -1.0);
    d.eta1 = unif(-0.05, 0.05);
    d.xi = vec![unif(-0.1, 0.1)];
    d.sigma_xi = unif(0.3, 2.0);
    d
}

/// A random small instance: data generated under the value link from a
/// random draw, then paired with a fresh random draw and random effects.
pub fn random_instance(
    seed: u64,
    association: Association,
    n: usize,
) -> (ModelSpec, Dataset, ParameterDraw, Vec<SubjectEffects>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen_spec = rich_spec(Association::Value);
    let mut scenario = SimScenario::new(n, seed);
    scenario.truth = random_draw(&gen_spec, &mut rng);
    scenario.spec = gen_spec;
    let (data, _) = generate_dataset(&scenario).expect("scenario is valid");
    let spec = rich_spec(association);
    let draw = random_draw(&spec, &mut rng);
    let effects = (0..n)
        .map(|_| SubjectEffects { u: vec![rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)] })
        .collect();
    (spec, data, draw, effects)
}

/// An archive holding exactly `draws`, as a single chain.
pub fn archive_of(spec: &ModelSpec, draws: Vec<ParameterDraw>) -> jointrait_core::PosteriorArchive {
    jointrait_core::PosteriorArchive {
        spec: spec.clone(),
        priors: Default::default(),
        config: Default::default(),
        draws_per_chain: draws.len(),
        draws,
        subject_ids: vec![],
        subject_effects: vec![],
        diagnostics: Default::default(),
    }
}

/// A short fit of a small simulated dataset.
pub fn small_fit(n: usize, seed: u64) -> (Dataset, jointrait_core::PosteriorArchive) {
    let scenario = SimScenario::new(n, seed);
    let (data, _) = generate_dataset(&scenario).expect("scenario is valid");
    let cfg = jointrait_core::ChainConfig { n_iter: 300, n_burnin: 150, seed, ..Default::default() };
    let archive = jointrait_core::fit(&data, &scenario.spec, &Default::default(), &cfg).expect("fit succeeds");
    (data, archive)
}
