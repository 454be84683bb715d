//! Shared fixtures for the benchmarks.

use jointrait_core::model::{LinearDesign, ParameterDraw, SubjectEffects};
use jointrait_core::sim::{generate_dataset, true_parameters, SimScenario};
use jointrait_core::{Dataset, ModelSpec};

pub struct Fixture {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub truth: ParameterDraw,
    pub effects: Vec<SubjectEffects>,
}

/// A simulated dataset of `n` subjects with their true random effects.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let scenario = SimScenario::new(n, seed);
    let (data, truth) = generate_dataset(&scenario).expect("default scenario is valid");
    let effects = truth.subjects.iter().map(|s| SubjectEffects { u: s.u.clone() }).collect();
    Fixture { spec: scenario.spec, data, truth: true_parameters(), effects }
}

impl Fixture {
    pub fn design(&self, subject: usize) -> LinearDesign {
        LinearDesign::new(&self.spec.design, &self.data.subjects[subject]).expect("simulated covariates are complete")
    }
}
