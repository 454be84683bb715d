use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::inference::diagnostics::Diagnostics;
use crate::inference::priors::PriorSpec;
use crate::inference::sampler::ChainConfig;
use crate::model::params::{ParameterDraw, SubjectEffects};
use crate::model::spec::ModelSpec;
use crate::stats;

/// A fitted model: retained posterior draws plus everything needed to
/// reproduce and serve them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorArchive {
    pub spec: ModelSpec,
    pub priors: PriorSpec,
    pub config: ChainConfig,
    /// Draws of all chains, chain after chain.
    pub draws: Vec<ParameterDraw>,
    pub draws_per_chain: usize,
    /// Training subjects, in dataset order.
    pub subject_ids: Vec<String>,
    /// Per draw, the training subjects' random effects flattened subject-major;
    /// empty when the fit was configured not to keep them.
    pub subject_effects: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// Posterior summary of one parameter column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

impl PosteriorArchive {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.draws.is_empty() {
            return config("archive holds no draws");
        }
        for d in &self.draws {
            d.validate(&self.spec)?;
        }
        if !self.subject_effects.is_empty() {
            let want = self.subject_ids.len() * self.spec.design.n_random();
            if self.subject_effects.len() != self.draws.len() || self.subject_effects.iter().any(|u| u.len() != want) {
                return config("subject effects do not match the draws");
            }
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        ParameterDraw::column_names(&self.spec)
    }

    /// Draws of one column, one vector per chain.
    pub fn column_chains(&self, index: usize) -> Vec<Vec<f64>> {
        let per = self.draws_per_chain.max(1);
        self.draws
            .chunks(per)
            .map(|chunk| chunk.iter().map(|d| d.to_columns(&self.spec)[index]).collect())
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_names().iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|d| d.to_columns(&self.spec)[i]).collect())
    }

    pub fn summary(&self) -> Vec<ColumnSummary> {
        let names = self.column_names();
        let cols: Vec<Vec<f64>> = self.draws.iter().map(|d| d.to_columns(&self.spec)).collect();
        names
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let mut v: Vec<f64> = cols.iter().map(|c| c[j]).collect();
                v.sort_by(f64::total_cmp);
                ColumnSummary {
                    name,
                    mean: stats::mean(&v),
                    sd: stats::variance(&v).sqrt(),
                    q025: stats::quantile_sorted(&v, 0.025),
                    q500: stats::quantile_sorted(&v, 0.5),
                    q975: stats::quantile_sorted(&v, 0.975),
                }
            })
            .collect()
    }

    /// Random effects of training subject `subject` under draw `m`.
    pub fn subject_effect(&self, m: usize, subject: usize) -> Option<SubjectEffects> {
        let q = self.spec.design.n_random();
        let row = self.subject_effects.get(m)?;
        Some(SubjectEffects { u: row.get(subject * q..(subject + 1) * q)?.to_vec() })
    }
}
