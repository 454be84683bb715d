use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{data, Result};
use crate::model::spec::{ModelSpec, OutcomeKind, OutcomeSpec};

/// Outcome values recorded at one visit, aligned with `ModelSpec::outcomes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub time: f64,
    pub values: Vec<Option<f64>>,
}

/// One subject's covariates, visit history and (possibly censored) event time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub covariates: BTreeMap<String, f64>,
    pub visits: Vec<Visit>,
    pub observed_time: f64,
    pub event: bool,
}

pub(crate) fn check_value(outcome: &OutcomeSpec, v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        return Err(format!("non-finite value for `{}`", outcome.name));
    }
    match outcome.kind {
        OutcomeKind::Continuous => Ok(()),
        OutcomeKind::Binary => {
            if v == 0.0 || v == 1.0 {
                Ok(())
            } else {
                Err(format!("binary outcome `{}` must be 0 or 1, got {v}", outcome.name))
            }
        }
        OutcomeKind::Ordinal => {
            let n = outcome.n_categories.unwrap_or(0) as f64;
            if v.fract() == 0.0 && v >= 1.0 && v <= n {
                Ok(())
            } else {
                Err(format!("ordinal outcome `{}` must be an integer in 1..={n}, got {v}", outcome.name))
            }
        }
    }
}

impl SubjectRecord {
    /// Checks the record against the model: sorted visits inside follow-up,
    /// valid outcome values and the covariates the design needs.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let id = &self.id;
        if !(self.observed_time.is_finite() && self.observed_time > 0.0) {
            return data(format!("subject `{id}`: observed time must be positive, got {}", self.observed_time));
        }
        for (j, v) in self.visits.iter().enumerate() {
            if !(v.time.is_finite() && v.time >= 0.0) {
                return data(format!("subject `{id}` visit {j}: time must be >= 0"));
            }
            if j > 0 && v.time <= self.visits[j - 1].time {
                return data(format!("subject `{id}` visit {j}: visit times must be strictly increasing"));
            }
            if v.time > self.observed_time {
                return data(format!(
                    "subject `{id}` visit {j}: time {} is after the observed time {}",
                    v.time, self.observed_time
                ));
            }
            if v.values.len() != spec.outcomes.len() {
                return data(format!("subject `{id}` visit {j}: expected {} outcome slots", spec.outcomes.len()));
            }
            for (o, value) in spec.outcomes.iter().zip(&v.values) {
                if let Some(x) = value {
                    check_value(o, *x).map_err(|m| crate::Error::Data(format!("subject `{id}` visit {j}: {m}")))?;
                }
            }
        }
        for name in spec.design.covariate_names() {
            match self.covariates.get(&name) {
                Some(x) if x.is_finite() => {}
                Some(_) => return data(format!("subject `{id}`: covariate `{name}` is not finite")),
                None => {
                    return Err(crate::Error::MissingCovariate { subject: id.clone(), covariate: name })
                }
            }
        }
        Ok(())
    }

    /// The record truncated to visits at or before `t`, still event-free at `t`.
    pub fn history_until(&self, t: f64) -> SubjectRecord {
        SubjectRecord {
            id: self.id.clone(),
            covariates: self.covariates.clone(),
            visits: self.visits.iter().filter(|v| v.time <= t).cloned().collect(),
            observed_time: t,
            event: false,
        }
    }

    pub fn n_observations(&self) -> usize {
        self.visits.iter().map(|v| v.values.iter().flatten().count()).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Self {
        Self { subjects }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.subjects {
            if !ids.insert(s.id.as_str()) {
                return data(format!("duplicate subject id `{}`", s.id));
            }
            s.validate(spec)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn max_time(&self) -> f64 {
        self.subjects.iter().map(|s| s.observed_time).fold(0.0, f64::max)
    }
}
