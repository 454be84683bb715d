use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::model::spline::validate_knots;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
    Ordinal,
}

/// Declaration of one longitudinal outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub name: String,
    pub kind: OutcomeKind,
    /// Number of ordered categories, ordinal outcomes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_categories: Option<usize>,
    /// The ordinal outcome whose first threshold is pinned to 0 and loading to 1.
    #[serde(default)]
    pub is_anchor: bool,
}

impl OutcomeSpec {
    pub fn continuous(name: &str) -> Self {
        Self { name: name.into(), kind: OutcomeKind::Continuous, n_categories: None, is_anchor: false }
    }

    pub fn binary(name: &str) -> Self {
        Self { name: name.into(), kind: OutcomeKind::Binary, n_categories: None, is_anchor: false }
    }

    pub fn ordinal(name: &str, n_categories: usize, is_anchor: bool) -> Self {
        Self { name: name.into(), kind: OutcomeKind::Ordinal, n_categories: Some(n_categories), is_anchor }
    }

    /// Length of the intercept/threshold vector `a_k`.
    pub fn n_thresholds(&self) -> usize {
        match self.kind {
            OutcomeKind::Ordinal => self.n_categories.unwrap_or(0).saturating_sub(1),
            _ => 1,
        }
    }
}

/// One column of a design matrix: `covariate × time^[time]`, with a missing
/// covariate standing for the constant 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    #[serde(default)]
    pub time: bool,
}

impl Term {
    pub fn intercept() -> Self {
        Self { covariate: None, time: false }
    }

    pub fn time() -> Self {
        Self { covariate: None, time: true }
    }

    pub fn covariate(name: &str) -> Self {
        Self { covariate: Some(name.into()), time: false }
    }

    pub fn covariate_by_time(name: &str) -> Self {
        Self { covariate: Some(name.into()), time: true }
    }

    pub fn label(&self) -> String {
        match (&self.covariate, self.time) {
            (None, false) => "(Intercept)".into(),
            (None, true) => "time".into(),
            (Some(c), false) => c.clone(),
            (Some(c), true) => format!("{c}:time"),
        }
    }

    /// Covariate multiplier of the term (1 for the constant).
    pub fn multiplier(&self, covariates: &BTreeMap<String, f64>, subject: &str) -> Result<f64> {
        match &self.covariate {
            None => Ok(1.0),
            Some(name) => covariates.get(name).copied().ok_or_else(|| Error::MissingCovariate {
                subject: subject.into(),
                covariate: name.clone(),
            }),
        }
    }
}

/// How the latent trait enters the log-hazard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Association {
    /// `ν θ(t)`
    #[serde(rename = "value", alias = "M1")]
    Value,
    /// `ν₁ θ(t) + ν₂ θ'(t)`
    #[serde(rename = "value_slope", alias = "M2")]
    ValueSlope,
    /// `ν' u`
    #[serde(rename = "random_effects", alias = "M3")]
    RandomEffects,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub fixed_effects: Vec<Term>,
    pub random_effects: Vec<Term>,
    /// Time-independent covariates of the hazard (`W`).
    #[serde(default)]
    pub survival_covariates: Vec<String>,
    #[serde(default)]
    pub theta_knots: Vec<f64>,
    /// Defaults to `theta_knots` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_knots: Option<Vec<f64>>,
}

impl DesignSpec {
    pub fn hazard_knots(&self) -> &[f64] {
        self.hazard_knots.as_deref().unwrap_or(&self.theta_knots)
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed_effects.len()
    }

    pub fn n_random(&self) -> usize {
        self.random_effects.len()
    }

    /// Every covariate name referenced anywhere in the design.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .fixed_effects
            .iter()
            .chain(&self.random_effects)
            .filter_map(|t| t.covariate.clone())
            .chain(self.survival_covariates.iter().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Full declaration of a joint model: outcomes, design and association form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcomes: Vec<OutcomeSpec>,
    pub design: DesignSpec,
    pub association: Association,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return config("model declares no outcomes");
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.outcomes {
            if !seen.insert(o.name.as_str()) {
                return config(format!("duplicate outcome name `{}`", o.name));
            }
            match o.kind {
                OutcomeKind::Ordinal => match o.n_categories {
                    Some(n) if n >= 3 => {}
                    _ => {
                        return config(format!(
                            "ordinal outcome `{}` needs n_categories >= 3 (use kind=binary for two levels)",
                            o.name
                        ))
                    }
                },
                _ => {
                    if o.n_categories.is_some() {
                        return config(format!("n_categories given for non-ordinal outcome `{}`", o.name));
                    }
                    if o.is_anchor {
                        return config(format!("anchor outcome `{}` must be ordinal", o.name));
                    }
                }
            }
        }
        let anchors = self.outcomes.iter().filter(|o| o.is_anchor).count();
        if anchors != 1 {
            return config(format!("exactly one ordinal outcome must be the anchor, found {anchors}"));
        }
        let d = &self.design;
        if d.fixed_effects.is_empty() && d.random_effects.is_empty() {
            return config("design has neither fixed nor random effect terms");
        }
        if d.random_effects.is_empty() {
            return config("design needs at least one random effect term");
        }
        for (what, terms) in [("fixed", &d.fixed_effects), ("random", &d.random_effects)] {
            for (i, t) in terms.iter().enumerate() {
                if terms[..i].contains(t) {
                    return config(format!("duplicate {what} effect term `{}`", t.label()));
                }
            }
        }
        validate_knots(&d.theta_knots)?;
        validate_knots(d.hazard_knots())?;
        if d.theta_knots.iter().chain(d.hazard_knots()).any(|&k| k < 0.0) {
            return config("knots must be non-negative");
        }
        Ok(())
    }

    pub fn anchor_index(&self) -> usize {
        self.outcomes.iter().position(|o| o.is_anchor).expect("validated spec has an anchor")
    }

    pub fn outcome_index(&self, name: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o.name == name)
    }

    /// Dimension of the association parameter for the declared form.
    pub fn assoc_dim(&self) -> usize {
        match self.association {
            Association::Value => 1,
            Association::ValueSlope => 2,
            Association::RandomEffects => self.design.n_random(),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example() -> ModelSpec {
        ModelSpec {
            outcomes: vec![
                OutcomeSpec::continuous("y1"),
                OutcomeSpec::ordinal("y2", 7, true),
                OutcomeSpec::ordinal("y3", 7, false),
            ],
            design: DesignSpec {
                fixed_effects: vec![Term::intercept(), Term::covariate("x1"), Term::time(), Term::covariate_by_time("x1")],
                random_effects: vec![Term::intercept(), Term::time()],
                survival_covariates: vec!["x2".into()],
                theta_knots: vec![],
                hazard_knots: None,
            },
            association: Association::Value,
        }
    }

    #[test]
    fn accepts_simulation_design() {
        example().validate().unwrap();
    }

    #[test]
    fn rejects_missing_or_double_anchor() {
        let mut s = example();
        s.outcomes[1].is_anchor = false;
        assert!(s.validate().is_err());
        s.outcomes[1].is_anchor = true;
        s.outcomes[2].is_anchor = true;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_binary_as_two_level_ordinal() {
        let mut s = example();
        s.outcomes[2].n_categories = Some(2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_non_increasing_knots() {
        let mut s = example();
        s.design.theta_knots = vec![3.0, 3.0];
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_accepts_model_aliases() {
        let json = serde_json::to_string(&example()).unwrap().replace("\"value\"", "\"M2\"");
        let s: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s.association, Association::ValueSlope);
        assert_eq!(s.assoc_dim(), 2);
    }

    #[test]
    fn hazard_knots_default_to_theta_knots() {
        let mut s = example();
        s.design.theta_knots = vec![1.0, 2.0];
        assert_eq!(s.design.hazard_knots(), &[1.0, 2.0]);
        s.design.hazard_knots = Some(vec![5.0]);
        assert_eq!(s.design.hazard_knots(), &[5.0]);
    }
}
