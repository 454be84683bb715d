use serde::{Deserialize, Serialize};

/// Classical (non-split) potential scale reduction factor.
///
/// With `m` chains of length `n`, chain means `x̄ⱼ`, chain variances `sⱼ²`:
/// `W = mean(sⱼ²)`, `B = n/(m-1) Σ (x̄ⱼ - x̄)²`,
/// `V = (n-1)/n · W + B/n` and `R̂ = sqrt(V / W)`.
///
/// Returns `+∞` when every chain is constant but the chains disagree, and
/// `NaN` when the parameter is constant across all chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.first().map_or(0, Vec::len);
    if m < 2 || n < 2 || chains.iter().any(|c| c.len() != n) {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf / (m - 1) as f64 * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if w == 0.0 {
        return if b > 0.0 { f64::INFINITY } else { f64::NAN };
    }
    let v = (nf - 1.0) / nf * w + b / nf;
    (v / w).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(column, R̂)` for every non-constant population parameter.
    #[serde(with = "infinite_as_null")]
    pub rhat: Vec<(String, f64)>,
    /// Post-burn-in acceptance rate of each Metropolis block.
    pub acceptance: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().map(|(_, r)| *r).fold(f64::NAN, f64::max)
    }

    pub fn acceptance_range(&self) -> (f64, f64) {
        let rates = self.acceptance.iter().map(|(_, a)| *a);
        (rates.clone().fold(f64::NAN, f64::min), rates.fold(f64::NAN, f64::max))
    }
}

/// JSON has no infinity; an infinite R̂ is written as `null`.
mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[(String, f64)], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|(n, x)| (n, x.is_finite().then_some(*x))).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, f64)>, D::Error> {
        let v = Vec::<(String, Option<f64>)>::deserialize(d)?;
        Ok(v.into_iter().map(|(n, x)| (n, x.unwrap_or(f64::INFINITY))).collect())
    }
}
