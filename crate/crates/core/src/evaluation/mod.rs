//! Censoring-aware accuracy of predicted conditional risks: time-dependent
//! sensitivity, specificity and AUC with kernel-weighted Kaplan–Meier weights,
//! and the dynamic Brier score.

use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};

/// A subject's predicted risk `π̂(t'|t)` and observed follow-up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub risk: f64,
    pub time: f64,
    pub event: bool,
}

/// Which Kaplan–Meier curve supplies the Brier score weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrierWeights {
    /// Survival of the censoring time (inverse probability of censoring).
    #[default]
    Censoring,
    /// Survival of the event time.
    Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub landmark: f64,
    pub horizon: f64,
    /// Half-width of the uniform kernel on the risk scale.
    pub bandwidth: f64,
    /// Number of cutpoints reported on the ROC curve.
    pub grid_size: usize,
    pub brier_weights: BrierWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { landmark: 0.0, horizon: 1.0, bandwidth: 0.10, grid_size: 201, brier_weights: BrierWeights::Censoring }
    }
}

impl EvalConfig {
    pub fn new(landmark: f64, horizon: f64) -> Self {
        Self { landmark, horizon, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.landmark.is_finite() && self.horizon.is_finite() && self.landmark < self.horizon) {
            return config("landmark must be finite and before the horizon");
        }
        if !(self.bandwidth > 0.0) {
            return config("kernel bandwidth must be positive");
        }
        if self.grid_size < 3 || self.grid_size % 2 == 0 {
            return config("cutpoint grid size must be odd and at least 3");
        }
        Ok(())
    }
}

fn validate_records(records: &[EvalRecord]) -> Result<()> {
    for r in records {
        if !(r.risk.is_finite() && (0.0..=1.0).contains(&r.risk)) {
            return data(format!("record `{}`: risk must be in [0, 1], got {}", r.id, r.risk));
        }
        if !(r.time.is_finite() && r.time >= 0.0) {
            return data(format!("record `{}`: time must be finite and >= 0", r.id));
        }
    }
    Ok(())
}

/// Product-limit estimate over event times `s ≤ t̃` from weighted records.
fn product_limit<'a>(items: impl Iterator<Item = (&'a EvalRecord, bool)> + Clone, until: f64) -> f64 {
    let mut times: Vec<f64> = items.clone().filter(|(r, e)| *e && r.time <= until).map(|(r, _)| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    for t in times {
        let (mut died, mut at_risk) = (0.0, 0.0);
        for (r, e) in items.clone() {
            if r.time >= t {
                at_risk += 1.0;
                if e && r.time == t {
                    died += 1.0;
                }
            }
        }
        if at_risk > 0.0 {
            s *= 1.0 - died / at_risk;
        }
    }
    s
}

/// `P(T ≥ t̃ | π̂_i)`: Kaplan–Meier over the other subjects whose predicted
/// risk is within `d` of subject `i`'s. With nobody in the window it falls
/// back to the Kaplan–Meier curve of all other subjects.
pub fn kernel_km(records: &[EvalRecord], target: usize, t_tilde: f64, d: f64) -> f64 {
    let pi = records[target].risk;
    let others = || records.iter().enumerate().filter(move |(j, _)| *j != target).map(|(_, r)| r);
    let in_window = |r: &&EvalRecord| (r.risk - pi).abs() <= d;
    if others().any(|r| in_window(&r)) {
        product_limit(others().filter(in_window).map(|r| (r, r.event)), t_tilde)
    } else {
        product_limit(others().map(|r| (r, r.event)), t_tilde)
    }
}

/// Probability that subject `record` is a case in `(t, t']`: 1 for an observed
/// event there, `1 - S(t')/S(t_i)` when censored there, 0 otherwise. A zero
/// `S(t_i)` gives weight 0.
pub fn censoring_weight(record: &EvalRecord, t: f64, t_prime: f64, surv_horizon: f64, surv_time: f64) -> f64 {
    if !(record.time > t && record.time <= t_prime) {
        return 0.0;
    }
    if record.event {
        1.0
    } else if surv_time > 0.0 {
        (1.0 - surv_horizon / surv_time).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub cutoff: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// `None` when there are no cases or no controls among the subjects at risk.
    pub auc: Option<f64>,
    pub points: Vec<RocPoint>,
    pub case_weight: f64,
    pub control_weight: f64,
    pub warnings: Vec<String>,
}

/// Case weights `Ŵ_i` of the subjects still at risk at the landmark.
fn case_weights(records: &[EvalRecord], cfg: &EvalConfig, warnings: &mut Vec<String>) -> Vec<(usize, f64)> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.time > cfg.landmark)
        .map(|(i, r)| {
            let censored_in_window = !r.event && r.time <= cfg.horizon;
            let w = if censored_in_window {
                let s_time = kernel_km(records, i, r.time, cfg.bandwidth);
                let s_horizon = kernel_km(records, i, cfg.horizon, cfg.bandwidth);
                if s_time <= 0.0 {
                    warnings.push(format!("record `{}`: conditional survival is 0 at its censoring time", r.id));
                }
                censoring_weight(r, cfg.landmark, cfg.horizon, s_horizon, s_time)
            } else {
                censoring_weight(r, cfg.landmark, cfg.horizon, 1.0, 1.0)
            };
            (i, w)
        })
        .collect()
}

/// Weighted time-dependent ROC curve of the subjects at risk at the landmark.
///
/// The AUC integrates the estimated ROC step curve exactly over every
/// observed risk value, which is the weighted Mann–Whitney statistic with
/// ties counted as one half. `points` samples the curve on a uniform cutoff
/// grid over `[0, 1]`.
pub fn roc_auc(records: &[EvalRecord], cfg: &EvalConfig) -> Result<RocResult> {
    cfg.validate()?;
    validate_records(records)?;
    let mut warnings = Vec::new();
    let weights = case_weights(records, cfg, &mut warnings);
    let case_weight: f64 = weights.iter().map(|(_, w)| w).sum();
    let control_weight: f64 = weights.iter().map(|(_, w)| 1.0 - w).sum();

    let sens_spec = |c: f64| {
        let (mut tp, mut tn) = (0.0, 0.0);
        for &(i, w) in &weights {
            if records[i].risk > c {
                tp += w;
            } else {
                tn += 1.0 - w;
            }
        }
        (tp / case_weight, tn / control_weight)
    };

    let defined = case_weight > 0.0 && control_weight > 0.0;
    let points = if defined {
        (0..cfg.grid_size)
            .map(|g| {
                let c = g as f64 / (cfg.grid_size - 1) as f64;
                let (sensitivity, specificity) = sens_spec(c);
                RocPoint { cutoff: c, sensitivity, specificity }
            })
            .collect()
    } else {
        warnings.push("no cases or no controls at risk; AUC is undefined".into());
        Vec::new()
    };

    let auc = defined.then(|| {
        // group by distinct risk, scanning from the highest
        let mut order: Vec<(f64, f64)> = weights.iter().map(|&(i, w)| (records[i].risk, w)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
        let mut k = 0;
        while k < order.len() {
            let (mut dtp, mut dfp) = (0.0, 0.0);
            let r = order[k].0;
            while k < order.len() && order[k].0 == r {
                dtp += order[k].1;
                dfp += 1.0 - order[k].1;
                k += 1;
            }
            area += dfp * (tp + 0.5 * dtp);
            tp += dtp;
            fp += dfp;
        }
        debug_assert!(fp > 0.0);
        area / (case_weight * control_weight)
    });
    Ok(RocResult { auc, points, case_weight, control_weight, warnings })
}

/// Right-continuous Kaplan–Meier curve at `t` for the censoring time
/// (`censoring = true`) or the event time.
pub fn kaplan_meier(records: &[EvalRecord], t: f64, censoring: bool) -> f64 {
    product_limit(records.iter().map(|r| (r, r.event != censoring)), t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrierResult {
    pub bs: f64,
    pub n_at_risk: usize,
    pub warnings: Vec<String>,
}

/// `BS(t,t') = (1/N_t) Σ Ĝ_i (D_i - π̂_i)²` over the `N_t` subjects at risk at
/// the landmark, where `Ĝ_i = S₀(t)/S₀(t')` for subjects event-free at `t'`,
/// `S₀(t)/S₀(t_i)` for observed events in `(t, t']` and 0 for subjects
/// censored in `(t, t']`.
pub fn brier(records: &[EvalRecord], cfg: &EvalConfig) -> Result<BrierResult> {
    cfg.validate()?;
    validate_records(records)?;
    let (t, tp) = (cfg.landmark, cfg.horizon);
    let censoring = cfg.brier_weights == BrierWeights::Censoring;
    let s0 = |x: f64| kaplan_meier(records, x, censoring);
    let at_risk: Vec<&EvalRecord> = records.iter().filter(|r| r.time > t).collect();
    if at_risk.is_empty() {
        return data("no subjects at risk at the landmark");
    }
    let s_t = s0(t);
    let mut warnings = Vec::new();
    let mut total = 0.0;
    for r in &at_risk {
        let (d, denom) = if r.time > tp {
            (0.0, s0(tp))
        } else if r.event {
            (1.0, s0(r.time))
        } else {
            continue;
        };
        if denom <= 0.0 {
            warnings.push(format!("record `{}`: Kaplan-Meier estimate is 0; weight set to 0", r.id));
            continue;
        }
        let g = s_t / denom;
        total += g * (d - r.risk) * (d - r.risk);
    }
    Ok(BrierResult { bs: total / at_risk.len() as f64, n_at_risk: at_risk.len(), warnings })
}

/// Output of the `evaluate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub landmark: f64,
    pub horizon: f64,
    pub auc: Option<f64>,
    pub bs: f64,
    pub n_at_risk: usize,
    pub roc_points: Vec<RocPoint>,
    pub warnings: Vec<String>,
}

pub fn evaluate(records: &[EvalRecord], cfg: &EvalConfig) -> Result<Evaluation> {
    let roc = roc_auc(records, cfg)?;
    let b = brier(records, cfg)?;
    let mut warnings = roc.warnings;
    warnings.extend(b.warnings);
    Ok(Evaluation {
        landmark: cfg.landmark,
        horizon: cfg.horizon,
        auc: roc.auc,
        bs: b.bs,
        n_at_risk: b.n_at_risk,
        roc_points: roc.points,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, risk: f64, time: f64, event: bool) -> EvalRecord {
        EvalRecord { id: id.into(), risk, time, event }
    }

    /// Cases have events inside `(0, 10]`, controls after it.
    fn uncensored(cases: &[f64], controls: &[f64]) -> Vec<EvalRecord> {
        let mut v: Vec<EvalRecord> = cases.iter().map(|&r| rec("case", r, 5.0, true)).collect();
        v.extend(controls.iter().map(|&r| rec("control", r, 15.0, true)));
        v
    }

    fn auc(records: &[EvalRecord]) -> f64 {
        roc_auc(records, &EvalConfig::new(0.0, 10.0)).unwrap().auc.unwrap()
    }

    #[test]
    fn perfect_separation() {
        assert_eq!(auc(&uncensored(&[0.9, 0.7], &[0.4, 0.2])), 1.0);
    }

    #[test]
    fn three_of_four_pairs_concordant() {
        assert_eq!(auc(&uncensored(&[0.9, 0.3], &[0.5, 0.1])), 0.75);
    }

    #[test]
    fn constant_predictions_give_one_half() {
        assert_eq!(auc(&uncensored(&[0.4, 0.4, 0.4], &[0.4, 0.4])), 0.5);
    }

    #[test]
    fn no_controls_is_undefined() {
        let r = roc_auc(&uncensored(&[0.9, 0.3], &[]), &EvalConfig::new(0.0, 10.0)).unwrap();
        assert!(r.auc.is_none() && r.points.is_empty());
    }

    #[test]
    fn roc_grid_has_requested_size() {
        let r = roc_auc(&uncensored(&[0.9, 0.3], &[0.5, 0.1]), &EvalConfig::new(0.0, 10.0)).unwrap();
        assert_eq!(r.points.len(), 201);
        assert_eq!((r.points[0].sensitivity, r.points[0].specificity), (1.0, 0.0));
        assert_eq!((r.points[200].sensitivity, r.points[200].specificity), (0.0, 1.0));
    }

    fn km_fixture() -> Vec<EvalRecord> {
        vec![
            rec("target", 0.50, 9.0, false),
            rec("a", 0.45, 2.0, true),
            rec("b", 0.58, 4.0, false),
            rec("c", 0.55, 5.0, true),
            rec("far", 0.90, 3.0, true),
        ]
    }

    #[test]
    fn kernel_km_uses_the_window() {
        let r = km_fixture();
        // in window: a, b, c; event at 2 with 3 at risk, then at 5 with 1 at risk
        assert!((kernel_km(&r, 0, 4.5, 0.1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(kernel_km(&r, 0, 6.0, 0.1), 0.0);
    }

    #[test]
    fn wide_kernel_is_leave_one_out_km() {
        let r = km_fixture();
        // events at 2 (4 at risk) and 3 (3 at risk)
        assert!((kernel_km(&r, 0, 4.5, 1.0) - 0.75 * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_km_before_any_event_is_one() {
        assert_eq!(kernel_km(&km_fixture(), 0, 1.0, 0.1), 1.0);
    }

    #[test]
    fn empty_window_falls_back_to_all_others() {
        let r = km_fixture();
        assert_eq!(kernel_km(&r, 4, 4.5, 0.01), kernel_km(&r, 4, 4.5, 1.0));
    }

    #[test]
    fn censoring_weights() {
        assert_eq!(censoring_weight(&rec("e", 0.2, 5.0, true), 3.0, 12.0, 0.1, 0.2), 1.0);
        assert_eq!(censoring_weight(&rec("early", 0.2, 2.0, true), 3.0, 12.0, 1.0, 1.0), 0.0);
        assert_eq!(censoring_weight(&rec("late", 0.2, 13.0, false), 3.0, 12.0, 1.0, 1.0), 0.0);
        let w = censoring_weight(&rec("c", 0.2, 5.0, false), 3.0, 12.0, 0.8, 1.0);
        assert!((w - 0.2).abs() < 1e-15);
        assert_eq!(censoring_weight(&rec("z", 0.2, 5.0, false), 3.0, 12.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn brier_perfect_and_uninformative() {
        let cfg = EvalConfig::new(0.0, 10.0);
        let mut r = vec![rec("a", 1.0, 5.0, true), rec("b", 0.0, 12.0, true), rec("c", 1.0, 7.0, true)];
        assert_eq!(brier(&r, &cfg).unwrap().bs, 0.0);
        for x in &mut r {
            x.risk = 0.5;
        }
        assert_eq!(brier(&r, &cfg).unwrap().bs, 0.25);
    }

    #[test]
    fn brier_mixed_censoring_by_hand() {
        let r = vec![
            rec("A", 0.30, 0.5, true),
            rec("B", 0.75, 2.0, true),
            rec("C", 0.50, 3.0, false),
            rec("D", 0.25, 4.0, true),
            rec("E", 0.50, 6.0, false),
            rec("F", 0.25, 8.0, true),
        ];
        // censoring KM: 3/4 after t=3; five at risk at t=1
        // B: 1·(1-.75)², D: (4/3)(.75)², E: (4/3)(.5)², F: (4/3)(.25)²
        let b = brier(&r, &EvalConfig::new(1.0, 5.0)).unwrap();
        assert_eq!(b.n_at_risk, 5);
        assert!((b.bs - 59.0 / 240.0).abs() < 1e-15, "{}", b.bs);
    }

    #[test]
    fn brier_event_km_switch() {
        let r = vec![rec("B", 0.75, 2.0, true), rec("C", 0.5, 3.0, false), rec("D", 0.25, 5.0, true)];
        let cfg = EvalConfig { brier_weights: BrierWeights::Event, ..EvalConfig::new(1.0, 4.0) };
        // event KM: 2/3 after t=2, so D's weight is 3/2 and B's is 3/2
        let b = brier(&r, &cfg).unwrap();
        assert!((b.bs - (1.5 * 0.0625 + 1.5 * 0.0625) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_checks() {
        assert!(EvalConfig::new(5.0, 5.0).validate().is_err());
        assert!(EvalConfig { grid_size: 200, ..EvalConfig::new(0.0, 1.0) }.validate().is_err());
        assert!(EvalConfig { bandwidth: 0.0, ..EvalConfig::new(0.0, 1.0) }.validate().is_err());
        let bad = vec![rec("x", 1.5, 1.0, true)];
        assert!(roc_auc(&bad, &EvalConfig::new(0.0, 2.0)).is_err());
    }
}
