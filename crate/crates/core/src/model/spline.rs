//! Truncated power basis of degree one.

use crate::error::{config, Result};

pub fn validate_knots(knots: &[f64]) -> Result<()> {
    if knots.iter().any(|k| !k.is_finite()) {
        return config("knots must be finite");
    }
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return config(format!("knots must be strictly increasing, got {knots:?}"));
    }
    Ok(())
}

/// `((t - κ_1)+, …, (t - κ_R)+)`.
pub fn spline_basis(t: f64, knots: &[f64]) -> Result<Vec<f64>> {
    validate_knots(knots)?;
    Ok(knots.iter().map(|&k| hinge(t, k)).collect())
}

#[inline]
pub fn hinge(t: f64, knot: f64) -> f64 {
    if t > knot {
        t - knot
    } else {
        0.0
    }
}

/// `Σ_r coef_r (t - κ_r)+`
#[inline]
pub(crate) fn hinge_sum(t: f64, knots: &[f64], coef: &[f64]) -> f64 {
    knots.iter().zip(coef).map(|(&k, &c)| c * hinge(t, k)).sum()
}

/// Derivative of [`hinge_sum`]: `Σ_r coef_r 1{t > κ_r}`.
#[inline]
pub(crate) fn hinge_slope(t: f64, knots: &[f64], coef: &[f64]) -> f64 {
    knots.iter().zip(coef).filter(|(&k, _)| t > k).map(|(_, &c)| c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const KNOTS: [f64; 7] = [1.2, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0];

    #[test]
    fn all_zero_before_first_knot() {
        assert_eq!(spline_basis(0.0, &KNOTS).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn hinge_values_at_six_months() {
        let v = spline_basis(6.0, &KNOTS).unwrap();
        assert!((v[0] - 4.8).abs() < 1e-15);
        assert_eq!(&v[1..], &[3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_exactly_at_knot() {
        for (r, &k) in KNOTS.iter().enumerate() {
            assert_eq!(spline_basis(k, &KNOTS).unwrap()[r], 0.0);
        }
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(spline_basis(1.0, &[2.0, 1.0]).is_err());
        assert!(spline_basis(1.0, &[1.0, 1.0]).is_err());
    }
}
