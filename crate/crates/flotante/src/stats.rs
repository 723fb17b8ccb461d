//! Small numeric helpers shared across modules: simple linear regression,
//! entropy terms and weighted medians.

use crate::error::{Error, Result};

/// Ordinary least squares fit of `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope estimate.
    pub slope_se: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Fit a straight line by ordinary least squares.
///
/// Requires at least three points and non-degenerate variance in `x`; the
/// standard error is reported as zero when the residual degrees of freedom
/// vanish (exact two-parameter fits on three collinear points).
pub fn ols(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 points for a line fit, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in points {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(Error::Fit("degenerate regressor variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = (syy - slope * sxy).max(0.0);
    let df = nf - 2.0;
    let slope_se = if df > 0.0 {
        (ss_res / df / sxx).sqrt()
    } else {
        0.0
    };
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        r_squared,
        n,
    })
}

/// `x * log2(x)` with the measure-zero convention `0 log 0 = 0`.
pub fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Weighted median: the smallest value whose cumulative weight reaches half
/// of the total. Items with zero weight are ignored.
pub fn weighted_median(items: &mut [(f64, f64)]) -> Option<f64> {
    let total: f64 = items.iter().map(|(_, w)| *w).sum();
    if total <= 0.0 {
        return None;
    }
    items.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("non-finite value"));
    let half = total / 2.0;
    let mut acc = 0.0;
    for &(value, weight) in items.iter() {
        acc += weight;
        if acc >= half && weight > 0.0 {
            return Some(value);
        }
    }
    items.last().map(|(v, _)| *v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 + 2.0 * i as f64)).collect();
        let fit = ols(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variance_rejected() {
        let pts = vec![(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)];
        assert!(ols(&pts).is_err());
        assert!(ols(&pts[..2]).is_err());
    }

    #[test]
    fn plogp_zero_convention() {
        assert_eq!(plogp(0.0), 0.0);
        assert!((plogp(0.5) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn weighted_median_balances_mass() {
        let mut items = vec![(43.0, 133_462.0), (61.0, 37_326.0), (165.0, 20_448.0)];
        assert_eq!(weighted_median(&mut items), Some(43.0));
        let mut even = vec![(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)];
        assert_eq!(weighted_median(&mut even), Some(2.0));
        let mut empty: Vec<(f64, f64)> = vec![];
        assert_eq!(weighted_median(&mut empty), None);
    }
}
