//! Wald intervals, pooled accuracy, summary ROC curves and confidence
//! regions derived from a fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::likelihood::AccuracyParams;
use crate::links::{normal_quantile, LinkFunction};

/// χ²₂ quantile at 0.95.
pub const CHI2_2DF_95: f64 = 5.991464547;

/// `estimate ± z · se` with `z` the two-sided normal quantile.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::Parameter(format!("standard error must be positive, got {se}")));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Parameter(format!("confidence level {level} outside [0, 1)")));
    }
    let z = normal_quantile(0.5 + 0.5 * level)?;
    Ok((estimate - z * se, estimate + z * se))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledAccuracy {
    pub sensitivity: f64,
    pub sensitivity_se: f64,
    pub specificity: f64,
    pub specificity_se: f64,
}

/// Pooled accuracy from link-scale means and their standard errors, by the
/// delta method.
pub fn pooled_accuracy_from(
    link: LinkFunction,
    eta_bar: f64,
    se_eta: f64,
    xi_bar: f64,
    se_xi: f64,
) -> Result<PooledAccuracy> {
    Ok(PooledAccuracy {
        sensitivity: link.inverse(eta_bar)?,
        sensitivity_se: se_eta * link.inverse_derivative(eta_bar).abs(),
        specificity: link.inverse(xi_bar)?,
        specificity_se: se_xi * link.inverse_derivative(xi_bar).abs(),
    })
}

/// Pooled accuracy of a fit, using its headline covariance.
pub fn pooled_accuracy(fit: &FitResult) -> Result<PooledAccuracy> {
    let se = fit
        .standard_errors(fit.headline_covariance())
        .ok_or_else(|| Error::NotPositiveDefinite("fit has no covariance".into()))?;
    pooled_accuracy_from(fit.link, fit.estimates[0], se[0], fit.estimates[1], se[1])
}

/// Points `(1 − specificity, sensitivity)` of the regression of η on ξ,
/// sorted by false-positive rate.
pub fn sroc_curve(fit: &FitResult, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let theta = fit.theta().ok_or(Error::DegenerateCurve)?;
    sroc_points(fit.link, &theta, grid)
}

/// [`sroc_curve`] from the link and accuracy parameters alone.
pub fn sroc_points(link: LinkFunction, theta: &AccuracyParams, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !(theta.var_xi > 0.0) {
        return Err(Error::DegenerateCurve);
    }
    let slope = theta.rho * (theta.var_eta / theta.var_xi).sqrt();
    let mut points = grid
        .iter()
        .map(|&c| {
            let xi = link.apply(c)?;
            let eta = theta.eta_bar + slope * (xi - theta.xi_bar);
            Ok((1.0 - c, link.inverse(eta)?))
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(points)
}

/// Evenly spaced specificities on `[lo, hi]`.
pub fn specificity_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn chi2_2df_quantile(level: f64) -> f64 {
    if level == 0.95 {
        CHI2_2DF_95
    } else {
        -2.0 * (1.0 - level).ln()
    }
}

/// Ellipse `center + c·L·(cos t, sin t)` on the link scale, closed by
/// repeating the first point.
pub fn confidence_ellipse(
    center: [f64; 2],
    cov: [[f64; 2]; 2],
    level: f64,
    points: usize,
) -> Result<Vec<[f64; 2]>> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Parameter(format!("confidence level {level} outside [0, 1)")));
    }
    if points < 3 {
        return Err(Error::Parameter("an ellipse needs at least 3 points".into()));
    }
    let [[a, b], [_, d]] = cov;
    if !(a > 0.0) || !(a * d - b * b > 0.0) || !b.is_finite() {
        return Err(Error::NotPositiveDefinite(
            "covariance of the mean transforms".into(),
        ));
    }
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (d - l21 * l21).sqrt();
    let c = chi2_2df_quantile(level).sqrt();
    let mut out: Vec<[f64; 2]> = (0..points)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / points as f64;
            let (s, co) = t.sin_cos();
            [
                center[0] + c * l11 * co,
                center[1] + c * (l21 * co + l22 * s),
            ]
        })
        .collect();
    out.push(out[0]);
    Ok(out)
}

/// Confidence region for the summary point as a closed polyline in
/// `(1 − specificity, sensitivity)`.
pub fn confidence_region(fit: &FitResult, level: f64, points: usize) -> Result<Vec<(f64, f64)>> {
    let cov = fit
        .covariance(fit.headline_covariance())
        .ok_or_else(|| Error::NotPositiveDefinite("fit has no covariance".into()))?;
    let sub = [[cov[0][0], cov[0][1]], [cov[1][0], cov[1][1]]];
    region_points(fit.link, [fit.estimates[0], fit.estimates[1]], sub, level, points)
}

/// [`confidence_region`] from the link-scale means and their covariance.
pub fn region_points(
    link: LinkFunction,
    center: [f64; 2],
    cov: [[f64; 2]; 2],
    level: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    confidence_ellipse(center, cov, level, points)?
        .into_iter()
        .map(|[eta, xi]| Ok((1.0 - link.inverse(xi)?, link.inverse(eta)?)))
        .collect()
}
