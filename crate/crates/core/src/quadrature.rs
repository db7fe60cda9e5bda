//! Gauss–Hermite rules and bivariate normal expectations in log space.
//!
//! Two tensor-product schemes are available. [`QuadratureScheme::Centered`]
//! moves the nodes onto the random-effects distribution through the Cholesky
//! factor, so a rule with `m` nodes integrates polynomials of per-coordinate
//! degree `2m - 1` against the normal density exactly.
//! [`QuadratureScheme::FixedGrid`] keeps the nodes at their standard
//! locations on the link scale, reweights them by `exp(z^2)` and multiplies
//! the integrand by the bivariate normal density explicitly. The fixed grid
//! does not move with the parameters, which makes the per-study binomial
//! kernel a constant that can be cached across likelihood evaluations.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 100;
pub const DEFAULT_NODES: usize = 21;

/// Gauss–Hermite rule for the kernel `exp(-z^2)` (physicists' convention).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫ f(z) exp(-z²) dz.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Build an `m`-node rule by Golub–Welsch, with Newton-polished nodes.
pub fn gauss_hermite_rule(m: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_NODES).contains(&m) {
        return Err(Error::Parameter(format!(
            "Gauss-Hermite node count must be in 1..={MAX_NODES}, got {m}"
        )));
    }
    // Jacobi matrix of the Hermite recurrence.
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    let mut weights = Vec::with_capacity(m);
    for z in nodes.iter_mut() {
        for _ in 0..6 {
            let (q, dq, _) = orthonormal_hermite(m, *z);
            let step = q / dq;
            *z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, _, sum_sq) = orthonormal_hermite(m, *z);
        weights.push(1.0 / sum_sq);
    }
    // Enforce exact symmetry.
    for j in 0..m / 2 {
        let k = m - 1 - j;
        let z = 0.5 * (nodes[k] - nodes[j]);
        let w = 0.5 * (weights[j] + weights[k]);
        nodes[j] = -z;
        nodes[k] = z;
        weights[j] = w;
        weights[k] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Orthonormal Hermite recurrence at `x`: returns `(q_m, q_m', Σ_{k<m} q_k²)`.
fn orthonormal_hermite(m: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..m {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    // q_m' = sqrt(2m) q_{m-1}
    (cur, (2.0 * m as f64).sqrt() * prev, sum_sq)
}

/// Bivariate normal distribution of the link-scale random effects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateNormalSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl BivariateNormalSpec {
    pub fn new(mean: [f64; 2], var_eta: f64, var_xi: f64, rho: f64) -> Self {
        let c = rho * (var_eta * var_xi).sqrt();
        Self {
            mean,
            cov: [[var_eta, c], [c, var_xi]],
        }
    }

    /// Lower Cholesky factor `[l11, l21, l22]`.
    pub fn cholesky(&self) -> Result<[f64; 3]> {
        let [[a, b], [b2, d]] = self.cov;
        if !(a > 0.0) || !a.is_finite() || (b - b2).abs() > 1e-12 * (a.abs() + d.abs()) {
            return Err(Error::NotPositiveDefinite(format!("{:?}", self.cov)));
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let s = d - l21 * l21;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("{:?}", self.cov)));
        }
        Ok([l11, l21, s.sqrt()])
    }

    /// log φ₂(x; mean, cov).
    pub fn log_density(&self, x: [f64; 2]) -> Result<f64> {
        let [l11, l21, l22] = self.cholesky()?;
        Ok(log_density_chol(x, self.mean, [l11, l21, l22]))
    }
}

fn log_density_chol(x: [f64; 2], mean: [f64; 2], l: [f64; 3]) -> f64 {
    let u = (x[0] - mean[0]) / l[0];
    let v = (x[1] - mean[1] - l[1] * u) / l[2];
    -(2.0 * PI).ln() - (l[0] * l[2]).ln() - 0.5 * (u * u + v * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureScheme {
    /// Nodes at `μ + √2·L·z` with weights `w_j w_k / π`.
    Centered,
    /// Nodes at the raw `(z_j, z_k)` with weights `w_j w_k exp(z_j² + z_k²)`
    /// and the normal density evaluated explicitly.
    #[default]
    FixedGrid,
}

impl QuadratureScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Centered => "centered",
            Self::FixedGrid => "fixed-grid",
        }
    }

    /// Evaluation points and log-weights that approximate
    /// `∫∫ f(η, ξ) φ₂(η, ξ) dη dξ` by `Σ exp(log_w) f(point)`.
    pub fn log_grid(self, spec: &BivariateNormalSpec, rule: &QuadratureRule) -> Result<LogGrid> {
        let l = spec.cholesky()?;
        let m = rule.len();
        let mut points = Vec::with_capacity(m * m);
        let mut log_weights = Vec::with_capacity(m * m);
        let log_w: Vec<f64> = rule.weights.iter().map(|w| w.ln()).collect();
        match self {
            Self::Centered => {
                for (j, &zj) in rule.nodes.iter().enumerate() {
                    for (k, &zk) in rule.nodes.iter().enumerate() {
                        let a = SQRT_2 * zj;
                        let b = SQRT_2 * zk;
                        points.push([spec.mean[0] + l[0] * a, spec.mean[1] + l[1] * a + l[2] * b]);
                        log_weights.push(log_w[j] + log_w[k] - PI.ln());
                    }
                }
            }
            Self::FixedGrid => {
                for (j, &zj) in rule.nodes.iter().enumerate() {
                    for (k, &zk) in rule.nodes.iter().enumerate() {
                        let x = [zj, zk];
                        points.push(x);
                        log_weights.push(
                            log_w[j] + zj * zj + log_w[k] + zk * zk
                                + log_density_chol(x, spec.mean, l),
                        );
                    }
                }
            }
        }
        Ok(LogGrid {
            points,
            log_weights,
        })
    }
}

impl fmt::Display for QuadratureScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuadratureScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(Self::Centered),
            "fixed-grid" => Ok(Self::FixedGrid),
            other => Err(Error::Parameter(format!("unknown quadrature scheme '{other}'"))),
        }
    }
}

/// Tensor-product evaluation points with log-weights.
#[derive(Debug, Clone)]
pub struct LogGrid {
    pub points: Vec<[f64; 2]>,
    pub log_weights: Vec<f64>,
}

impl LogGrid {
    pub fn expectation_log(&self, log_f: impl Fn(f64, f64) -> f64) -> f64 {
        log_sum_exp(
            self.points
                .iter()
                .zip(&self.log_weights)
                .map(|(p, lw)| lw + log_f(p[0], p[1])),
        )
    }
}

/// `log E[f(η, ξ)]` under `spec`, using the centered tensor rule.
pub fn bivariate_expectation_log(
    log_f: impl Fn(f64, f64) -> f64,
    spec: &BivariateNormalSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    Ok(QuadratureScheme::Centered
        .log_grid(spec, rule)?
        .expectation_log(log_f))
}

/// `E[f(η, ξ)]` for signed integrands, centered rule.
#[cfg(test)]
fn bivariate_expectation_signed(
    f: impl Fn(f64, f64) -> f64,
    spec: &BivariateNormalSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    let grid = QuadratureScheme::Centered.log_grid(spec, rule)?;
    Ok(grid
        .points
        .iter()
        .zip(&grid.log_weights)
        .map(|(p, lw)| lw.exp() * f(p[0], p[1]))
        .sum())
}

/// Stable `log Σ exp(x)`; an all `-∞` input gives `-∞`.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_nan() || max == f64::INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
