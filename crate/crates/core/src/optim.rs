//! Derivative-free and quasi-Newton minimizers, and finite-difference
//! derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptStatus {
    Converged,
    MaxIter,
    Boundary,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub status: OptStatus,
    pub evals: usize,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when max f - min f over the simplex falls below this, scaled by
    /// `min(1, |f_best|)`.
    pub f_tol: f64,
    /// Stop when every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// Evaluation budget per coordinate.
    pub evals_per_dim: usize,
    /// Initial simplex edge along each coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-10,
            x_tol: 1e-8,
            evals_per_dim: 5000,
            initial_step: 0.1,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimize `f` with the Nelder–Mead simplex method. Non-finite values are
/// treated as `+∞`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let k = x0.len();
    let budget = opts.evals_per_dim * k.max(1);
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let f0 = eval(x0);
    if !f0.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..k {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let status = loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[k].1;
        let spread = worst - best;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let f_scale = best.abs().min(1.0);
        if (spread.is_finite() && spread < opts.f_tol * f_scale) || size < opts.x_tol {
            break OptStatus::Converged;
        }
        if evals.get() >= budget {
            break OptStatus::MaxIter;
        }

        let mut centroid = vec![0.0; k];
        for (x, _) in &simplex[..k] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / k as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let worst_x = simplex[k].0.clone();
        let xr = along(REFLECT, &worst_x);
        let fr = eval(&xr);
        if fr < best {
            let xe = along(REFLECT * EXPAND, &worst_x);
            let fe = eval(&xe);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
            continue;
        }
        let accepted = if fr < worst {
            let xc = along(REFLECT * CONTRACT, &worst_x);
            let fc = eval(&xc);
            (fc <= fr).then_some((xc, fc))
        } else {
            let xcc = along(-CONTRACT, &worst_x);
            let fcc = eval(&xcc);
            (fcc < worst).then_some((xcc, fcc))
        };
        match accepted {
            Some(v) => simplex[k] = v,
            None => {
                let best_x = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best_x
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + SHRINK * (v - b))
                        .collect();
                    let fx = eval(&x);
                    *vertex = (x, fx);
                }
            }
        }
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Ok(OptResult {
        x,
        f: fx,
        status,
        evals: evals.get(),
        restarts_used: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Finite-difference step, relative to `max(1, |x_i|)`.
    pub grad_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 1000,
            max_halvings: 50,
            grad_step: 1e-5,
        }
    }
}

/// Minimize `f` by BFGS on the inverse Hessian with a backtracking Armijo
/// line search. `grad` defaults to central differences when `None`.
pub fn bfgs<F>(
    f: F,
    grad: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    x0: &[f64],
    opts: &BfgsOptions,
) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let k = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let gradient = |x: &[f64]| -> Vec<f64> {
        match grad {
            Some(g) => g(x),
            None => numeric_gradient(&eval, x, opts.grad_step),
        }
    };

    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(x.as_slice());
    if !fx.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut g = DVector::from_vec(gradient(x.as_slice()));
    let mut h_inv = DMatrix::<f64>::identity(k, k);
    let identity = DMatrix::<f64>::identity(k, k);

    let mut status = OptStatus::MaxIter;
    for _ in 0..opts.max_iter {
        if g.iter().any(|v| !v.is_finite()) {
            status = OptStatus::Degenerate;
            break;
        }
        if g.amax() < opts.grad_tol {
            status = OptStatus::Converged;
            break;
        }
        let mut d = -&h_inv * &g;
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h_inv = identity.clone();
            d = -g.clone();
            slope = g.dot(&d);
        }

        let mut t = 1.0;
        let mut ft = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            ft = eval((&x + t * &d).as_slice());
            if ft <= fx + 1e-4 * t * slope {
                accepted = true;
                break;
            }
            let curvature = ft - fx - slope * t;
            let interp = if ft.is_finite() && curvature > 0.0 {
                -slope * t * t / (2.0 * curvature)
            } else {
                0.5 * t
            };
            t = interp.clamp(0.1 * t, 0.5 * t);
        }
        if !accepted {
            status = OptStatus::MaxIter;
            break;
        }
        // Quadratic-interpolation refinement of the accepted step.
        let curvature = ft - fx - slope * t;
        if curvature > 0.0 {
            let tq = -slope * t * t / (2.0 * curvature);
            if tq.is_finite() && tq > 0.0 && tq < 4.0 * t && (tq - t).abs() > 1e-12 * t {
                let fq = eval((&x + tq * &d).as_slice());
                if fq < ft {
                    t = tq;
                    ft = fq;
                }
            }
        }

        let s = t * &d;
        let x_new = &x + &s;
        let g_new = DVector::from_vec(gradient(x_new.as_slice()));
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let left = &identity - rho * &s * y.transpose();
            let right = &identity - rho * &y * s.transpose();
            h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
        }
        x = x_new;
        fx = ft;
        g = g_new;
    }
    Ok(OptResult {
        x: x.as_slice().to_vec(),
        f: fx,
        status,
        evals: evals.get(),
        restarts_used: 0,
    })
}

fn step_for(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient with steps `rel * max(1, |x_i|)`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step_for(x[i], rel);
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function: rows are outputs.
pub fn numeric_jacobian(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    rel: f64,
) -> Result<DMatrix<f64>> {
    let mut p = x.to_vec();
    let mut columns = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = step_for(x[i], rel);
        p[i] = x[i] + h;
        let up = f(&p)?;
        p[i] = x[i] - h;
        let down = f(&p)?;
        p[i] = x[i];
        columns.push(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let rows = columns.first().map_or(0, Vec::len);
    let jac = DMatrix::from_fn(rows, x.len(), |r, c| columns[c][r]);
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite score contribution".into()));
    }
    Ok(jac)
}

pub const HESSIAN_STEP: f64 = 1e-4;

/// Central second differences with steps `1e-4 * max(1, |x_i|)`,
/// symmetrized.
pub fn numeric_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Result<DMatrix<f64>> {
    numeric_hessian_with_step(f, x, HESSIAN_STEP)
}

pub fn numeric_hessian_with_step(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    rel: f64,
) -> Result<DMatrix<f64>> {
    let k = x.len();
    let h: Vec<f64> = x.iter().map(|&v| step_for(v, rel)).collect();
    let f0 = f(x);
    let mut p = x.to_vec();
    let at = |p: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(i, d) in moves {
            p[i] = x[i] + d;
        }
        let v = f(p);
        for &(i, _) in moves {
            p[i] = x[i];
        }
        v
    };
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let up = at(&mut p, &[(i, h[i])]);
        let down = at(&mut p, &[(i, -h[i])]);
        hess[(i, i)] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&mut p, &[(i, h[i]), (j, h[j])]);
            let pm = at(&mut p, &[(i, h[i]), (j, -h[j])]);
            let mp = at(&mut p, &[(i, -h[i]), (j, h[j])]);
            let mm = at(&mut p, &[(i, -h[i]), (j, -h[j])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let hess = 0.5 * (&hess + hess.transpose());
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite Hessian entry".into()));
    }
    Ok(hess)
}
