//! Maximum-likelihood fitting with fallbacks, failure classification and
//! covariance estimation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{empirical_accuracy, estimate_prevalences, MetaDataset, Prevalence};
use crate::error::{Error, Result};
use crate::likelihood::{
    loglik_mtm_prevalence, AccuracyParams, LikelihoodSettings, ModelKind, ModelLikelihood,
    PrevalenceParams, UnconstrainedParams, U_MAX,
};
use crate::links::LinkFunction;
use crate::optim::{
    bfgs, nelder_mead, numeric_hessian, numeric_jacobian, BfgsOptions, NelderMeadOptions,
    OptResult, OptStatus,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    NonConvergence,
    BoundaryCorrelation,
    NonPdCovariance,
}

impl FailureReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::NonConvergence => "non-convergence",
            Self::BoundaryCorrelation => "boundary-correlation",
            Self::NonPdCovariance => "non-pd-covariance",
        }
    }
}

/// Natural-scale limits beyond which an estimate counts as on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryThresholds {
    pub rho_max: f64,
    pub sigma_min: f64,
}

impl Default for BoundaryThresholds {
    fn default() -> Self {
        Self {
            rho_max: 0.999,
            sigma_min: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub likelihood: LikelihoodSettings,
    pub seed: u64,
    pub restarts: usize,
    pub jitter: f64,
    pub boundary: BoundaryThresholds,
    pub nelder_mead: NelderMeadOptions,
    pub bfgs: BfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            likelihood: LikelihoodSettings::default(),
            seed: 0,
            restarts: 5,
            jitter: 0.5,
            boundary: BoundaryThresholds::default(),
            nelder_mead: NelderMeadOptions::default(),
            bfgs: BfgsOptions::default(),
        }
    }
}

/// Which covariance estimate a summary should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    Model,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub link: LinkFunction,
    /// Natural-scale estimates, ordered as `model.param_names()`.
    pub estimates: Vec<f64>,
    pub unconstrained: Vec<f64>,
    /// Row-major, natural scale. `None` when it could not be formed.
    pub cov_model: Option<Vec<Vec<f64>>>,
    pub cov_sandwich: Option<Vec<Vec<f64>>>,
    /// Full log-likelihood: with the prevalence part for MTM models, and on
    /// the proportion scale for the approximate model.
    pub loglik: f64,
    pub aic: f64,
    pub prevalences: Option<Vec<Prevalence>>,
    pub failure: Option<FailureReason>,
    pub status: OptStatus,
    pub evals: usize,
    pub restarts_used: usize,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }

    pub fn theta(&self) -> Option<AccuracyParams> {
        match self.estimates.as_slice() {
            &[a, b, c, d, e] => AccuracyParams::new(a, b, c, d, e).ok(),
            _ => None,
        }
    }

    /// Sandwich for the MTM, observed information otherwise.
    pub fn headline_covariance(&self) -> CovarianceKind {
        match self.model {
            ModelKind::Mtm => CovarianceKind::Sandwich,
            ModelKind::Approx | ModelKind::MtmFixed => CovarianceKind::Model,
        }
    }

    pub fn covariance(&self, kind: CovarianceKind) -> Option<&Vec<Vec<f64>>> {
        match kind {
            CovarianceKind::Model => self.cov_model.as_ref(),
            CovarianceKind::Sandwich => self.cov_sandwich.as_ref(),
        }
    }

    pub fn standard_errors(&self, kind: CovarianceKind) -> Option<Vec<f64>> {
        self.covariance(kind)
            .map(|c| (0..c.len()).map(|i| c[i][i].max(0.0).sqrt()).collect())
    }
}

/// Link-scale pooled sensitivity and specificity from corrected pooled counts.
pub fn start_values(dataset: &MetaDataset, kind: ModelKind, link: LinkFunction, settings: &LikelihoodSettings) -> Result<Vec<f64>> {
    let (mut tp, mut pos, mut tn, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for s in dataset {
        let c = s.corrected(settings.correction);
        tp += c.tp;
        pos += c.positives();
        tn += c.tn;
        neg += c.negatives();
    }
    let clamp = |p: f64| p.clamp(1e-6, 1.0 - 1e-6);
    let eta = link.apply(clamp(tp / pos))?;
    let xi = link.apply(clamp(tn / neg))?;
    Ok(match kind {
        ModelKind::MtmFixed => vec![eta, xi],
        ModelKind::Approx | ModelKind::Mtm => vec![eta, xi, 0.5f64.ln(), 0.5f64.ln(), 0.0],
    })
}

/// Fit `kind` to `dataset`. Failures are reported in the result, not as
/// errors; errors are reserved for invalid inputs.
pub fn fit_model(
    dataset: &MetaDataset,
    kind: ModelKind,
    link: LinkFunction,
    opts: &FitOptions,
) -> Result<FitResult> {
    let lik = ModelLikelihood::new(kind, dataset, link, &opts.likelihood)?;
    let u0 = start_values(dataset, kind, link, &opts.likelihood)?;
    let (best, restarts_used) = optimize(&lik, &u0, opts)?;

    let u = best.x.clone();
    let natural = to_natural(kind, &u)?;
    let extra_loglik = match kind {
        ModelKind::Approx => proportion_scale_jacobian(dataset, link, &opts.likelihood)?,
        ModelKind::Mtm | ModelKind::MtmFixed => {
            let pi = PrevalenceParams::new(
                estimate_prevalences(dataset).iter().map(|p| p.estimate).collect(),
            )?;
            loglik_mtm_prevalence(&pi, dataset)?
        }
    };
    let loglik = -best.f + extra_loglik;
    let aic = -2.0 * loglik + 2.0 * kind.aic_parameters(dataset.len()) as f64;

    let (cov_model, cov_sandwich) = match covariances(&lik, &u) {
        Ok((m, s)) => (Some(m), Some(s)),
        Err(_) => (None, None),
    };
    let pd = cov_model.as_ref().is_some_and(|m| is_positive_definite(m));

    let failure = if best.status != OptStatus::Converged && best.status != OptStatus::Boundary {
        Some(FailureReason::NonConvergence)
    } else if best.status == OptStatus::Boundary || on_boundary(kind, &natural, &opts.boundary) {
        Some(FailureReason::BoundaryCorrelation)
    } else if !pd {
        Some(FailureReason::NonPdCovariance)
    } else {
        None
    };

    Ok(FitResult {
        model: kind,
        link,
        estimates: natural,
        unconstrained: u,
        cov_model: cov_model.map(|m| to_rows(&m)),
        cov_sandwich: cov_sandwich.map(|m| to_rows(&m)),
        loglik,
        aic,
        prevalences: kind.has_prevalences().then(|| estimate_prevalences(dataset)),
        failure,
        status: best.status,
        evals: best.evals,
        restarts_used,
    })
}

fn optimize(lik: &ModelLikelihood, u0: &[f64], opts: &FitOptions) -> Result<(OptResult, usize)> {
    let objective = |u: &[f64]| -lik.total(u);
    let classify = |mut r: OptResult| {
        if r.status == OptStatus::Converged && r.x.len() == 5 && r.x[4].abs() >= U_MAX - 0.01 {
            r.status = OptStatus::Boundary;
        }
        r
    };
    let mut evals = 0;
    let mut run = |start: &[f64]| -> Result<OptResult> {
        let mut r = polish(&objective, start, &opts.nelder_mead)?;
        evals += r.evals;
        if r.status != OptStatus::Converged {
            let b = bfgs(objective, None, start, &opts.bfgs)?;
            evals += b.evals;
            if b.status == OptStatus::Converged || b.f < r.f {
                r = b;
            }
        }
        Ok(classify(r))
    };

    let mut best = run(u0)?;
    let mut restarts_used = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while best.status != OptStatus::Converged && restarts_used < opts.restarts {
        restarts_used += 1;
        let start: Vec<f64> = u0
            .iter()
            .map(|v| v + rng.gen_range(-opts.jitter..=opts.jitter))
            .collect();
        let Ok(r) = run(&start) else { continue };
        let better = match (r.status, best.status) {
            (OptStatus::Converged, OptStatus::Converged) => r.f < best.f,
            (OptStatus::Converged, _) => true,
            (_, OptStatus::Converged) => false,
            _ => r.f < best.f,
        };
        if better {
            best = r;
        }
    }
    best.evals = evals;
    best.restarts_used = restarts_used;
    Ok((best, restarts_used))
}

/// Nelder–Mead, restarted from its own optimum until the objective stops
/// moving. A fresh simplex escapes premature collapse.
fn polish(objective: &impl Fn(&[f64]) -> f64, start: &[f64], opts: &NelderMeadOptions) -> Result<OptResult> {
    let mut r = nelder_mead(objective, start, opts)?;
    for _ in 0..5 {
        if r.status != OptStatus::Converged {
            break;
        }
        let next = nelder_mead(objective, &r.x, opts)?;
        let gain = r.f - next.f;
        let evals = r.evals + next.evals;
        if next.f <= r.f {
            r = OptResult { evals, ..next };
        } else {
            r.evals = evals;
        }
        if gain < 1e-9 {
            break;
        }
    }
    Ok(r)
}

/// `Σ log|g'(p̂)|` over the empirical sensitivities and specificities. Turns
/// the approximate model's density of transformed estimates into a density
/// of proportions, so its AIC can be compared across links.
pub fn proportion_scale_jacobian(
    dataset: &MetaDataset,
    link: LinkFunction,
    settings: &LikelihoodSettings,
) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset {
        let acc = empirical_accuracy(s, settings.correction);
        total += link.derivative(acc.sensitivity)?.abs().ln();
        total += link.derivative(acc.specificity)?.abs().ln();
    }
    Ok(total)
}

fn to_natural(kind: ModelKind, u: &[f64]) -> Result<Vec<f64>> {
    match kind {
        ModelKind::MtmFixed => Ok(u.to_vec()),
        ModelKind::Approx | ModelKind::Mtm => {
            let theta = UnconstrainedParams([u[0], u[1], u[2], u[3], u[4]]).to_natural()?;
            Ok(theta.to_array().to_vec())
        }
    }
}

fn on_boundary(kind: ModelKind, natural: &[f64], limits: &BoundaryThresholds) -> bool {
    match kind {
        ModelKind::MtmFixed => false,
        ModelKind::Approx | ModelKind::Mtm => {
            natural[4].abs() > limits.rho_max
                || natural[2].sqrt() < limits.sigma_min
                || natural[3].sqrt() < limits.sigma_min
        }
    }
}

fn jacobian(kind: ModelKind, u: &[f64]) -> DMatrix<f64> {
    match kind {
        ModelKind::MtmFixed => DMatrix::identity(2, 2),
        ModelKind::Approx | ModelKind::Mtm => DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(
            &UnconstrainedParams([u[0], u[1], u[2], u[3], u[4]]).jacobian_diagonal(),
        )),
    }
}

/// Observed information at `u` in unconstrained coordinates.
pub fn observed_information(lik: &ModelLikelihood, u: &[f64]) -> Result<DMatrix<f64>> {
    numeric_hessian(|v| -lik.total(v), u)
}

/// Model-based and sandwich covariances at `u`, on the natural scale.
pub fn covariances(lik: &ModelLikelihood, u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = observed_information(lik, u)?;
    let a_inv = a
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::NotPositiveDefinite("observed information is singular".into()))?;
    let a_inv = 0.5 * (&a_inv + a_inv.transpose());
    let scores = numeric_jacobian(|v| lik.per_study(v), u, 1e-5)?;
    let b = scores.transpose() * &scores;
    let sandwich = &a_inv * b * &a_inv;
    let sandwich = 0.5 * (&sandwich + sandwich.transpose());
    let j = jacobian(lik.kind(), u);
    Ok((&j * a_inv * &j, &j * sandwich * &j))
}

/// Sandwich covariance `A⁻¹BA⁻¹` of a fit, on the natural scale.
pub fn sandwich_covariance(
    fit: &FitResult,
    dataset: &MetaDataset,
    settings: &LikelihoodSettings,
) -> Result<DMatrix<f64>> {
    let lik = ModelLikelihood::new(fit.model, dataset, fit.link, settings)?;
    Ok(covariances(&lik, &fit.unconstrained)?.1)
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
