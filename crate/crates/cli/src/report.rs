//! The JSON fit report.

use diagmeta_core::fit::{CovarianceKind, FitResult};
use diagmeta_core::likelihood::ModelKind;
use diagmeta_core::summary::wald_ci;
use diagmeta_core::{CorrectionPolicy, LinkFunction, QuadratureScheme};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const LEVEL: f64 = 0.95;

/// Everything needed to rerun `fit` and get the same report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: String,
    pub model: ModelKind,
    pub link: LinkFunction,
    pub gh_nodes: usize,
    pub quadrature: QuadratureScheme,
    pub correction: CorrectionPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub study: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariances {
    pub parameters: Vec<String>,
    pub headline: CovarianceKind,
    pub model: Option<Vec<Vec<f64>>>,
    pub sandwich: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub config: FitConfig,
    pub model: ModelKind,
    pub link: LinkFunction,
    pub n_studies: usize,
    pub converged: bool,
    pub failure: Option<String>,
    pub status: String,
    pub loglik: f64,
    pub aic: f64,
    pub confidence_level: f64,
    /// Natural scale: means on the link scale, variances, correlation.
    pub parameters: Vec<Estimate>,
    /// Pooled sensitivity then specificity, probability scale.
    pub accuracy: Vec<Estimate>,
    pub covariance: Covariances,
    pub prevalences: Option<Vec<PrevalenceRow>>,
}

fn interval(estimate: f64, se: Option<f64>) -> (Option<f64>, Option<f64>) {
    match se.map(|s| wald_ci(estimate, s, LEVEL)) {
        Some(Ok((lo, hi))) => (Some(lo), Some(hi)),
        _ => (None, None),
    }
}

/// Variances get intervals from the log scale and the correlation from the
/// Fisher scale, so the bounds stay in range.
fn parameter_estimate(name: &str, estimate: f64, se: Option<f64>) -> Estimate {
    let se = se.filter(|s| s.is_finite() && *s > 0.0);
    let (ci_lower, ci_upper) = match name {
        "var_eta" | "var_xi" if estimate > 0.0 => {
            let (lo, hi) = interval(estimate.ln(), se.map(|s| s / estimate));
            (lo.map(f64::exp), hi.map(f64::exp))
        }
        "rho" if estimate.abs() < 1.0 => {
            let (lo, hi) = interval(estimate.atanh(), se.map(|s| s / (1.0 - estimate * estimate)));
            (lo.map(f64::tanh), hi.map(f64::tanh))
        }
        _ => interval(estimate, se),
    };
    Estimate {
        name: name.to_string(),
        estimate,
        se,
        ci_lower,
        ci_upper,
    }
}

impl FitReport {
    pub fn new(config: FitConfig, fit: &FitResult, study_ids: &[String]) -> Self {
        let headline = fit.headline_covariance();
        let se = fit.standard_errors(headline);
        let se_of = |i: usize| se.as_ref().map(|s| s[i]);
        let names = fit.model.param_names();
        let parameters = names
            .iter()
            .enumerate()
            .map(|(i, n)| parameter_estimate(n, fit.estimates[i], se_of(i)))
            .collect();

        let link = fit.link;
        let accuracy = [("sensitivity", 0usize), ("specificity", 1usize)]
            .iter()
            .map(|&(name, i)| {
                let mean = fit.estimates[i];
                let p = link.inverse(mean).unwrap_or(f64::NAN);
                let se_mean = se_of(i).filter(|s| s.is_finite() && *s > 0.0);
                let se_p = se_mean.map(|s| s * link.inverse_derivative(mean).abs());
                // the link is increasing, so the link-scale interval maps over
                let (lo, hi) = interval(mean, se_mean);
                Estimate {
                    name: name.to_string(),
                    estimate: p,
                    se: se_p,
                    ci_lower: lo.and_then(|v| link.inverse(v).ok()),
                    ci_upper: hi.and_then(|v| link.inverse(v).ok()),
                }
            })
            .collect();

        let prevalences = fit.prevalences.as_ref().map(|ps| {
            ps.iter()
                .zip(study_ids)
                .map(|(p, id)| PrevalenceRow {
                    study: id.clone(),
                    estimate: p.estimate,
                    se: p.std_error,
                })
                .collect()
        });

        FitReport {
            schema_version: SCHEMA_VERSION,
            tool: "diagmeta".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            model: fit.model,
            link,
            n_studies: study_ids.len(),
            converged: fit.converged(),
            failure: fit.failure.map(|f| f.name().to_string()),
            status: serde_json::to_value(fit.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            loglik: fit.loglik,
            aic: fit.aic,
            confidence_level: LEVEL,
            parameters,
            accuracy,
            covariance: Covariances {
                parameters: names.iter().map(|s| s.to_string()).collect(),
                headline,
                model: fit.cov_model.clone(),
                sandwich: fit.cov_sandwich.clone(),
            },
            prevalences,
        }
    }

    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.parameters.iter().find(|e| e.name == name)
    }

    /// Headline covariance of `(η̄, ξ̄)`.
    pub fn mean_covariance(&self) -> Option<[[f64; 2]; 2]> {
        let c = match self.covariance.headline {
            CovarianceKind::Model => self.covariance.model.as_ref(),
            CovarianceKind::Sandwich => self.covariance.sandwich.as_ref(),
        }?;
        Some([[c[0][0], c[0][1]], [c[1][0], c[1][1]]])
    }
}
