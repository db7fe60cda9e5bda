//! Log-likelihood evaluators.
//!
//! Binomial coefficients are dropped everywhere, so values are comparable
//! only between fits of this crate. Evaluators return `-∞` rather than an
//! error when a log term underflows.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{transform_estimates, CorrectionPolicy, MetaDataset, StudyRecord, TransformedEstimates};
use crate::error::{Error, Result};
use crate::links::LinkFunction;
use crate::quadrature::{
    log_sum_exp, BivariateNormalSpec, LogGrid, QuadratureRule, QuadratureScheme,
};

/// Bound on `atanh ρ` during optimization.
pub const U_MAX: f64 = 6.0;

/// Mean, variances and correlation of the link-scale random effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyParams {
    pub eta_bar: f64,
    pub xi_bar: f64,
    pub var_eta: f64,
    pub var_xi: f64,
    pub rho: f64,
}

impl AccuracyParams {
    pub fn new(eta_bar: f64, xi_bar: f64, var_eta: f64, var_xi: f64, rho: f64) -> Result<Self> {
        let ok = eta_bar.is_finite()
            && xi_bar.is_finite()
            && var_eta > 0.0
            && var_xi > 0.0
            && var_eta.is_finite()
            && var_xi.is_finite()
            && rho.abs() < 1.0;
        if !ok {
            return Err(Error::Parameter(format!(
                "invalid accuracy parameters ({eta_bar}, {xi_bar}, {var_eta}, {var_xi}, {rho})"
            )));
        }
        Ok(Self {
            eta_bar,
            xi_bar,
            var_eta,
            var_xi,
            rho,
        })
    }

    pub fn random_effects(&self) -> BivariateNormalSpec {
        BivariateNormalSpec::new([self.eta_bar, self.xi_bar], self.var_eta, self.var_xi, self.rho)
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.eta_bar, self.xi_bar, self.var_eta, self.var_xi, self.rho]
    }
}

/// `(η̄, ξ̄, log σ_η, log σ_ξ, atanh ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnconstrainedParams(pub [f64; 5]);

impl UnconstrainedParams {
    pub fn to_natural(&self) -> Result<AccuracyParams> {
        let u = self.0;
        AccuracyParams::new(u[0], u[1], (2.0 * u[2]).exp(), (2.0 * u[3]).exp(), u[4].tanh())
    }

    pub fn from_natural(theta: &AccuracyParams) -> Self {
        Self([
            theta.eta_bar,
            theta.xi_bar,
            0.5 * theta.var_eta.ln(),
            0.5 * theta.var_xi.ln(),
            theta.rho.atanh(),
        ])
    }

    /// Diagonal of `∂ natural / ∂ unconstrained` (the map is coordinatewise).
    pub fn jacobian_diagonal(&self) -> [f64; 5] {
        let u = self.0;
        let r = u[4].tanh();
        [
            1.0,
            1.0,
            2.0 * (2.0 * u[2]).exp(),
            2.0 * (2.0 * u[3]).exp(),
            1.0 - r * r,
        ]
    }
}

/// Study prevalences π₁…π_n.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceParams(Vec<f64>);

impl PrevalenceParams {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if let Some(p) = pi.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Parameter(format!("prevalence {p} outside (0, 1)")));
        }
        Ok(Self(pi))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn check_len(&self, dataset: &MetaDataset) -> Result<()> {
        if self.0.len() != dataset.len() {
            return Err(Error::Parameter(format!(
                "{} prevalences for {} studies",
                self.0.len(),
                dataset.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Normal-normal model on the transformed empirical estimates.
    Approx,
    /// Hierarchical multinomial tree model.
    Mtm,
    /// Multinomial tree model with common sensitivity and specificity.
    MtmFixed,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Approx => "approx",
            Self::Mtm => "mtm",
            Self::MtmFixed => "mtm-fixed",
        }
    }

    /// Number of parameters the optimizer works on.
    pub fn dimension(self) -> usize {
        match self {
            Self::Approx | Self::Mtm => 5,
            Self::MtmFixed => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Self::Approx | Self::Mtm => &["eta_bar", "xi_bar", "var_eta", "var_xi", "rho"],
            Self::MtmFixed => &["eta_bar", "xi_bar"],
        }
    }

    /// Free parameters counted by AIC, prevalences included.
    pub fn aic_parameters(self, studies: usize) -> usize {
        match self {
            Self::Approx => 5,
            Self::Mtm => 5 + studies,
            Self::MtmFixed => 2 + studies,
        }
    }

    pub fn has_prevalences(self) -> bool {
        matches!(self, Self::Mtm | Self::MtmFixed)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(Self::Approx),
            "mtm" => Ok(Self::Mtm),
            "mtm-fixed" => Ok(Self::MtmFixed),
            other => Err(Error::Parameter(format!("unknown model '{other}'"))),
        }
    }
}

/// log φ₂((η̂, ξ̂); (η̄, ξ̄); Γ + Σ) for one study.
pub fn approx_study_loglik(est: &TransformedEstimates, theta: &AccuracyParams) -> Result<f64> {
    let c = theta.rho * (theta.var_eta * theta.var_xi).sqrt();
    let a = theta.var_eta + est.var_eta;
    let b = theta.var_xi + est.var_xi;
    let det = a * b - c * c;
    if !(det > 0.0 && a > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("Γ + Σ = [[{a}, {c}], [{c}, {b}]]")));
    }
    let d0 = est.eta - theta.eta_bar;
    let d1 = est.xi - theta.xi_bar;
    let quad = (b * d0 * d0 - 2.0 * c * d0 * d1 + a * d1 * d1) / det;
    Ok(-(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad)
}

pub fn loglik_approx(
    theta: &AccuracyParams,
    dataset: &MetaDataset,
    link: LinkFunction,
    correction: CorrectionPolicy,
) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset {
        let est = transform_estimates(s, link, correction)?;
        total += approx_study_loglik(&est, theta)?;
    }
    Ok(total)
}

/// TP log s + FN log(1-s) + FP log(1-c) + TN log c at link-scale `(η, ξ)`.
pub fn binomial_kernel_log(study: &StudyRecord, link: LinkFunction, eta: f64, xi: f64) -> f64 {
    let (ls, l1s) = link.log_inverse_pair(eta);
    let (lc, l1c) = link.log_inverse_pair(xi);
    weighted_log(study.tp(), ls) + weighted_log(study.fn_(), l1s) + weighted_log(study.fp(), l1c)
        + weighted_log(study.tn(), lc)
}

/// `count * log_p` with the convention `0 * -∞ = 0`.
fn weighted_log(count: u64, log_p: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log_p
    }
}

/// Per-study accuracy part of the MTM log-likelihood.
#[derive(Debug, Clone)]
pub struct MtmAccuracy {
    studies: Vec<StudyRecord>,
    link: LinkFunction,
    rule: QuadratureRule,
    scheme: QuadratureScheme,
    /// Fixed-grid kernels, one row of m² values per study.
    cached_kernels: Option<Vec<Vec<f64>>>,
}

impl MtmAccuracy {
    pub fn new(
        dataset: &MetaDataset,
        link: LinkFunction,
        rule: QuadratureRule,
        scheme: QuadratureScheme,
    ) -> Self {
        let cached_kernels = match scheme {
            QuadratureScheme::FixedGrid => {
                let pairs: Vec<(f64, f64)> =
                    rule.nodes().iter().map(|&z| link.log_inverse_pair(z)).collect();
                Some(
                    dataset
                        .iter()
                        .map(|s| {
                            let mut row = Vec::with_capacity(pairs.len() * pairs.len());
                            for &(ls, l1s) in &pairs {
                                for &(lc, l1c) in &pairs {
                                    row.push(
                                        weighted_log(s.tp(), ls)
                                            + weighted_log(s.fn_(), l1s)
                                            + weighted_log(s.fp(), l1c)
                                            + weighted_log(s.tn(), lc),
                                    );
                                }
                            }
                            row
                        })
                        .collect(),
                )
            }
            QuadratureScheme::Centered => None,
        };
        Self {
            studies: dataset.studies().to_vec(),
            link,
            rule,
            scheme,
            cached_kernels,
        }
    }

    pub fn scheme(&self) -> QuadratureScheme {
        self.scheme
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// One log-likelihood term per study, in dataset order.
    pub fn per_study(&self, theta: &AccuracyParams) -> Result<Vec<f64>> {
        let grid = self.scheme.log_grid(&theta.random_effects(), &self.rule)?;
        Ok(match &self.cached_kernels {
            Some(kernels) => kernels
                .iter()
                .map(|k| {
                    log_sum_exp(grid.log_weights.iter().zip(k).map(|(lw, kv)| lw + kv))
                })
                .collect(),
            None => self.centered_terms(&grid),
        })
    }

    fn centered_terms(&self, grid: &LogGrid) -> Vec<f64> {
        let pairs: Vec<[(f64, f64); 2]> = grid
            .points
            .iter()
            .map(|p| [self.link.log_inverse_pair(p[0]), self.link.log_inverse_pair(p[1])])
            .collect();
        self.studies
            .iter()
            .map(|s| {
                log_sum_exp(grid.log_weights.iter().zip(&pairs).map(|(lw, [(ls, l1s), (lc, l1c)])| {
                    lw + weighted_log(s.tp(), *ls)
                        + weighted_log(s.fn_(), *l1s)
                        + weighted_log(s.fp(), *l1c)
                        + weighted_log(s.tn(), *lc)
                }))
            })
            .collect()
    }

    pub fn loglik(&self, theta: &AccuracyParams) -> Result<f64> {
        Ok(self.per_study(theta)?.iter().sum())
    }
}

/// ℓ_MTM,2: sum over studies of log ∫∫ kernel · φ₂.
pub fn loglik_mtm_accuracy(
    theta: &AccuracyParams,
    dataset: &MetaDataset,
    link: LinkFunction,
    rule: &QuadratureRule,
    scheme: QuadratureScheme,
) -> Result<f64> {
    MtmAccuracy::new(dataset, link, rule.clone(), scheme).loglik(theta)
}

/// ℓ_MTM,1 = Σ P_i log π_i + N_i log(1 - π_i).
pub fn loglik_mtm_prevalence(pi: &PrevalenceParams, dataset: &MetaDataset) -> Result<f64> {
    pi.check_len(dataset)?;
    Ok(dataset
        .iter()
        .zip(pi.values())
        .map(|(s, &p)| weighted_log(s.positives(), p.ln()) + weighted_log(s.negatives(), (-p).ln_1p()))
        .sum())
}

/// Full hierarchical MTM log-likelihood with the prevalence factor kept
/// inside each study's integral.
pub fn loglik_mtm_full(
    pi: &PrevalenceParams,
    theta: &AccuracyParams,
    dataset: &MetaDataset,
    link: LinkFunction,
    rule: &QuadratureRule,
    scheme: QuadratureScheme,
) -> Result<f64> {
    pi.check_len(dataset)?;
    let grid = scheme.log_grid(&theta.random_effects(), rule)?;
    Ok(dataset
        .iter()
        .zip(pi.values())
        .map(|(s, &p)| {
            let prev = weighted_log(s.positives(), p.ln()) + weighted_log(s.negatives(), (-p).ln_1p());
            grid.expectation_log(|eta, xi| prev + binomial_kernel_log(s, link, eta, xi))
        })
        .sum())
}

/// Fixed-effects multinomial tree log-likelihood.
pub fn loglik_mtm_fixed(
    se: f64,
    sp: f64,
    pi: &PrevalenceParams,
    dataset: &MetaDataset,
) -> Result<f64> {
    for (name, v) in [("sensitivity", se), ("specificity", sp)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Parameter(format!("{name} {v} outside (0, 1)")));
        }
    }
    pi.check_len(dataset)?;
    Ok(dataset
        .iter()
        .zip(pi.values())
        .map(|(s, &p)| {
            weighted_log(s.tp(), (p * se).ln())
                + weighted_log(s.fn_(), (p * (1.0 - se)).ln())
                + weighted_log(s.fp(), ((1.0 - p) * (1.0 - sp)).ln())
                + weighted_log(s.tn(), ((1.0 - p) * sp).ln())
        })
        .sum())
}

/// Cell probabilities `(p_TP, p_FN, p_FP, p_TN)` of the tree.
pub fn tree_probabilities(pi: f64, se: f64, sp: f64) -> [f64; 4] {
    [pi * se, pi * (1.0 - se), (1.0 - pi) * (1.0 - sp), (1.0 - pi) * sp]
}

/// Settings shared by all model likelihoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodSettings {
    pub correction: CorrectionPolicy,
    pub nodes: usize,
    pub scheme: QuadratureScheme,
}

impl Default for LikelihoodSettings {
    fn default() -> Self {
        Self {
            correction: CorrectionPolicy::HalfCell,
            nodes: crate::quadrature::DEFAULT_NODES,
            scheme: QuadratureScheme::default(),
        }
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Approx(Vec<TransformedEstimates>),
    Mtm(MtmAccuracy),
    Fixed(Vec<StudyRecord>),
}

/// The accuracy-parameter log-likelihood of one model as a function of its
/// unconstrained parameter vector, split into per-study terms.
#[derive(Debug, Clone)]
pub struct ModelLikelihood {
    kind: ModelKind,
    link: LinkFunction,
    prepared: Prepared,
}

impl ModelLikelihood {
    pub fn new(
        kind: ModelKind,
        dataset: &MetaDataset,
        link: LinkFunction,
        settings: &LikelihoodSettings,
    ) -> Result<Self> {
        let prepared = match kind {
            ModelKind::Approx => Prepared::Approx(
                dataset
                    .iter()
                    .map(|s| transform_estimates(s, link, settings.correction))
                    .collect::<Result<_>>()?,
            ),
            ModelKind::Mtm => {
                let rule = crate::quadrature::gauss_hermite_rule(settings.nodes)?;
                Prepared::Mtm(MtmAccuracy::new(dataset, link, rule, settings.scheme))
            }
            ModelKind::MtmFixed => Prepared::Fixed(dataset.studies().to_vec()),
        };
        Ok(Self {
            kind,
            link,
            prepared,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn link(&self) -> LinkFunction {
        self.link
    }

    pub fn n_studies(&self) -> usize {
        match &self.prepared {
            Prepared::Approx(v) => v.len(),
            Prepared::Mtm(m) => m.studies.len(),
            Prepared::Fixed(v) => v.len(),
        }
    }

    /// Per-study log-likelihood terms at unconstrained `u`.
    pub fn per_study(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.kind.dimension() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("bad parameter vector {u:?}")));
        }
        match &self.prepared {
            Prepared::Approx(est) => {
                let theta = unconstrained_to_natural(u)?;
                est.iter().map(|e| approx_study_loglik(e, &theta)).collect()
            }
            Prepared::Mtm(mtm) => mtm.per_study(&unconstrained_to_natural(u)?),
            Prepared::Fixed(studies) => {
                let (ls, l1s) = self.link.log_inverse_pair(u[0]);
                let (lc, l1c) = self.link.log_inverse_pair(u[1]);
                Ok(studies
                    .iter()
                    .map(|s| {
                        weighted_log(s.tp(), ls)
                            + weighted_log(s.fn_(), l1s)
                            + weighted_log(s.fp(), l1c)
                            + weighted_log(s.tn(), lc)
                    })
                    .collect())
            }
        }
    }

    /// Total log-likelihood, `-∞` where the parameters are inadmissible.
    pub fn total(&self, u: &[f64]) -> f64 {
        if self.kind.dimension() == 5 && u.len() == 5 && u[4].abs() > U_MAX {
            return f64::NEG_INFINITY;
        }
        match self.per_study(u) {
            Ok(v) => {
                let s: f64 = v.iter().sum();
                if s.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    s
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

fn unconstrained_to_natural(u: &[f64]) -> Result<AccuracyParams> {
    UnconstrainedParams([u[0], u[1], u[2], u[3], u[4]]).to_natural()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::{dataset, delirium};
    use crate::quadrature::gauss_hermite_rule;

    fn toy() -> MetaDataset {
        dataset(&[(3, 1, 2, 4), (5, 0, 1, 2), (2, 3, 0, 5)])
    }

    fn theta0() -> AccuracyParams {
        AccuracyParams::new(0.5, 1.0, 0.3, 0.3, 0.2).unwrap()
    }

    #[test]
    fn accuracy_params_validation() {
        assert!(AccuracyParams::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(AccuracyParams::new(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(AccuracyParams::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn unconstrained_round_trip() {
        let t = AccuracyParams::new(1.2, -0.4, 0.7, 2.5, -0.35).unwrap();
        let back = UnconstrainedParams::from_natural(&t).to_natural().unwrap();
        for (a, b) in t.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn approx_standard_density_at_mean() {
        let est = TransformedEstimates {
            eta: 0.3,
            xi: -0.2,
            var_eta: 1.0,
            var_xi: 1.0,
        };
        let theta = AccuracyParams::new(0.3, -0.2, 1e-14, 1e-14, 0.0).unwrap();
        let v = approx_study_loglik(&est, &theta).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn approx_explicit_formula_oracle() {
        let ds = dataset(&[(12, 3, 4, 30), (20, 6, 9, 45)]);
        let theta = AccuracyParams::new(1.0, 2.0, 0.6, 0.9, -0.4).unwrap();
        let got = loglik_approx(&theta, &ds, LinkFunction::Logit, CorrectionPolicy::None).unwrap();
        let mut want = 0.0;
        for &(tp, fp, fn_, tn) in &[(12.0, 3.0, 4.0, 30.0), (20.0, 6.0, 9.0, 45.0)] {
            let x: [f64; 2] = [f64::ln(tp / fn_), f64::ln(tn / fp)];
            let s11 = 0.6 + 1.0 / tp + 1.0 / fn_;
            let s22 = 0.9 + 1.0 / tn + 1.0 / fp;
            let s12 = -0.4 * (0.6f64 * 0.9).sqrt();
            let det = s11 * s22 - s12 * s12;
            let (d0, d1) = (x[0] - 1.0, x[1] - 2.0);
            let q = (s22 * d0 * d0 - 2.0 * s12 * d0 * d1 + s11 * d1 * d1) / det;
            want += -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q;
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn approx_block_diagonal_reduction() {
        let ds = delirium();
        let theta = AccuracyParams::new(1.3, 3.2, 1e-300, 1e-300, 0.0).unwrap();
        let got =
            loglik_approx(&theta, &ds, LinkFunction::Logit, CorrectionPolicy::HalfCell).unwrap();
        let norm = |x: f64, m: f64, v: f64| -0.5 * (2.0 * PI * v).ln() - 0.5 * (x - m).powi(2) / v;
        let want: f64 = ds
            .iter()
            .map(|s| {
                let e = transform_estimates(s, LinkFunction::Logit, CorrectionPolicy::HalfCell).unwrap();
                norm(e.eta, 1.3, e.var_eta) + norm(e.xi, 3.2, e.var_xi)
            })
            .sum();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn permutation_invariance() {
        let rows = [(3, 1, 2, 4), (5, 0, 1, 2), (2, 3, 0, 5), (9, 2, 4, 20)];
        let mut rev = rows;
        rev.reverse();
        let (a, b) = (dataset(&rows), dataset(&rev));
        let rule = gauss_hermite_rule(21).unwrap();
        let t = theta0();
        for scheme in [QuadratureScheme::Centered, QuadratureScheme::FixedGrid] {
            let x = loglik_mtm_accuracy(&t, &a, LinkFunction::Logit, &rule, scheme).unwrap();
            let y = loglik_mtm_accuracy(&t, &b, LinkFunction::Logit, &rule, scheme).unwrap();
            assert!((x - y).abs() < 1e-12);
        }
        let x = loglik_approx(&t, &a, LinkFunction::Probit, CorrectionPolicy::HalfCell).unwrap();
        let y = loglik_approx(&t, &b, LinkFunction::Probit, CorrectionPolicy::HalfCell).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn degenerate_random_effects_limit() {
        let ds = toy();
        let rule = gauss_hermite_rule(21).unwrap();
        for link in LinkFunction::ALL {
            let t = AccuracyParams::new(0.5, 1.0, 1e-12, 1e-12, 0.0).unwrap();
            let got = loglik_mtm_accuracy(&t, &ds, link, &rule, QuadratureScheme::Centered).unwrap();
            let want: f64 = ds.iter().map(|s| binomial_kernel_log(s, link, 0.5, 1.0)).sum();
            assert!((got - want).abs() < 1e-4, "{link}: {got} vs {want}");
        }
    }

    #[test]
    fn prevalence_part() {
        // Study 1 has P = N = 1; study 2 has P = N = 3.
        let ds = dataset(&[(1, 0, 0, 1), (2, 1, 1, 2)]);
        let pi = PrevalenceParams::new(vec![0.5, 0.5]).unwrap();
        let v = loglik_mtm_prevalence(&pi, &ds).unwrap();
        assert!((v - (0.25f64.ln() + 6.0 * 0.5f64.ln())).abs() < 1e-12);
        let first_term = v - 6.0 * 0.5f64.ln();
        assert!((first_term - (-1.386_294_361_119_890_6)).abs() < 1e-12);
        assert!(loglik_mtm_prevalence(&PrevalenceParams::new(vec![0.5]).unwrap(), &ds).is_err());
        assert!(PrevalenceParams::new(vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn prevalence_part_maximized_at_fraction_of_positives() {
        let ds = delirium();
        let hat: Vec<f64> = crate::data::estimate_prevalences(&ds).iter().map(|p| p.estimate).collect();
        let best = loglik_mtm_prevalence(&PrevalenceParams::new(hat.clone()).unwrap(), &ds).unwrap();
        for i in 0..ds.len() {
            for d in [-1e-3, 1e-3] {
                let mut moved = hat.clone();
                moved[i] += d;
                let v = loglik_mtm_prevalence(&PrevalenceParams::new(moved).unwrap(), &ds).unwrap();
                assert!(v < best);
            }
        }
    }

    #[test]
    fn separability_on_toy() {
        let ds = toy();
        let rule = gauss_hermite_rule(21).unwrap();
        let pi = PrevalenceParams::new(vec![0.3, 0.6, 0.45]).unwrap();
        for scheme in [QuadratureScheme::Centered, QuadratureScheme::FixedGrid] {
            for link in LinkFunction::ALL {
                let full = loglik_mtm_full(&pi, &theta0(), &ds, link, &rule, scheme).unwrap();
                let split = loglik_mtm_prevalence(&pi, &ds).unwrap()
                    + loglik_mtm_accuracy(&theta0(), &ds, link, &rule, scheme).unwrap();
                assert!((full - split).abs() < 1e-12, "{full} vs {split}");
            }
        }
    }

    #[test]
    fn tree_partition() {
        for &(pi, se, sp) in &[(0.2, 0.9, 0.85), (0.5, 0.5, 0.5), (0.99, 0.01, 0.7)] {
            let s: f64 = tree_probabilities(pi, se, sp).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_effects_single_study_mle_by_grid() {
        // The likelihood separates by study in π, so the first study's π and
        // the common (se, sp) can be searched with the second study held fixed
        // at a tiny, balanced table.
        let ds = dataset(&[(12, 5, 3, 30), (1, 1, 1, 1)]);
        let ll = |se: f64, sp: f64, pi: f64| {
            loglik_mtm_fixed(se, sp, &PrevalenceParams::new(vec![pi, 0.5]).unwrap(), &ds).unwrap()
        };
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
        for i in 1..200 {
            for j in 1..200 {
                let (se, sp) = (i as f64 / 200.0, j as f64 / 200.0);
                let v = ll(se, sp, 0.3);
                if v > best.0 {
                    best = (v, se, sp, 0.3);
                }
            }
        }
        // Pooled counts: se = 13/17, sp = 31/37.
        assert!((best.1 - 13.0 / 17.0).abs() <= 0.005);
        assert!((best.2 - 31.0 / 37.0).abs() <= 0.005);
        let pi_best = (1..1000)
            .map(|k| k as f64 / 1000.0)
            .max_by(|a, b| ll(0.8, 0.85, *a).total_cmp(&ll(0.8, 0.85, *b)))
            .unwrap();
        assert!((pi_best - 15.0 / 50.0).abs() <= 1e-3);
    }

    #[test]
    fn model_likelihood_totals_equal_part_sums() {
        let ds = delirium();
        let settings = LikelihoodSettings::default();
        for kind in [ModelKind::Approx, ModelKind::Mtm, ModelKind::MtmFixed] {
            let m = ModelLikelihood::new(kind, &ds, LinkFunction::Logit, &settings).unwrap();
            let u: Vec<f64> = [1.3, 3.4, 0.05, 0.1, -0.1][..kind.dimension()].to_vec();
            let parts = m.per_study(&u).unwrap();
            assert_eq!(parts.len(), ds.len());
            let sum: f64 = parts.iter().sum();
            assert!((m.total(&u) - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn model_likelihood_rejects_correlation_bound() {
        let ds = toy();
        let m = ModelLikelihood::new(ModelKind::Mtm, &ds, LinkFunction::Logit, &LikelihoodSettings::default())
            .unwrap();
        assert_eq!(m.total(&[0.0, 0.0, 0.0, 0.0, 6.5]), f64::NEG_INFINITY);
        assert!(m.total(&[0.0, 0.0, 0.0, 0.0, 5.9]).is_finite());
    }

    #[test]
    fn approx_model_requires_correction_for_zero_cells() {
        let ds = delirium();
        let s = LikelihoodSettings {
            correction: CorrectionPolicy::None,
            ..Default::default()
        };
        assert!(matches!(
            ModelLikelihood::new(ModelKind::Approx, &ds, LinkFunction::Logit, &s),
            Err(Error::NonFiniteTransform { .. })
        ));
        assert!(ModelLikelihood::new(ModelKind::Mtm, &ds, LinkFunction::Logit, &s).is_ok());
    }
}
