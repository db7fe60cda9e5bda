//! Monte-Carlo comparison of the approximate and MTM estimators.
//!
//! Studies are drawn in two stages: link-scale accuracies from the bivariate
//! normal, then prevalence and classification counts from binomials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MetaDataset, StudyRecord};
use crate::error::{Error, Result};
use crate::fit::{fit_model, FitOptions};
use crate::likelihood::{LikelihoodSettings, ModelKind};
use crate::links::LinkFunction;
use crate::quadrature::QuadratureScheme;
use crate::summary::wald_ci;

/// Redraws of `(n_i, P_i)` before a replicate is abandoned.
pub const MAX_REDRAWS: usize = 100;

pub const THREADS_ENV: &str = "DIAGMETA_THREADS";

fn default_var() -> f64 {
    0.5
}
fn default_size_range() -> (u64, u64) {
    (50, 200)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub prevalence: f64,
    pub se_true: f64,
    pub sp_true: f64,
    pub rho: f64,
    #[serde(default = "default_var")]
    pub var_eta_true: f64,
    #[serde(default = "default_var")]
    pub var_xi_true: f64,
    pub link: LinkFunction,
    #[serde(default = "default_size_range")]
    pub size_range: (u64, u64),
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n < 2 {
            return bad(format!("scenario needs at least 2 studies, got {}", self.n));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence {} outside (0, 1)", self.prevalence));
        }
        if !(self.var_eta_true >= 0.0 && self.var_xi_true >= 0.0) {
            return bad("true variances must be nonnegative".into());
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("correlation {} outside (-1, 1)", self.rho));
        }
        let (lo, hi) = self.size_range;
        if lo < 2 || lo > hi {
            return bad(format!("study size range [{lo}, {hi}] is invalid"));
        }
        self.link.apply(self.se_true)?;
        self.link.apply(self.sp_true)?;
        Ok(())
    }

    /// True `(η̄, ξ̄, σ²_η, σ²_ξ, ρ)`.
    pub fn truth(&self) -> Result<[f64; 5]> {
        Ok([
            self.link.apply(self.se_true)?,
            self.link.apply(self.sp_true)?,
            self.var_eta_true,
            self.var_xi_true,
            self.rho,
        ])
    }
}

/// Every combination of the factor levels of the published simulation.
pub fn paper_grid(var_eta_true: f64, var_xi_true: f64) -> Vec<Scenario> {
    let mut out = Vec::new();
    for n in [10, 25] {
        for prevalence in [0.20, 0.35] {
            for rho in [0.2, 0.6, 0.8] {
                for link in LinkFunction::ALL {
                    for (se_true, sp_true) in [(0.9, 0.85), (0.80, 0.92)] {
                        out.push(Scenario {
                            n,
                            prevalence,
                            se_true,
                            sp_true,
                            rho,
                            var_eta_true,
                            var_xi_true,
                            link,
                            size_range: default_size_range(),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Binomial draw by inversion of the CDF, from the smaller tail.
pub fn sample_binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p > 0.5 {
        return n - sample_binomial(rng, n, 1.0 - p);
    }
    let u: f64 = rng.gen();
    let ratio = p / (1.0 - p);
    let mut pmf = (n as f64 * (-p).ln_1p()).exp();
    let mut cdf = pmf;
    let mut k = 0;
    while u > cdf && k < n {
        pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
        k += 1;
        cdf += pmf;
    }
    k
}

/// One study with link-scale accuracies `(eta, xi)`.
pub fn generate_study<R: Rng + ?Sized>(
    scenario: &Scenario,
    eta: f64,
    xi: f64,
    id: &str,
    rng: &mut R,
) -> Result<StudyRecord> {
    let se = scenario.link.inverse(eta)?;
    let sp = scenario.link.inverse(xi)?;
    let (lo, hi) = scenario.size_range;
    for _ in 0..MAX_REDRAWS {
        let size = rng.gen_range(lo..=hi);
        let positives = sample_binomial(rng, size, scenario.prevalence);
        let negatives = size - positives;
        if positives == 0 || negatives == 0 {
            continue;
        }
        let tp = sample_binomial(rng, positives, se);
        let tn = sample_binomial(rng, negatives, sp);
        return StudyRecord::new(id, tp, negatives - tn, positives - tp, tn);
    }
    Err(Error::Generation {
        attempts: MAX_REDRAWS,
    })
}

/// Link-scale accuracies of one study, drawn from the random-effects law.
pub fn draw_accuracies<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<(f64, f64)> {
    let [eta_bar, xi_bar, ve, vx, rho] = scenario.truth()?;
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let (se, sx) = (ve.sqrt(), vx.sqrt());
    Ok((
        eta_bar + se * z1,
        xi_bar + sx * (rho * z1 + (1.0 - rho * rho).sqrt() * z2),
    ))
}

pub fn generate_meta<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<MetaDataset> {
    scenario.validate()?;
    let studies = (0..scenario.n)
        .map(|i| {
            let (eta, xi) = draw_accuracies(scenario, rng)?;
            generate_study(scenario, eta, xi, &(i + 1).to_string(), rng)
        })
        .collect::<Result<Vec<_>>>()?;
    MetaDataset::new(studies)
}

/// Generator for replicate `replicate` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub avg_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: Scenario,
    pub method: ModelKind,
    pub requested: usize,
    pub replicates_used: usize,
    pub fit_failures: usize,
    pub generation_failures: usize,
    pub failure_rate: f64,
    /// Ordered as `(η̄, ξ̄, σ²_η, σ²_ξ, ρ)`.
    pub parameters: [ParameterSummary; 5],
    pub coverage_eta: f64,
    pub coverage_eta_mcse: f64,
    pub coverage_xi: f64,
    pub coverage_xi_mcse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub fit: FitOptions,
    /// Worker threads; `None` reads `DIAGMETA_THREADS`, then uses all cores.
    pub threads: Option<usize>,
    pub level: f64,
}

impl Default for SimulationOptions {
    /// Centered quadrature: the fixed grid cannot resolve the small
    /// between-study variances that simulated data often produce.
    fn default() -> Self {
        Self {
            fit: FitOptions {
                likelihood: LikelihoodSettings {
                    scheme: QuadratureScheme::Centered,
                    ..Default::default()
                },
                ..Default::default()
            },
            threads: None,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    GenerationFailed,
    FitFailed,
    Fitted { estimates: [f64; 5], se: [f64; 5] },
}

fn run_replicate(
    scenario: &Scenario,
    methods: &[ModelKind],
    seed: u64,
    replicate: usize,
    opts: &SimulationOptions,
) -> Vec<Outcome> {
    let mut rng = replicate_rng(seed, replicate);
    let Ok(ds) = generate_meta(scenario, &mut rng) else {
        return vec![Outcome::GenerationFailed; methods.len()];
    };
    let fit_opts = FitOptions {
        seed: seed ^ (replicate as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ..opts.fit
    };
    methods
        .iter()
        .map(|&kind| {
            let Ok(fit) = fit_model(&ds, kind, scenario.link, &fit_opts) else {
                return Outcome::FitFailed;
            };
            let se = fit.standard_errors(fit.headline_covariance());
            match (fit.failure, se, <[f64; 5]>::try_from(fit.estimates.as_slice())) {
                (None, Some(se), Ok(estimates)) if se.len() == 5 => Outcome::Fitted {
                    estimates,
                    se: [se[0], se[1], se[2], se[3], se[4]],
                },
                _ => Outcome::FitFailed,
            }
        })
        .collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn summarize(
    scenario: &Scenario,
    method: ModelKind,
    outcomes: &[&Outcome],
    level: f64,
) -> Result<SimulationSummary> {
    let truth = scenario.truth()?;
    let fitted: Vec<(&[f64; 5], &[f64; 5])> = outcomes
        .iter()
        .filter_map(|o| match o {
            Outcome::Fitted { estimates, se } => Some((estimates, se)),
            _ => None,
        })
        .collect();
    let used = fitted.len();
    let generation_failures = outcomes
        .iter()
        .filter(|o| matches!(o, Outcome::GenerationFailed))
        .count();
    let fit_failures = outcomes.len() - used - generation_failures;

    let mean = |values: &mut dyn Iterator<Item = f64>| {
        let mut s = CompensatedSum::default();
        let mut k = 0usize;
        for v in values {
            s.add(v);
            k += 1;
        }
        if k == 0 {
            f64::NAN
        } else {
            s.value() / k as f64
        }
    };
    let parameters = std::array::from_fn(|j| {
        let m = mean(&mut fitted.iter().map(|(e, _)| e[j]));
        let ss = mean(&mut fitted.iter().map(|(e, _)| (e[j] - m).powi(2)));
        ParameterSummary {
            truth: truth[j],
            bias: m - truth[j],
            sd: if used > 1 {
                (ss * used as f64 / (used - 1) as f64).sqrt()
            } else {
                f64::NAN
            },
            avg_se: mean(&mut fitted.iter().map(|(_, s)| s[j])),
        }
    });
    let coverage = |j: usize| -> Result<(f64, f64)> {
        if used == 0 {
            return Ok((f64::NAN, f64::NAN));
        }
        let mut hits = 0usize;
        for (e, s) in &fitted {
            if s[j] > 0.0 {
                let (lo, hi) = wald_ci(e[j], s[j], level)?;
                if lo <= truth[j] && truth[j] <= hi {
                    hits += 1;
                }
            }
        }
        let p = hits as f64 / used as f64;
        Ok((p, (p * (1.0 - p) / used as f64).sqrt()))
    };
    let (coverage_eta, coverage_eta_mcse) = coverage(0)?;
    let (coverage_xi, coverage_xi_mcse) = coverage(1)?;
    Ok(SimulationSummary {
        scenario: *scenario,
        method,
        requested: outcomes.len(),
        replicates_used: used,
        fit_failures,
        generation_failures,
        failure_rate: (outcomes.len() - used) as f64 / outcomes.len() as f64,
        parameters,
        coverage_eta,
        coverage_eta_mcse,
        coverage_xi,
        coverage_xi_mcse,
    })
}

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Run `replicates` replicates of `scenario`, fitting each method. Results
/// do not depend on the thread count.
pub fn run_scenario(
    scenario: &Scenario,
    replicates: usize,
    methods: &[ModelKind],
    seed: u64,
    opts: &SimulationOptions,
) -> Result<Vec<SimulationSummary>> {
    if replicates == 0 {
        return Err(Error::Parameter("at least one replicate is required".into()));
    }
    if methods.is_empty() {
        return Err(Error::Parameter("no estimation method selected".into()));
    }
    if let Some(bad) = methods.iter().find(|m| **m == ModelKind::MtmFixed) {
        return Err(Error::Parameter(format!("method {bad} has no random effects to evaluate")));
    }
    scenario.validate()?;
    let work = || -> Vec<Vec<Outcome>> {
        (0..replicates)
            .into_par_iter()
            .map(|r| run_replicate(scenario, methods, seed, r, opts))
            .collect()
    };
    let outcomes = match opts.threads.or_else(threads_from_env) {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    methods
        .iter()
        .enumerate()
        .map(|(m, &kind)| {
            let column: Vec<&Outcome> = outcomes.iter().map(|row| &row[m]).collect();
            summarize(scenario, kind, &column, opts.level)
        })
        .collect()
}

/// Value of the leading `schema_version` column.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const PARAMETER_COLUMNS: [&str; 5] = ["eta_bar", "xi_bar", "var_eta", "var_xi", "rho"];

/// CSV header for [`summaries_to_csv`].
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "schema_version", "scenario", "n", "prevalence", "se_true", "sp_true", "rho_true", "var_eta_true",
        "var_xi_true", "link", "method", "requested", "replicates_used", "fit_failures",
        "generation_failures", "failure_rate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in PARAMETER_COLUMNS {
        for stat in ["truth", "bias", "sd", "avg_se"] {
            h.push(format!("{p}_{stat}"));
        }
    }
    for c in ["coverage_eta_bar", "coverage_eta_bar_mcse", "coverage_xi_bar", "coverage_xi_bar_mcse"] {
        h.push(c.to_string());
    }
    h
}

/// One row per `(scenario, method)`. `scenario_ids` labels each summary.
pub fn summaries_to_csv(rows: &[(usize, SimulationSummary)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(csv_header()).map_err(io)?;
    for (id, s) in rows {
        let sc = &s.scenario;
        let mut rec = vec![
            CSV_SCHEMA_VERSION.to_string(),
            id.to_string(),
            sc.n.to_string(),
            sc.prevalence.to_string(),
            sc.se_true.to_string(),
            sc.sp_true.to_string(),
            sc.rho.to_string(),
            sc.var_eta_true.to_string(),
            sc.var_xi_true.to_string(),
            sc.link.to_string(),
            s.method.to_string(),
            s.requested.to_string(),
            s.replicates_used.to_string(),
            s.fit_failures.to_string(),
            s.generation_failures.to_string(),
            s.failure_rate.to_string(),
        ];
        for p in &s.parameters {
            rec.extend([p.truth, p.bias, p.sd, p.avg_se].iter().map(f64::to_string));
        }
        rec.extend(
            [s.coverage_eta, s.coverage_eta_mcse, s.coverage_xi, s.coverage_xi_mcse]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
