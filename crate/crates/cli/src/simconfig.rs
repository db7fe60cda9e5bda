//! Simulation configuration files, TOML or JSON.

use std::path::Path;

use anyhow::{bail, Context, Result};
use diagmeta_core::likelihood::ModelKind;
use diagmeta_core::simulate::Scenario;
use diagmeta_core::{CorrectionPolicy, QuadratureScheme};
use serde::Deserialize;

fn default_methods() -> Vec<ModelKind> {
    vec![ModelKind::Approx, ModelKind::Mtm]
}

fn default_variance() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<ModelKind>,
    /// True variances for the paper grid.
    #[serde(default = "default_variance")]
    pub var_eta_true: f64,
    #[serde(default = "default_variance")]
    pub var_xi_true: f64,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub gh_nodes: usize,
    pub quadrature: QuadratureScheme,
    pub correction: CorrectionPolicy,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            gh_nodes: 21,
            quadrature: QuadratureScheme::Centered,
            correction: CorrectionPolicy::HalfCell,
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replicates: None,
            seed: None,
            threads: None,
            methods: default_methods(),
            var_eta_true: default_variance(),
            var_xi_true: default_variance(),
            fit: FitSection::default(),
            scenarios: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let config: SimConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            Some("toml") => toml::from_str(&text)?,
            _ => bail!("config must end in .toml or .json: {}", path.display()),
        };
        for s in &config.scenarios {
            s.validate()?;
        }
        Ok(config)
    }
}
