//! `diagmeta`: fit bivariate meta-analysis models of diagnostic accuracy,
//! draw SROC plots and run simulation studies.

mod report;
mod simconfig;
mod sroc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use diagmeta_core::fit::{fit_model, FitOptions};
use diagmeta_core::likelihood::{LikelihoodSettings, ModelKind};
use diagmeta_core::simulate::{paper_grid, run_scenario, summaries_to_csv, SimulationOptions};
use diagmeta_core::{CorrectionPolicy, LinkFunction, MetaDataset, QuadratureScheme};

use report::{FitConfig, FitReport};
use simconfig::SimConfig;

#[derive(Parser)]
#[command(name = "diagmeta", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV of 2x2 tables and write a JSON report.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "mtm")]
        model: ModelKind,
        #[arg(long, default_value = "logit")]
        link: LinkFunction,
        #[arg(long, default_value_t = 21)]
        gh_nodes: usize,
        #[arg(long, default_value = "fixed-grid")]
        quadrature: QuadratureScheme,
        #[arg(long, default_value = "half-cell")]
        correction: CorrectionPolicy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw SROC curves, summary points and confidence regions from fit reports.
    Sroc {
        #[arg(long = "fit", required = true, num_args = 1..)]
        fits: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulation scenarios and write one CSV row per scenario and method.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        grid: Option<Grid>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Fit failures exit with 2, usage and input errors with 1.
enum Done {
    Ok,
    FitFailed,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_report(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a fit report", path.display()))
}

fn run_fit(config: FitConfig, out: &Path) -> Result<Done> {
    let text = std::fs::read_to_string(&config.data)
        .with_context(|| format!("cannot read {}", config.data))?;
    let ds = MetaDataset::from_csv(&text)?;
    let opts = FitOptions {
        likelihood: LikelihoodSettings {
            correction: config.correction,
            nodes: config.gh_nodes,
            scheme: config.quadrature,
        },
        seed: config.seed,
        ..Default::default()
    };
    let fit = fit_model(&ds, config.model, config.link, &opts)?;
    let ids: Vec<String> = ds.iter().map(|s| s.id().to_string()).collect();
    let report = FitReport::new(config, &fit, &ids);
    write(out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    if let Some(reason) = &report.failure {
        eprintln!("fit failed: {reason}; report written to {}", out.display());
        return Ok(Done::FitFailed);
    }
    Ok(Done::Ok)
}

fn run_sroc(fits: &[PathBuf], out: &Path) -> Result<Done> {
    let mut layers = Vec::new();
    for path in fits {
        let r = read_report(path)?;
        if let Some(reason) = &r.failure {
            eprintln!("{} records a failed fit ({reason}); no plot drawn", path.display());
            return Ok(Done::FitFailed);
        }
        layers.push(sroc::layer(&r)?);
    }
    write(out, &sroc::render(&layers))?;
    Ok(Done::Ok)
}

fn run_simulate(
    config: Option<&Path>,
    grid: Option<Grid>,
    replicates: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Done> {
    let cfg = match config {
        Some(p) => SimConfig::load(p)?,
        None if grid.is_some() => SimConfig::default(),
        None => bail!("simulate needs --config or --grid"),
    };
    let mut scenarios = cfg.scenarios.clone();
    if let Some(Grid::Paper) = grid {
        scenarios.extend(paper_grid(cfg.var_eta_true, cfg.var_xi_true));
    }
    if scenarios.is_empty() {
        bail!("no scenarios to run");
    }
    let replicates = replicates.or(cfg.replicates).unwrap_or(1000);
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let mut opts = SimulationOptions {
        threads: cfg.threads,
        ..Default::default()
    };
    opts.fit.likelihood = LikelihoodSettings {
        correction: cfg.fit.correction,
        nodes: cfg.fit.gh_nodes,
        scheme: cfg.fit.quadrature,
    };
    let mut rows = Vec::new();
    for (id, sc) in scenarios.iter().enumerate() {
        // every scenario gets its own stream family
        let s = seed.wrapping_add(id as u64);
        for summary in run_scenario(sc, replicates, &cfg.methods, s, &opts)? {
            rows.push((id, summary));
        }
    }
    write(out, &summaries_to_csv(&rows)?)?;
    Ok(Done::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Fit {
            data,
            model,
            link,
            gh_nodes,
            quadrature,
            correction,
            seed,
            out,
        } => {
            let config = FitConfig {
                data: data.to_string_lossy().into_owned(),
                model,
                link,
                gh_nodes,
                quadrature,
                correction,
                seed,
            };
            run_fit(config, &out)
        }
        Command::Sroc { fits, out } => run_sroc(&fits, &out),
        Command::Simulate {
            config,
            grid,
            replicates,
            seed,
            out,
        } => run_simulate(config.as_deref(), grid, replicates, seed, &out),
    };
    match result {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::FitFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
