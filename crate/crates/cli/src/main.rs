//! `kslab <scenario> [--config FILE] [--samples N] [--seed S] [--out DIR] [--grid M] [--tol T]`
//!
//! Values given as flags override the config file, which overrides the
//! scenario defaults. Exit status: 0 when every check passes, 1 when a check
//! fails, 2 on configuration or compute errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kslab::scenario::{run_scenario, Parameters, ScenarioConfig, ScenarioKind};

#[derive(Parser)]
#[command(name = "kslab", version, about = "Localization experiments for 1D continuum Anderson models")]
struct Cli {
    #[command(subcommand)]
    scenario: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized checks of the phase derivative formulas and solution estimates.
    Identities(Common),
    /// Shooting eigenvalues against the finite-difference oracle, and the coupling round trip.
    Spectrum(Common),
    /// Monte Carlo correlator series with its exponential fit.
    CorrelatorDecay(Common),
    /// Discretized kernel norms, block identity, mesh doubling and continuity.
    OperatorNorm(Common),
    /// Both sides of the fixed-energy correlator bound.
    BoundCheck(Common),
    /// ln R over a sweep of large couplings.
    LargeCoupling(Common),
    /// Smooth small-amplitude model: eigenfunction profiles and decay fit.
    ColdingDeiftDemo(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON scenario config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Kernel grid size m.
    #[arg(long)]
    grid: Option<usize>,
    /// Integrator / solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

impl Command {
    fn split(self) -> (ScenarioKind, Common) {
        match self {
            Command::Identities(c) => (ScenarioKind::Identities, c),
            Command::Spectrum(c) => (ScenarioKind::Spectrum, c),
            Command::CorrelatorDecay(c) => (ScenarioKind::CorrelatorDecay, c),
            Command::OperatorNorm(c) => (ScenarioKind::OperatorNorm, c),
            Command::BoundCheck(c) => (ScenarioKind::BoundCheck, c),
            Command::LargeCoupling(c) => (ScenarioKind::LargeCoupling, c),
            Command::ColdingDeiftDemo(c) => (ScenarioKind::ColdingDeiftDemo, c),
        }
    }
}

fn build_config(kind: ScenarioKind, flags: &Common) -> kslab::Result<ScenarioConfig> {
    let mut config = match &flags.config {
        Some(path) => {
            let c = ScenarioConfig::from_file(path)?;
            if c.scenario != kind {
                return Err(kslab::Error::Config(format!(
                    "{}: config is for scenario `{}`, not `{kind}`",
                    path.display(),
                    c.scenario
                )));
            }
            c
        }
        None => ScenarioConfig::new(kind),
    };
    let overrides = Parameters { samples: flags.samples, seed: flags.seed, m: flags.grid, tol: flags.tol, ..Default::default() };
    config.parameters = overrides.or(&config.parameters);
    if let Some(out) = &flags.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let (kind, flags) = Cli::parse().scenario.split();
    let report = build_config(kind, &flags).and_then(|c| run_scenario(&c));
    match report {
        Ok(r) => {
            for c in &r.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                match c.witness {
                    Some(w) => println!("{status} {} ({w:e}): {}", c.name, c.detail),
                    None => println!("{status} {}: {}", c.name, c.detail),
                }
            }
            println!("config_hash {}", r.config_hash);
            if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
