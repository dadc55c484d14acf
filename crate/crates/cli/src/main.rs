mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use run::Outputs;
use scenario::{Config, KatrielConfig, Overrides, Scenario};

/// Slow-fast systems with a turning point at the axis: simulation, C-trajectories and inflation thresholds.
#[derive(Parser, Debug)]
#[command(name = "slowfast", version)]
struct Cli {
    /// TOML file with a `[scenario]` and/or `[katriel]` table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario's ε.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Overrides the scenario's ρ (and drops any `m`).
    #[arg(long, global = true, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// Overrides the shadowing tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Accepted for scripts; every command is deterministic and uses no RNG.
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Pick {
    /// Built-in scenario used when no `--config` is given.
    #[arg(long, default_value = "retard5")]
    scenario: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrates every starting point; writes trajectory and event CSVs.
    Simulate(Pick),
    /// Builds C-trajectories from the raw starting ordinates.
    Ctraj(Pick),
    /// Fréchet distance between simulation and C-trajectory; exit status 2 on failure.
    Verify(Pick),
    /// Passages through the axis halo.
    Exits(Pick),
    /// Trajectories and the slow curve in the lens coordinate.
    LensView(Pick),
    /// Δ and its direct simulation over a (ν, μ) grid.
    KatrielSweep,
    /// Inflation threshold μ*(ν) and the fit of ln μ* against 1/ν.
    KatrielThreshold,
    /// Quantitative checks of the comparison lemmas; exit status 2 on failure.
    Props {
        #[arg(long = "at", value_delimiter = ',', default_values_t = [0.01, 0.005])]
        eps_list: Vec<f64>,
    },
    /// Datasets behind a named figure.
    Figure {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(scenario::FIGURES))]
        name: String,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides { eps: self.eps, rho: self.rho, tol: self.tol }
    }

    fn config(&self) -> Result<Config> {
        match &self.config {
            Some(path) => Config::load(path),
            None => Ok(Config::default()),
        }
    }

    fn scenario(&self, pick: &Pick) -> Result<Scenario> {
        let s = match self.config()?.scenario {
            Some(s) => s,
            None if self.config.is_some() => bail!("config has no [scenario] table"),
            None => match scenario::builtin(&pick.scenario)?.into_iter().next() {
                Some(s) => s,
                None => bail!("{} has no trajectory scenario", pick.scenario),
            },
        };
        Ok(s.apply(self.overrides()))
    }

    fn katriel(&self) -> Result<KatrielConfig> {
        Ok(self.config()?.katriel.unwrap_or_default())
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let mut out = Outputs::new(&cli.out)?;
    let ok = match &cli.command {
        Command::Simulate(p) => run::simulate(&cli.scenario(p)?, &mut out).map(|_| true)?,
        Command::Ctraj(p) => run::ctraj(&cli.scenario(p)?, &mut out).map(|_| true)?,
        Command::Verify(p) => run::verify(&cli.scenario(p)?, &mut out)?,
        Command::Exits(p) => run::exits(&cli.scenario(p)?, &mut out).map(|_| true)?,
        Command::LensView(p) => run::lens_view(&cli.scenario(p)?, &mut out).map(|_| true)?,
        Command::KatrielSweep => run::katriel_sweep(&cli.katriel()?, &mut out, "katriel").map(|_| true)?,
        Command::KatrielThreshold => run::katriel_threshold(&cli.katriel()?, &mut out, "katriel").map(|_| true)?,
        Command::Props { eps_list } => run::props(eps_list, &mut out)?,
        Command::Figure { name } => {
            let scenarios: Vec<Scenario> = scenario::builtin(name)?.into_iter().map(|s| s.apply(cli.overrides())).collect();
            run::figure(name, &scenarios, &mut out).map(|_| true)?
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
