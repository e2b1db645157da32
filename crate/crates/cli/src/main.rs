use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use kglattice_cli::config::ExperimentConfig;
use kglattice_cli::experiments::{self, Experiment};

#[derive(Parser)]
#[command(name = "kglattice", version, about = "Numerical checks for the lattice Klein-Gordon field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its results directory.
    Run {
        experiment: Experiment,
        /// TOML configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parent of the results directory.
        #[arg(long, env = "KGLAT_OUT", default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of grid refinements in convergence studies.
        #[arg(long)]
        refine: Option<usize>,
        /// Multiplies every absolute tolerance.
        #[arg(long)]
        tol_scale: Option<f64>,
    },
    /// Print the default configuration.
    Config,
    /// List the experiments.
    List,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(true)
        }
        Command::List => {
            for e in Experiment::all() {
                println!("{}", e.name());
            }
            Ok(true)
        }
        Command::Run { experiment, config, out, seed, refine, tol_scale } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(r) = refine {
                cfg.run.refine = r;
            }
            if let Some(x) = tol_scale {
                cfg.run.tol_scale = x;
            }
            cfg.validate()?;
            let report = experiments::run(experiment, &cfg)?;
            let dir = out.join(experiment.name());
            report.write(&dir, experiment.name(), &cfg)?;
            print!("{}", report.summary(experiment.name()));
            println!("results in {}", dir.display());
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
