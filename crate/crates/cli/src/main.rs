use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use schwarz_pinn::experiment::{self, AnyConfig, RunOptions, PRESETS};

/// Additive Schwarz experiments with neural-network subdomain solvers.
///
/// CONFIG arguments accept a TOML file path or the name of a shipped preset.
#[derive(Debug, Parser)]
#[command(name = "schwarz-pinn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (seeds and subdomain solves run in parallel).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Divide epoch budgets by 5 and outer iterations by 2.
    #[arg(long, global = true)]
    desk_scale: bool,

    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a network experiment: decay_<seed>.csv and summary.json per case.
    Run {
        config: PathBuf,
        /// Only run the case with this label (repeatable).
        #[arg(long)]
        only: Vec<String>,
    },
    /// Run finite-difference Schwarz rate sweeps.
    Oracle {
        config: PathBuf,
        /// Only run the sweep with this label (repeatable).
        #[arg(long)]
        only: Vec<String>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
    /// Aggregate every summary below a results directory into one table.
    Report { dir: PathBuf },
    /// List the shipped presets.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> schwarz_pinn::Result<()> {
    let opts = |only: Vec<String>| RunOptions {
        out: cli.out.clone(),
        jobs: cli.jobs,
        only,
    };
    match cli.command {
        Command::Run { ref config, ref only } => {
            let mut cfg = experiment::load_experiment(config)?;
            if cli.desk_scale {
                cfg.desk_scale();
            }
            for s in experiment::run_experiment(&cfg, &opts(only.clone()))? {
                println!(
                    "{} {}: min {:.4e} mean {:.4e} ({:.1}s)",
                    s.experiment, s.label, s.min, s.mean, s.wall_time_s
                );
            }
        }
        Command::Oracle { ref config, ref only } => {
            let cfg = experiment::load_oracle(config)?;
            let summary = experiment::run_oracle(&cfg, &opts(only.clone()))?;
            for w in summary.sweeps {
                let ratio = w.asymptotic_ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
                println!(
                    "{} {}: tau {} final energy error {:.4e} asymptotic ratio {}",
                    summary.name, w.label, w.tau, w.final_energy_error, ratio
                );
            }
        }
        Command::Validate { ref config } => match experiment::validate_config(config)? {
            AnyConfig::Experiment(c) => {
                println!("{}: experiment `{}` with {} case(s) is valid", config.display(), c.name, c.cases.len())
            }
            AnyConfig::Oracle(c) => {
                println!("{}: oracle `{}` with {} sweep(s) is valid", config.display(), c.name, c.sweeps.len())
            }
        },
        Command::Report { ref dir } => print!("{}", experiment::report(dir)?),
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}
