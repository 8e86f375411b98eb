use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use pilotwave_cli::presets::PRESETS;
use pilotwave_cli::run::{output_dir, run_experiment, Overrides};
use pilotwave_cli::{load_config, verify};

#[derive(Parser)]
#[command(
    name = "pilotwave",
    version,
    about = "Least-action Markov chains for double-slit pilot-wave dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the chain, sample trajectories and write all artifacts.
    Run {
        /// Config file or preset name.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        particles: Option<usize>,
        /// Output directory (relative paths resolve against $PILOTWAVE_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check marginals, non-crossing, oracle agreement and the Wasserstein identity.
    Verify {
        config: String,
        /// Perturb one matrix entry by 1e-6 to exercise the detectors.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Built-in configurations.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Names and descriptions.
    List,
    /// Print a preset as TOML.
    Show { name: String },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            particles,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            Overrides { seed, particles, out }.apply(&mut cfg);
            cfg.resolve()?;
            let manifest = run_experiment(&cfg)?;
            println!(
                "wrote {} files to {}",
                manifest.files.len() + 1,
                output_dir(&cfg).display()
            );
            if let Some(tv) = manifest.derived.tv_distance {
                println!("screen TV distance {tv:.4e} ({} particles)", manifest.particles);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config, inject_fault } => {
            let cfg = load_config(&config)?;
            let report = verify::verify(&cfg, inject_fault)?;
            print!("{report}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for p in &PRESETS {
                        let cfg = pilotwave_cli::presets::load(p.name)?;
                        println!("{:<6} {}", p.name, cfg.description);
                    }
                }
                PresetAction::Show { name } => {
                    let p = pilotwave_cli::presets::find(&name)
                        .ok_or_else(|| anyhow::anyhow!("unknown preset {name:?}"))?;
                    print!("{}", p.toml);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
