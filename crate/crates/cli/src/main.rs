use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use openinc_cli::{parse_config, run_experiment};

#[derive(Parser)]
#[command(
    name = "openinc",
    about = "Class-incremental learning with open-set recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every (method, seed) pair of a JSON experiment config.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Single-seed quick mode: replace the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            output_dir,
            seed,
            quiet,
        } => {
            let mut cfg = match parse_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            match run_experiment(&cfg) {
                Ok(outcome) => {
                    if !quiet {
                        for run in &outcome.runs {
                            println!("{} seed {}", run.method.name(), run.seed);
                            for r in &run.reports {
                                let auroc = r.auroc.map_or("-".to_string(), |a| format!("{a:.4}"));
                                println!(
                                    "  session {}: classes {} accuracy {:.4} auroc {} r_s {:.4} ({:.1}s)",
                                    r.session,
                                    r.observed_classes,
                                    r.accuracy,
                                    auroc,
                                    r.r_s,
                                    r.seconds
                                );
                            }
                        }
                        println!("summary: {}", outcome.summary_path.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
