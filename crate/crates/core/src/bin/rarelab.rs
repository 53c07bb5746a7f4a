use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rarelab::dynsys::SystemSpec;
use rarelab::experiment::{parse_config, run_experiment, RunOptions};
use rarelab::gmtheory::theta_at_periodic;
use rarelab::limits::compound_geom_pmf;

#[derive(Parser)]
#[command(name = "rarelab", version, about = "Rare-event limit laws for interval maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, env = "RARELAB_THREADS")]
        threads: Option<usize>,
        /// Fill the `ms` column with wall-clock times.
        #[arg(long)]
        record_timing: bool,
    },
    /// Print a theoretical value.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Extremal index at the periodic point of a word.
    Theta {
        #[arg(long, value_enum)]
        system: SystemArg,
        #[arg(long, value_delimiter = ',', required = true)]
        word: Vec<u64>,
    },
    /// Compound Poisson-geometric probability of `k` points by time `t`.
    Pmf {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        k: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Gauss,
    Doubling,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            threads,
            record_timing,
        } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let opts = RunOptions {
                seed,
                out_dir,
                threads,
                record_timing,
            };
            match run_experiment(&cfg, &opts) {
                Ok(out) => {
                    for e in &out.runtime_errors {
                        eprintln!("error: {e}");
                    }
                    let failed = out.rows.iter().filter(|r| !r.pass).count();
                    eprintln!(
                        "{} rows, {} failed, report at {}",
                        out.rows.len(),
                        failed,
                        out.report_path.display()
                    );
                    ExitCode::from(out.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Oracle { which } => {
            let value = match which {
                Oracle::Theta { system, word } => {
                    let sys = match system {
                        SystemArg::Gauss => SystemSpec::Gauss,
                        SystemArg::Doubling => SystemSpec::Doubling,
                    };
                    theta_at_periodic(&sys, &word)
                }
                Oracle::Pmf { t, theta, k } => {
                    if t >= 0.0 && theta > 0.0 && theta <= 1.0 {
                        Ok(compound_geom_pmf(t, theta, k))
                    } else {
                        Err(rarelab::Error::InvalidArgument("need t >= 0 and 0 < theta <= 1".into()))
                    }
                }
            };
            match value {
                Ok(v) => {
                    println!("{v}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
