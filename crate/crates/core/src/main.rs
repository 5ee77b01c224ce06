use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};

use geodephase::config::{load_config, Format};
use geodephase::experiment::{self, RunError, Timing};

#[derive(Parser, Debug)]
#[command(name = "geodephase", version, about = "Geometric-phase spin relaxation: Monte Carlo runs and analytic rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config and write its outputs.
    Run {
        config: PathBuf,
        /// Overrides `root_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `output.formats`, e.g. `csv,json,svg`.
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<Format>>,
    },
    /// Print analytic rates and the regime report for a config as JSON.
    Oracle { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            formats,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.root_seed = Some(s);
            }
            if let Some(d) = out {
                cfg.output.dir = d;
            }
            if let Some(f) = formats {
                cfg.output.formats = f;
            }
            // overrides must still form a valid config
            cfg.resolve()?;
            experiment::prepare_output_dir(&cfg.output.dir)?;

            let start = Instant::now();
            let bundle = experiment::run_experiment(&cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            if let Some(reg) = &bundle.regime {
                if !reg.all_satisfied() {
                    warn!("regime conditions not all satisfied; see the bundle's regime report");
                }
            }
            for r in &bundle.rates {
                match (&r.oracle, r.relative_deviation) {
                    (Some(o), Some(d)) => println!(
                        "{}: rate {:.6e} ± {:.2e}, oracle {:.6e} ({}), deviation {:+.2}%",
                        r.label,
                        r.estimate.rate,
                        r.estimate.rate_stderr,
                        o.rate,
                        o.formula,
                        100.0 * d
                    ),
                    _ => println!("{}: rate {:.6e} ± {:.2e}", r.label, r.estimate.rate, r.estimate.rate_stderr),
                }
            }
            if let Some(scan) = &bundle.elliott {
                println!(
                    "elliott: slope {:.6e} ± {:.2e}, a = {:.4}, spread {:.2}%, R² = {:.5}",
                    scan.slope,
                    scan.slope_stderr,
                    scan.prefactor_a,
                    100.0 * scan.prefactor_spread,
                    scan.r_squared
                );
            }
            let dir = cfg.output.dir.clone();
            let written = experiment::export(&bundle, &cfg.output.formats, &dir)?;
            let timing = Timing {
                config_hash: bundle.config_hash.clone(),
                wall_clock_seconds: elapsed,
                threads: rayon::current_num_threads(),
            };
            experiment::write_timing(&dir, &timing)?;
            for p in written {
                info!("wrote {}", p.display());
            }
            println!("outputs in {} ({elapsed:.2} s)", dir.display());
            Ok(())
        }
        Command::Oracle { config } => {
            let cfg = load_config(&config)?;
            let summary = experiment::oracle_summary(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation failures
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
