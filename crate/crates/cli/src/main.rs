use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lfpmc_cli::{parse_config, plot_metrics, run_experiment, CliError};

#[derive(Parser)]
#[command(name = "lfpmc", version, about = "Likelihood-free PMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Overrides the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads; defaults to the available cores. Results do not
        /// depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a configuration file without running anything.
    Validate { config: PathBuf },
    /// Render boxplots (and a convergence chart) from a metrics CSV.
    Plot {
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        out_dir: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

fn fail(e: CliError, record_dir: Option<&Path>) -> ExitCode {
    if let Some(dir) = record_dir {
        e.write_record(dir);
    }
    eprintln!("error: {e}");
    eprint!("{}", e.record());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out_dir,
            threads,
        } => {
            let mut cfg = match read(&config).and_then(|t| parse_config(&t).map_err(CliError::from)) {
                Ok(cfg) => cfg,
                Err(e) => return fail(e, None),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = out_dir.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                pool = pool.num_threads(n.max(1));
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => return fail(CliError::io("starting worker threads", e), Some(&dir)),
            };
            match pool.install(|| run_experiment(&cfg, &dir)) {
                Ok(summary) => {
                    let m = &summary.manifest;
                    println!(
                        "{} finished: {} files in {}, {} simulator calls",
                        m.experiment,
                        m.files.len() + 1,
                        summary.out_dir.display(),
                        m.total_simulator_calls
                    );
                    if !m.failed_replicates.is_empty() {
                        eprintln!("warning: replicates {:?} failed; see failures.csv", m.failed_replicates);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e, Some(&dir)),
            }
        }
        Command::Validate { config } => match read(&config).and_then(|t| parse_config(&t).map_err(CliError::from)) {
            Ok(cfg) => {
                println!("ok: {} experiment, seed {}", cfg.kind.name(), cfg.seed);
                ExitCode::SUCCESS
            }
            Err(e) => fail(e, None),
        },
        Command::Plot { metrics, out_dir } => match read(&metrics).and_then(|t| plot_metrics(&t, &out_dir)) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e, None),
        },
    }
}
