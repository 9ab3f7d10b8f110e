use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldlab::{ExperimentConfig, Pool};

#[derive(Parser)]
#[command(name = "ldlab", version, about = "Precise large deviation experiments for heavy-tailed time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the model catalog.
    ListModels,
    /// Check a config and list every violation.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>, workers: Option<usize>, seed: Option<u64>) -> anyhow::Result<i32> {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return Ok(1);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = Some(w);
    }
    let dir = out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("ldlab-out"));
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = Pool::new(workers)?;
    let bundle = match ldlab::run(&cfg, pool.workers(), &pool) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{e}");
            return Ok(1);
        }
    };
    bundle.write(&dir)?;
    for c in &bundle.summary.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for e in &bundle.summary.errors {
        println!("ERROR {e}");
    }
    println!("wrote {}", dir.display());
    Ok(bundle.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, workers, seed } => run(config, out, workers, seed).unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            1
        }),
        Command::ListModels => {
            print!("{}", ldlab::catalog::list_models());
            0
        }
        Command::ValidateConfig { config } => match ExperimentConfig::load_valid(&config) {
            Ok(_) => {
                println!("ok");
                0
            }
            Err(e) => {
                eprintln!("{e}");
                1
            }
        },
    };
    ExitCode::from(code as u8)
}
