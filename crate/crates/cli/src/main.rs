use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ergolab_cli::bundle::write_bundle;
use ergolab_cli::config::{self, ExperimentConfig, MODEL_IDS};
use ergolab_cli::experiments;

#[derive(Parser)]
#[command(name = "ergolab", version, about = "Ergodic diffusion and CLT experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config or a previous manifest.json.
    Run {
        config: PathBuf,
        /// Exit with status 1 when any verdict fails.
        #[arg(long)]
        assert: bool,
        /// Worker threads; results do not depend on it.
        #[arg(long, env = "ERGOLAB_THREADS")]
        threads: Option<usize>,
        /// Output directory; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and estimate its cost without running it.
    Validate { config: PathBuf },
    /// List model ids and their parameters.
    ListModels,
}

fn load_resolved(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = config::load(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    cfg.resolve().map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(cfg)
}

fn run(path: &Path, assert: bool, threads: Option<usize>, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load_resolved(path)?;
    let diag = cfg.diagnostics();
    for w in &diag.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = diag.errors.first() {
        anyhow::bail!("{}: {e}", path.display());
    }
    let threads = threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    let start = Instant::now();
    let outcome = experiments::run(&cfg, threads)?;
    let wall = start.elapsed().as_secs_f64();
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output));
    let manifest = write_bundle(&dir, &cfg, &outcome, threads, wall)?;
    for v in &outcome.report.verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    println!("wrote {}", manifest.display());
    Ok(if assert && !outcome.report.passed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn validate(path: &Path) -> Result<ExitCode> {
    let cfg = match load_resolved(path) {
        Ok(c) => c,
        Err(e) => {
            println!("error {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    let d = cfg.diagnostics();
    for e in &d.errors {
        println!("error {}: {}", e.path, e.message);
    }
    for w in &d.warnings {
        println!("warning {w}");
    }
    println!("estimated steps {:.3e} (budget {:.1e})", d.estimated_steps, d.step_budget);
    Ok(if d.errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn list_models() {
    let params = ["half_width", "alpha beta half_width", "alpha half_width", "dim friction stiffness", "gamma0 gamma2 temp0 temp2 k"];
    for (id, p) in MODEL_IDS.iter().zip(params) {
        println!("{id:<11} {p}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Run {
            config,
            assert,
            threads,
            out,
        } => run(&config, assert, threads, out),
        Command::Validate { config } => validate(&config),
        Command::ListModels => {
            list_models();
            Ok(ExitCode::SUCCESS)
        }
    };
    match r {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
