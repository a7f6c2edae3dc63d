//! `mvlab run <config.json>` and `mvlab validate <config.json>`.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) => "io",
        }
    }
}

/// Domain errors are configuration problems; everything else raised while
/// running is numeric.
impl From<mvlab::Error> for CliError {
    fn from(e: mvlab::Error) -> Self {
        match e {
            mvlab::Error::Domain(_) => CliError::Config(e.to_string()),
            mvlab::Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "mvlab", version, about = "McKean-Vlasov simulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Master seed (overrides `noise.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path, seed: Option<u64>) -> Result<(config::RunConfig, serde_json::Value), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (mut cfg, mut raw) = config::parse(&text)?;
    if let Some(s) = seed {
        cfg.noise.seed = s;
        raw["noise"]["seed"] = json!(s);
    }
    Ok((cfg, raw))
}

fn run(config: &Path, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let (cfg, raw) = load(config, seed)?;
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let plan = experiments::prepare(&cfg, &base)?;
    let dir = out.or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("mvlab-out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| CliError::Io(e.to_string()))?;
    let report = pool.install(|| experiments::execute(&plan, &dir))?;
    let manifest = json!({
        "mvlab_version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "seed": cfg.noise.seed,
        "threads": threads,
        "config": raw,
        "outputs": report.outputs,
        "summary": report.summary,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n").map_err(|e| CliError::Io(e.to_string()))?;
    Ok(dir)
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", json!({"status": "error", "kind": e.kind(), "message": e.to_string()}));
    ExitCode::from(e.code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, threads, seed } => match run(&config, out, threads, seed) {
            Ok(dir) => {
                println!("{}", json!({"status": "ok", "output": dir.display().to_string()}));
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Validate { config } => {
            let checked = load(&config, None).and_then(|(cfg, _)| {
                let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
                experiments::prepare(&cfg, &base).map(|_| cfg)
            });
            match checked {
                Ok(cfg) => {
                    println!("{}", json!({"status": "ok", "experiment": cfg.experiment.name()}));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
