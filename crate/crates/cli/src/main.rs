use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use addsel::config::ExperimentConfig;
use addsel::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "addsel",
    version,
    about = "Variable selection experiments for sparse additive models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (flat key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Population geometry of the candidate spaces.
    Geometry(Common),
    /// Seeded selection trials, one JSON line per trial plus a summary.
    Simulate(Common),
    /// Split-sample component estimation rate.
    Estimate(Common),
    /// RIP constant, events, explicit bounds and sample-size conditions.
    Diagnose(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Geometry(c) => ("geometry", c),
            Command::Simulate(c) => ("simulate", c),
            Command::Estimate(c) => ("estimate", c),
            Command::Diagnose(c) => ("diagnose", c),
        }
    }
}

/// Failure split into the stable exit codes: 2 for configuration, 1 otherwise.
pub enum Failure {
    Config(Error),
    Runtime(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(io::Error::other(e))
    }
}

fn error_object(f: &Failure) -> serde_json::Value {
    match f {
        Failure::Config(Error::Config { key, message }) => json!({
            "error": {"kind": "config", "key": key, "message": message}
        }),
        Failure::Config(e) | Failure::Runtime(e) => json!({
            "error": {"kind": e.kind(), "message": e.to_string()}
        }),
        Failure::Io(e) => json!({"error": {"kind": "io", "message": e.to_string()}}),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        Failure::Config(Error::config(
            "--config",
            format!("{}: {e}", common.config.display()),
        ))
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Failure::Config(Error::config(
                "--threads",
                "must be positive",
            )));
        }
        cfg.threads = Some(t);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let (name, common) = cli.command.parts();
    let cfg = load_config(common)?;
    let mut sink: Box<dyn Write> = match &common.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let manifest = json!({
        "manifest": {
            "command": name,
            "config": common.config.display().to_string(),
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "outputs": common.out.as_ref().map(|p| vec![p.display().to_string()]).unwrap_or_default(),
        }
    });
    writeln!(sink, "{}", serde_json::to_string(&manifest)?)?;
    let start = Instant::now();
    match &cli.command {
        Command::Geometry(_) => commands::geometry(&cfg, &mut sink)?,
        Command::Simulate(_) => commands::simulate(&cfg, &mut sink)?,
        Command::Estimate(_) => commands::estimate(&cfg, &mut sink)?,
        Command::Diagnose(_) => commands::diagnose(&cfg, &mut sink)?,
    }
    sink.flush()?;
    // timings go to the log so output files stay byte-identical across runs
    log::info!("{name} finished in {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADDSEL_LOG", "error")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", error_object(&f));
            match f {
                Failure::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
