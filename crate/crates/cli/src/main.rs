use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slowfast::harness::{
    cmd_calibrate, cmd_reproduce_tables, cmd_run, cmd_stats, format_error_table, ArtifactSource, ExperimentConfig,
};
use slowfast::{Error, Result};

/// Calibrate and compare reduced models of the two-scale Lorenz 96 system.
#[derive(Parser)]
#[command(name = "slowfast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults are used for anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Shorten every averaging window for a quick check.
    #[arg(long)]
    smoke: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the calibration artifact.
    Calibrate(Common),
    /// Simulate the full and reduced models and write the diagnostics bundle.
    Run {
        #[command(flatten)]
        common: Common,
        /// Existing artifact; otherwise one in --out is reused or a new one is calibrated.
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Recompute the error table from the CSV bundle in --out.
    Stats(Common),
    /// Run all four reference regimes and compare with the reference values.
    ReproduceTables(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.smoke |= c.smoke;
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SLOWFAST_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("SLOWFAST_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn print_paths(out: &Path, files: &[&str]) {
    for f in files {
        println!("wrote {}", out.join(f).display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Calibrate(c) => {
            let cfg = load_config(&c)?;
            let a = cmd_calibrate(&cfg, &c.out)?;
            println!(
                "tau_trunc = {} (decay criterion met: {}), clamped eigenvalues: {}",
                a.metadata.tau_trunc, a.metadata.truncation_converged, a.metadata.clamped_eigenvalues
            );
            print_paths(&c.out, &[slowfast::harness::ARTIFACT_FILE]);
            Ok(true)
        }
        Command::Run { common, artifact } => {
            let cfg = load_config(&common)?;
            let source = artifact.map_or(ArtifactSource::Auto, ArtifactSource::File);
            let report = cmd_run(&cfg, &source, &common.out)?;
            print!("{}", format_error_table(&report.errors));
            for (name, status) in &report.models {
                if let slowfast::harness::ModelStatus::Failed(msg) = status {
                    eprintln!("{name} failed: {msg}");
                }
            }
            Ok(!report.failed())
        }
        Command::Stats(c) => {
            let errors = cmd_stats(&c.out)?;
            print!("{}", format_error_table(&errors));
            Ok(true)
        }
        Command::ReproduceTables(c) => {
            let cfg = load_config(&c)?;
            let tables = cmd_reproduce_tables(&cfg, &c.out)?;
            print!("{}", tables.to_text());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
