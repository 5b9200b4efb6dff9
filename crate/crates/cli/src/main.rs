use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tamopt::commands::{self, CliError, Command, Options};
use tamopt::config::parse_config;
use tamopt::output::OutputDir;

/// Torque-aware momentum experiments.
#[derive(Debug, Parser)]
#[command(name = "tamopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Record per-step telemetry of one optimizer run per seed.
    Trajectory(Common),
    /// Label-flip online benchmark (MLP only).
    Online(Common),
    /// TAM for `switch_step` steps, then SGDM at half the learning rate.
    Warmup(Common),
    /// Spawn two copies, train with different batch orders, measure the loss barrier.
    Barrier(Common),
    /// Sweep one hyperparameter over `[grid] values`.
    Gridsearch(Common),
    /// Compare analytic gradients with central differences.
    Gradcheck(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`; default `out`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of seed indices (overrides `seeds`).
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "TAMOPT_THREADS", default_value_t = 0)]
    threads: usize,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    let (cmd, common) = match cli.command {
        Cmd::Trajectory(c) => (Command::Trajectory, c),
        Cmd::Online(c) => (Command::Online, c),
        Cmd::Warmup(c) => (Command::Warmup, c),
        Cmd::Barrier(c) => (Command::Barrier, c),
        Cmd::Gridsearch(c) => (Command::Gridsearch, c),
        Cmd::Gradcheck(c) => (Command::Gradcheck, c),
    };
    if common.seeds == Some(0) {
        return fail("usage", "--seeds must be >= 1".into(), 2);
    }
    let opts = Options {
        out_dir: common.out_dir,
        seeds: common.seeds,
        threads: common.threads,
    };
    let result = parse_config(&common.config)
        .map_err(CliError::from)
        .and_then(|cfg| {
            let outcome = commands::run(cmd, &cfg, &opts)?;
            write_meta(cmd, &common.config, &opts, &outcome.files)?;
            Ok(outcome)
        });
    match result {
        Ok(outcome) => {
            println!("{}", outcome.report);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Sidecar with invocation details; the only output that varies between
/// identical runs.
fn write_meta(cmd: Command, config: &std::path::Path, opts: &Options, files: &[PathBuf]) -> Result<(), CliError> {
    let Some(dir) = files.first().and_then(|f| f.parent()) else {
        return Ok(());
    };
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "command": cmd.name(),
        "config": config.display().to_string(),
        "version": env!("CARGO_PKG_VERSION"),
        "threads": opts.threads,
        "created_unix": created,
        "files": files
            .iter()
            .filter_map(|f| f.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect::<Vec<_>>(),
    });
    OutputDir::create(dir)?.write_json("meta.json", &meta)?;
    Ok(())
}
