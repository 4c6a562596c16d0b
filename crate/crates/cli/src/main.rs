//! kamred: reduce quasiperiodically forced quadratic Hamiltonians to normal
//! form and run the accompanying classical and quantum simulations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use serde_json::json;

use commands::{CliError, Outcome};
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "kamred", version, about = "KAM reduction of quasiperiodically forced quadratic Hamiltonians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = "KAMRED_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides output.dir from the config.
    #[arg(long, global = true, env = "KAMRED_OUT")]
    out: Option<PathBuf>,
    /// Seed for scans and random initial data; overrides the config.
    #[arg(long, global = true, env = "KAMRED_SEED")]
    seed: Option<u64>,
    /// Worker threads for scans (default: all cores).
    #[arg(long, global = true, env = "KAMRED_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, env = "KAMRED_LOG_LEVEL", default_value = "warn")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run the KAM iteration at the configured ω.
    Reduce,
    /// Estimate the excised fraction of frequencies.
    Scan,
    /// Integrate classical trajectories and check the conjugation.
    SimClassical,
    /// Propagate the quantized Hamiltonian and track Sobolev norms.
    SimQuantum,
    /// Driven oscillator: linear-forcing reduction and norm growth.
    Graffi,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config: no configuration file given".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.scan.seed = seed;
        cfg.simulation.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.output.dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("kamred-out"));
    cfg.output.dir = Some(out.display().to_string());
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
    Ok((cfg, out))
}

fn write_error(dir: &std::path::Path, e: &CliError) {
    let status = json!({"status": "error", "reason": e.reason(), "message": e.to_string(), "exit_code": e.exit_code()});
    let _ = commands::write(dir, "status.json", &(serde_json::to_string_pretty(&status).expect("json serializes") + "\n"));
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let (cfg, out) = match load(cli) {
        Ok(v) => v,
        Err(e) => {
            if let Some(dir) = &cli.out {
                if std::fs::create_dir_all(dir).is_ok() {
                    write_error(dir, &e);
                }
            }
            return Err(e);
        }
    };
    commands::write(&out, "config.resolved.toml", &cfg.to_toml())?;
    let outcome = match cli.command {
        Command::Reduce => commands::cmd_reduce(&cfg, &out),
        Command::Scan => commands::cmd_scan(&cfg, &out),
        Command::SimClassical => commands::cmd_sim_classical(&cfg, &out),
        Command::SimQuantum => commands::cmd_sim_quantum(&cfg, &out),
        Command::Graffi => commands::cmd_graffi(&cfg, &out),
    };
    if let Err(e) = &outcome {
        write_error(&out, e);
    }
    let outcome = outcome?;
    let status = json!({"status": outcome.status, "exit_code": outcome.exit, "summary": outcome.summary});
    commands::write(&out, "status.json", &(serde_json::to_string_pretty(&status).expect("json serializes") + "\n"))?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(&cli) {
        Ok(o) => {
            println!("{}", json!({"status": o.status, "exit_code": o.exit}));
            ExitCode::from(o.exit as u8)
        }
        Err(e) => {
            error!("{e}");
            eprintln!("{}", json!({"status": "error", "reason": e.reason(), "message": e.to_string()}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
