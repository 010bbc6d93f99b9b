//! Batch front-end: `run <config>` and `list-builtins`.
//!
//! A run writes `report.jsonl` (a timestamp header line, then one JSON object
//! per record), and, when the task produces them, `series.csv`, `plot.svg`
//! and task files such as `u.csv`. Exit codes: 0 when every asserted check
//! passes, 1 on a failing check or task error, 2 on a config error.

pub mod config;
pub mod plot;
pub mod tasks;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::{error, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub use config::{builtin_listing, ConfigError, ExperimentConfig, Task};
use plot::{log_log_svg, Curve};
use tasks::{execute, Record, Run, TaskError};

#[derive(Debug, Parser)]
#[command(name = "pconvex", version, about = "p-convexity checks and weighted L2 estimates for du = f")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by an INI config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides `[experiment] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        verbose: bool,
    },
    /// Print the built-in domain and weight constructors.
    ListBuiltins,
}

/// Outcome of a run.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: u8,
    pub records: Vec<Record>,
    pub message: Option<String>,
}

impl RunOutcome {
    fn config_error(e: ConfigError) -> Self {
        RunOutcome { exit_code: 2, records: Vec::new(), message: Some(format!("config error: {e}")) }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListBuiltins => {
            print!("{}", list_builtins());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, seed, verbose } => {
            let level = if verbose { "debug" } else { "warn" };
            env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
            let outcome = run_path(&config, &out, seed);
            if let Some(m) = &outcome.message {
                eprintln!("{m}");
            }
            for r in outcome.records.iter().filter(|r| r.pass == Some(false)) {
                eprintln!("FAILED {}", r.to_json());
            }
            ExitCode::from(outcome.exit_code)
        }
    }
}

pub fn list_builtins() -> String {
    builtin_listing()
}

pub fn run_path(path: &Path, out: &Path, seed: Option<u64>) -> RunOutcome {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return RunOutcome::config_error(ConfigError {
                line: None,
                field: path.display().to_string(),
                message: format!("cannot read config: {e}"),
            })
        }
    };
    run_text(&text, out, seed)
}

/// FNV-1a, used to name the per-task random stream.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn run_text(text: &str, out: &Path, seed: Option<u64>) -> RunOutcome {
    let mut cfg = match ExperimentConfig::parse(text) {
        Ok(c) => c,
        Err(e) => return RunOutcome::config_error(e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream_id(cfg.task.name()));
    info!("task {} with seed {}", cfg.task, cfg.seed);
    let mut run = Run::new(&cfg, rng);
    let result = execute(&mut run);
    let mut message = None;
    let exit_code = match result {
        Err(TaskError::Config(e)) => return RunOutcome::config_error(e),
        Err(TaskError::Failed(m)) => {
            error!("task {} failed: {m}", cfg.task);
            run.records.push(Record::check("task_error", false, json!({"task": cfg.task.name(), "error": m})));
            message = Some(format!("task {} failed: {m}", cfg.task));
            1
        }
        Ok(()) if run.records.iter().any(|r| r.pass == Some(false)) => 1,
        Ok(()) => 0,
    };
    let Run { records, series, files, .. } = run;
    if let Err(e) = write_outputs(out, &records, series.as_ref(), &files) {
        return RunOutcome { exit_code: 1, records, message: Some(format!("cannot write outputs to {}: {e}", out.display())) };
    }
    RunOutcome { exit_code, records, message }
}

fn write_outputs(
    out: &Path,
    records: &[Record],
    series: Option<&tasks::Series>,
    files: &[(String, String)],
) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut report = json!({ "timestamp": stamp }).to_string();
    report.push('\n');
    for r in records {
        report.push_str(&r.to_json().to_string());
        report.push('\n');
    }
    fs::write(out.join("report.jsonl"), report)?;
    if let Some(s) = series {
        fs::write(out.join("series.csv"), s.to_csv())?;
        if let Some((title, y_label)) = &s.plot {
            let curves: Vec<Curve> = (1..s.columns.len())
                .map(|k| Curve { label: s.columns[k].clone(), points: s.rows.iter().map(|r| (r[0], r[k])).collect() })
                .collect();
            fs::write(out.join("plot.svg"), log_log_svg(title, &s.columns[0], y_label, &curves))?;
        }
    }
    for (name, contents) in files {
        fs::write(out.join(name), contents)?;
    }
    Ok(())
}
