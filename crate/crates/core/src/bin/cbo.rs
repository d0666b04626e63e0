use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cbo_core::experiments::{
    run_with_threads, write_result, ExperimentConfig, ExperimentKind, ExperimentResult,
};
use cbo_core::CboError;

/// Consensus-based optimization particle laboratory.
#[derive(Debug, Parser)]
#[command(name = "cbo", version)]
struct Cli {
    /// constants, simulate, optimize, moments, mfl, stability, concentration or wm-mc
    kind: ExperimentKind,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV and JSON outputs; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` with a dotted key, e.g. `params.sigma=0.1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run even when sigma is not below the critical level.
    #[arg(long)]
    allow_supercritical: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: &Cli) -> Result<ExperimentResult, CboError> {
    let mut config = ExperimentConfig::from_file(&cli.config, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.allow_supercritical {
        config.allow_supercritical = true;
    }
    if cli.out.is_some() {
        config.out = cli.out.clone();
    }
    let result = run_with_threads(cli.kind, &config, cli.threads)?;
    if let Some(dir) = &config.out {
        let written = write_result(&result, dir)?;
        log::info!("wrote {} files to {}", written.len(), dir.display());
    }
    Ok(result)
}

/// One `path = value` line per scalar of a JSON document.
fn flatten(path: &str, value: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) if items.iter().any(|v| v.is_object() || v.is_array()) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{path}[{i}]"), v, out);
            }
        }
        other => out.push(format!("{path} = {other}")),
    }
}

fn print_report(result: &ExperimentResult) {
    if let Some(report) = &result.constants {
        if result.kind == ExperimentKind::Constants {
            let value = serde_json::to_value(report).expect("report serializes");
            let mut lines = Vec::new();
            flatten("", &value, &mut lines);
            for line in lines {
                println!("{line}");
            }
            println!();
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&result.summary_document()).expect("summary serializes")
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(result) => {
            print_report(&result);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
