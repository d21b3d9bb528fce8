use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use volterra_cli::{apply_overrides, emit, run, CliError, EmitFormat, RunConfig};

/// Batch solver runs: Volterra equations, risk measure suites, convergence
/// studies. Reads one JSON config, writes a JSON bundle and CSV tables.
#[derive(Parser, Debug)]
#[command(name = "volterra", version)]
struct Args {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for emitted files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Emission format.
    #[arg(long, default_value = "both")]
    format: EmitFormat,
    /// Dot-path config overrides, KEY=VALUE; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(args: &Args) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", args.config.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    let value = apply_overrides(value, &args.overrides)?;
    let config = RunConfig::from_value(value)?;
    let bundle = run(&config)?;
    let files = emit(&bundle, &args.out, args.format)?;
    Ok(serde_json::json!({
        "ok": true,
        "experiment": bundle.experiment,
        "config_hash": bundle.config_hash,
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let payload = serde_json::json!({
                "ok": false,
                "error": { "kind": err.kind(), "message": err.to_string() },
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
