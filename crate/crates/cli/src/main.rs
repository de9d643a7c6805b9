use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use pfp_cli::{parse_config, run, Command, EXIT_ERROR};
use pfp_core::Backend;
use serde_json::json;

/// Solve and cross-check distributional fixed-point equations of
/// smoothing-transform type.
///
/// Command-line flags override the config file's `run` block. Reports are
/// JSON on stdout; `stable-map` prints a `s,value` CSV curve. With
/// `--output PATH` the primary output goes to PATH instead, and `solve`
/// also writes its curve to `PATH.csv`.
///
/// Exit status: 0 success, 2 moment conditions not satisfied, 1 any error
/// (including a discrepancy flagged by `report`).
#[derive(Debug, Parser)]
#[command(name = "pfp", version)]
struct Cli {
    /// check | solve | simulate | stable-map | report
    command: Command,
    /// Problem file (JSON)
    config: PathBuf,
    /// Solver stopping tolerance on the sup-norm step [default: 1e-8]
    #[arg(long)]
    tol: Option<f64>,
    /// Absolute tolerance for equality clauses in the conditions [default: 1e-9]
    #[arg(long)]
    tol_eq: Option<f64>,
    /// Iteration cap [default: derived from the contraction rate]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Monte Carlo sample count [default: 100000]
    #[arg(long)]
    samples: Option<usize>,
    /// Branching depth per Monte Carlo sample [default: 40]
    #[arg(long)]
    depth: Option<usize>,
    /// Stable index in (0, 1); required by stable-map
    #[arg(long)]
    alpha: Option<f64>,
    /// Monte Carlo seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// auto | grid | discrete [default: auto]
    #[arg(long)]
    backend: Option<Backend>,
    /// Write output here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

fn fail(code: &str, message: impl std::fmt::Display) -> ExitCode {
    println!("{}", json!({ "error": { "code": code, "message": message.to_string() } }));
    eprintln!("pfp: {message}");
    ExitCode::from(EXIT_ERROR as u8)
}

fn emit(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return fail("io_error", format!("{}: {e}", cli.config.display())),
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(e.code(), format!("{}: {e}", cli.config.display())),
    };
    cfg.command = cli.command;
    if let Some(x) = cli.tol {
        cfg.tol = x;
    }
    if let Some(x) = cli.tol_eq {
        cfg.tol_eq = x;
    }
    if cli.max_iter.is_some() {
        cfg.max_iter = cli.max_iter;
    }
    if let Some(x) = cli.samples {
        cfg.samples = x;
    }
    if let Some(x) = cli.depth {
        cfg.depth = x;
    }
    if cli.alpha.is_some() {
        cfg.alpha = cli.alpha;
    }
    if let Some(x) = cli.seed {
        cfg.seed = x;
    }
    if let Some(x) = cli.backend {
        cfg.backend = x;
    }
    if cli.output.is_some() {
        cfg.output_path = cli.output;
    }

    let out = run(&cfg);
    let path = cfg.output_path.as_deref();
    let written = match (&out.report, &out.curve) {
        (Some(report), curve) => {
            let mut text = serde_json::to_string_pretty(report).expect("json values always serialize");
            text.push('\n');
            emit(path, &text).and_then(|_| match (path, curve) {
                (Some(p), Some(csv)) => {
                    let mut csv_path = p.as_os_str().to_owned();
                    csv_path.push(".csv");
                    fs::write(csv_path, csv)
                }
                _ => Ok(()),
            })
        }
        (None, Some(csv)) => emit(path, csv),
        (None, None) => Ok(()),
    };
    if let Err(e) = written {
        return fail("io_error", e);
    }
    ExitCode::from(out.exit_code as u8)
}
