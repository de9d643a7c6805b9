use std::time::Instant;

use pfp_core::solver::stable_fixed_point_residual;
use pfp_core::{
    check_conditions_with, closed_form_moments_with, curve_csv, mc_estimate, solve, stable_map, ConditionReport, Error,
    McReport, MomentReport, SolveOptions, SolveResult,
};
use serde_json::{json, Value};

use crate::config::{backend_name, Command, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONDITIONS: i32 = 2;

/// Relative tolerance of solver-extracted moments against the closed form,
/// on top of any second-moment drift reported by atom merging.
pub const SOLVER_MOMENT_RTOL: f64 = 1e-4;
/// Monte Carlo agreement: mean within `MC_SIGMAS · se_mean`, variance within
/// `max(MC_VAR_RTOL · var, MC_SIGMAS · se_var)`.
pub const MC_SIGMAS: f64 = 3.0;
pub const MC_VAR_RTOL: f64 = 0.05;

/// What a command produced.
///
/// `report` is the JSON document (absent for `stable-map`, whose product is
/// the curve); `curve` is a `s,value` CSV dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub exit_code: i32,
    pub report: Option<Value>,
    pub curve: Option<String>,
}

impl RunOutput {
    fn ok(report: Value) -> Self {
        RunOutput { exit_code: EXIT_OK, report: Some(report), curve: None }
    }

    fn failed(code: i32, report: Value) -> Self {
        RunOutput { exit_code: code, report: Some(report), curve: None }
    }
}

fn error_json(code: &str, message: impl std::fmt::Display) -> Value {
    json!({ "code": code, "message": message.to_string() })
}

fn core_error(e: &Error) -> Value {
    error_json(e.code(), e)
}

fn options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions { tol: cfg.tol, max_iter: cfg.max_iter, backend: cfg.backend, tol_eq: cfg.tol_eq, ..SolveOptions::default() }
}

/// Solver variance `μ₂ − μ₁²` from the moments recovered off the solution.
fn solver_variance(r: &SolveResult) -> f64 {
    r.extracted_mu2 - r.extracted_mean * r.extracted_mean
}

fn solve_summary(r: &SolveResult, opts: &SolveOptions) -> Value {
    let grid = &opts.grid;
    json!({
        "backend": backend_name(r.backend),
        "converged": r.converged,
        "iterations": r.iterations,
        "error_estimate": r.error_estimate,
        "certified_error": r.certified_error,
        "contraction_rate": r.contraction_rate,
        "max_increase": r.max_increase,
        "moment_drift": r.moment_drift,
        "extrapolation_used": r.extrapolation_used,
        "uniqueness_certified": r.uniqueness_certified,
        "mean": r.extracted_mean,
        "second_moment": r.extracted_mu2,
        "variance": solver_variance(r),
        "sup_diffs": r.sup_diffs,
        "atoms": r.solution.as_measure().map(|m| m.len()),
        "grid": { "s_min": grid.s_min(), "s_max": grid.s_max(), "points": grid.len() },
    })
}

/// Runs one command. Never panics on bad input; errors become exit code 1
/// with an `error` object carrying a stable code.
pub fn run(cfg: &RunConfig) -> RunOutput {
    if let Err(e) = cfg.validate() {
        return RunOutput::failed(EXIT_ERROR, json!({ "error": error_json(e.code(), &e) }));
    }
    let conditions = match check_conditions_with(&cfg.problem, cfg.tol_eq) {
        Ok(r) => r,
        Err(e) => return RunOutput::failed(EXIT_ERROR, json!({ "error": core_error(&e) })),
    };
    let conditions_json = serde_json::to_value(&conditions).expect("report serializes");
    if cfg.command == Command::Check {
        let code = if conditions.satisfied { EXIT_OK } else { EXIT_CONDITIONS };
        return RunOutput::failed(code, conditions_json);
    }
    if !conditions.satisfied {
        let e = Error::ConditionsNotSatisfied(conditions.failures.join(", "));
        return RunOutput::failed(EXIT_CONDITIONS, json!({ "conditions": conditions_json, "error": core_error(&e) }));
    }
    match cfg.command {
        Command::Check => unreachable!("handled above"),
        Command::Solve => run_solve(cfg),
        Command::Simulate => match mc_estimate(&cfg.problem, cfg.samples, cfg.depth, cfg.seed) {
            Ok(r) => RunOutput::ok(serde_json::to_value(r).expect("report serializes")),
            Err(e) => RunOutput::failed(EXIT_ERROR, json!({ "error": core_error(&e) })),
        },
        Command::StableMap => run_stable_map(cfg),
        Command::Report => run_report(cfg, conditions),
    }
}

fn run_solve(cfg: &RunConfig) -> RunOutput {
    let opts = options(cfg);
    let result = solve(&cfg.problem, &opts).and_then(|r| {
        r.require_converged()?;
        let curve = r.curve_on(&opts.grid)?;
        Ok((r, curve))
    });
    match result {
        Ok((r, curve)) => RunOutput {
            exit_code: EXIT_OK,
            report: Some(solve_summary(&r, &opts)),
            curve: Some(curve.to_csv()),
        },
        Err(e) => RunOutput::failed(EXIT_ERROR, json!({ "error": core_error(&e) })),
    }
}

fn run_stable_map(cfg: &RunConfig) -> RunOutput {
    let alpha = cfg.alpha.expect("validated: stable-map has alpha");
    let opts = options(cfg);
    let mapped = solve(&cfg.problem, &opts).and_then(|r| {
        r.require_converged()?;
        let s = opts.grid.points();
        let values = s.iter().map(|&s| stable_map(&r.solution, alpha, s)).collect::<Result<Vec<_>, _>>()?;
        Ok(curve_csv(s, &values))
    });
    match mapped {
        Ok(csv) => RunOutput { exit_code: EXIT_OK, report: None, curve: Some(csv) },
        Err(e) => RunOutput::failed(EXIT_ERROR, json!({ "error": core_error(&e) })),
    }
}

/// Closed form vs solver vs Monte Carlo, with the tolerance used per column.
fn comparison(cf: &MomentReport, solver: Option<&SolveResult>, mc: Option<&McReport>) -> Value {
    let scale = cf.mu2.max(cf.mu1 * cf.mu1);
    let mut agree = serde_json::Map::new();
    let mut rows = vec![
        json!({ "quantity": "mean", "closed_form": cf.mu1 }),
        json!({ "quantity": "variance", "closed_form": cf.variance }),
    ];
    let mut tolerances = serde_json::Map::new();
    if let Some(r) = solver {
        let tol_mean = SOLVER_MOMENT_RTOL * cf.mu1;
        let tol_var = SOLVER_MOMENT_RTOL * scale + r.moment_drift;
        let var = solver_variance(r);
        rows[0]["solver"] = json!(r.extracted_mean);
        rows[1]["solver"] = json!(var);
        tolerances.insert("solver_mean".into(), json!(tol_mean));
        tolerances.insert("solver_variance".into(), json!(tol_var));
        agree.insert("solver_mean".into(), json!((r.extracted_mean - cf.mu1).abs() <= tol_mean));
        agree.insert("solver_variance".into(), json!((var - cf.variance).abs() <= tol_var));
    }
    if let Some(m) = mc {
        // A point-mass solution has zero variance and zero standard error;
        // leave room for rounding in the sample variance.
        let tol_mean = MC_SIGMAS * m.se_mean + 1e-12 * cf.mu1;
        let tol_var = (MC_VAR_RTOL * cf.variance).max(MC_SIGMAS * m.se_var) + 1e-12 * scale;
        rows[0]["mc"] = json!(m.mean_hat);
        rows[0]["mc_se"] = json!(m.se_mean);
        rows[1]["mc"] = json!(m.var_hat);
        rows[1]["mc_se"] = json!(m.se_var);
        tolerances.insert("mc_mean".into(), json!(tol_mean));
        tolerances.insert("mc_variance".into(), json!(tol_var));
        agree.insert("mc_mean".into(), json!((m.mean_hat - cf.mu1).abs() <= tol_mean));
        agree.insert("mc_variance".into(), json!((m.var_hat - cf.variance).abs() <= tol_var));
    }
    let discrepancy = agree.values().any(|v| v == &json!(false));
    json!({ "rows": rows, "tolerances": tolerances, "agree": agree, "discrepancy": discrepancy })
}

fn run_report(cfg: &RunConfig, conditions: ConditionReport) -> RunOutput {
    let mut timings = serde_json::Map::new();
    let mut failed = false;
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut serde_json::Map<String, Value>| {
        timings.insert(name.into(), json!(clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let cf = closed_form_moments_with(&cfg.problem, cfg.tol_eq);
    lap("closed_form", &mut timings);
    let opts = options(cfg);
    let solved = solve(&cfg.problem, &opts).and_then(|r| {
        r.require_converged()?;
        Ok(r)
    });
    lap("solve", &mut timings);
    let mc = mc_estimate(&cfg.problem, cfg.samples, cfg.depth, cfg.seed);
    lap("mc", &mut timings);

    let section = |v: Result<Value, &Error>, failed: &mut bool| match v {
        Ok(v) => v,
        Err(e) => {
            *failed = true;
            json!({ "error": core_error(e) })
        }
    };
    let mut report = json!({
        "conditions": conditions,
        "closed_form": section(cf.as_ref().map(|m| json!(m)), &mut failed),
        "solve": section(solved.as_ref().map(|r| solve_summary(r, &opts)), &mut failed),
        "mc": section(mc.as_ref().map(|m| json!(m)), &mut failed),
    });

    if let (Some(alpha), Ok(r)) = (cfg.alpha, &solved) {
        let residual = opts
            .grid
            .points()
            .iter()
            .map(|&s| stable_fixed_point_residual(&cfg.problem, &r.solution, alpha, s))
            .try_fold(0.0f64, |acc, x| x.map(|x| acc.max(x)));
        report["stable_map"] = section(residual.as_ref().map(|m| json!({ "alpha": alpha, "max_residual": m })), &mut failed);
        lap("stable_map", &mut timings);
    }

    if let Ok(cf) = &cf {
        let table = comparison(cf, solved.as_ref().ok(), mc.as_ref().ok());
        failed |= table["discrepancy"] == json!(true);
        report["comparison"] = table;
    }
    report["meta"] = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "samples": cfg.samples,
        "depth": cfg.depth,
        "tol": cfg.tol,
        "backend": backend_name(cfg.backend),
        "timings": timings,
    });
    RunOutput::failed(if failed { EXIT_ERROR } else { EXIT_OK }, report)
}
