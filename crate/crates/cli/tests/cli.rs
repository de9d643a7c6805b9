use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use pfp_cli::{parse_config, run, serialize, Command, ConfigError, RunConfig, EXIT_CONDITIONS, EXIT_ERROR, EXIT_OK};
use pfp_core::{Backend, CountLaw, DiscreteMeasure, EquationKind, ProblemSpec};
use proptest::prelude::*;
use serde_json::Value;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn exponential() -> RunConfig {
    parse_config(&fs::read_to_string(golden("exponential.json")).unwrap()).unwrap()
}

/// Runs the binary; returns (exit code, stdout).
fn pfp(args: &[&str]) -> (i32, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_pfp")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn defaults_match_golden_file() {
    let cfg = exponential();
    assert_eq!(serialize(&cfg), fs::read_to_string(golden("defaults.json")).unwrap());
}

#[test]
fn help_documents_defaults() {
    let out = Process::new(env!("CARGO_BIN_EXE_pfp")).arg("--help").output().unwrap();
    let help = String::from_utf8(out.stdout).unwrap();
    for needle in ["[default: 1e-8]", "[default: 1e-9]", "[default: 100000]", "[default: 40]", "[default: 0]", "[default: auto]"]
    {
        assert!(help.contains(needle), "--help lacks {needle}");
    }
    let cfg = exponential();
    assert_eq!((cfg.tol, cfg.tol_eq, cfg.samples, cfg.depth, cfg.seed), (1e-8, 1e-9, 100_000, 40, 0));
    assert_eq!(cfg.backend, Backend::Auto);
    assert_eq!(cfg.command, Command::Check);
}

#[test]
fn check_exponential_is_satisfied() {
    let (code, out) = pfp(&["check", golden("exponential.json").to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["satisfied"], true);
    assert_eq!(report["scalars"]["rho"], 0.5);
}

#[test]
fn check_unit_weight_fails_strict_mean_clause() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        "unit.json",
        r#"{ "equation": { "kind": "homogeneous", "mu": 1 },
             "N": { "family": "degenerate", "k": 1 },
             "T": { "atoms": [[1, 1]] } }"#,
    );
    let (code, out) = pfp(&["check", &path]);
    assert_eq!(code, EXIT_CONDITIONS);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["satisfied"], false);
    let failures: Vec<&str> = report["failures"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(failures.contains(&"E[T]<1"), "{failures:?}");
}

#[test]
fn report_on_exponential_agrees_three_ways() {
    let mut cfg = exponential();
    cfg.command = Command::Report;
    let out = run(&cfg);
    assert_eq!(out.exit_code, EXIT_OK, "{:#?}", out.report);
    let r = out.report.unwrap();
    for key in ["conditions", "closed_form", "solve", "mc", "meta"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    for key in ["version", "seed", "timings"] {
        assert!(r["meta"].get(key).is_some(), "missing meta.{key}");
    }
    let var = &r["comparison"]["rows"][1];
    assert_eq!(var["quantity"], "variance");
    let cf = var["closed_form"].as_f64().unwrap();
    let solver = var["solver"].as_f64().unwrap();
    let mc = var["mc"].as_f64().unwrap();
    assert_eq!(cf, 1.0);
    assert!((cf - solver).abs() <= 1e-4, "solver variance {solver}");
    assert!((mc - 1.0).abs() <= 0.05, "mc variance {mc}");
    assert_eq!(r["comparison"]["discrepancy"], false);
}

#[test]
fn report_flags_discrepancy_and_exits_nonzero() {
    // depth 0 replaces every draw by the mean: zero sample variance
    let mut cfg = exponential();
    cfg.command = Command::Report;
    cfg.samples = 1_000;
    cfg.depth = 0;
    let out = run(&cfg);
    assert_eq!(out.exit_code, EXIT_ERROR);
    let r = out.report.unwrap();
    assert_eq!(r["comparison"]["discrepancy"], true);
    assert_eq!(r["comparison"]["agree"]["mc_variance"], false);
    assert_eq!(r["comparison"]["agree"]["solver_variance"], true);
}

#[test]
fn missing_b_is_reported_with_code() {
    let text = fs::read_to_string(golden("exponential.json")).unwrap().replace("\"homogeneous\"", "\"nonhomogeneous\"");
    assert_eq!(parse_config(&text).unwrap_err(), ConfigError::MissingField { field: "B".into(), line: 0 });
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = pfp(&["check", &write_config(dir.path(), "nob.json", &text)]);
    assert_eq!(code, EXIT_ERROR);
    let err: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(err["error"]["code"], "missing_field");
}

#[test]
fn stable_map_needs_alpha_and_emits_csv() {
    let path = golden("exponential.json");
    let path = path.to_str().unwrap();
    let (code, out) = pfp(&["stable-map", path]);
    assert_eq!(code, EXIT_ERROR);
    assert!(out.contains("missing_field"));

    let (code, csv) = pfp(&["stable-map", path, "--alpha", "0.5"]);
    assert_eq!(code, EXIT_OK);
    let rows = pfp_core::parse_curve_csv(&csv).unwrap();
    assert!(csv.starts_with("s,value\n"));
    assert_eq!(rows.len(), 513);
    // exponential solution: F̂(s^α) = 1 / (1 + √s)
    for (s, v) in rows {
        assert!((v - 1.0 / (1.0 + s.sqrt())).abs() < 1e-6, "s = {s}: {v}");
    }
}

#[test]
fn solve_with_output_writes_summary_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sol.json");
    let (code, stdout) =
        pfp(&["solve", golden("exponential.json").to_str().unwrap(), "--output", out_path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.is_empty());
    let summary: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["backend"], "grid");
    let curve = fs::read_to_string(dir.path().join("sol.json.csv")).unwrap();
    let rows = pfp_core::parse_curve_csv(&curve).unwrap();
    let worst = rows.iter().map(|&(s, v)| (v - 1.0 / (1.0 + s)).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let path = golden("exponential.json");
    let path = path.to_str().unwrap();
    let a = pfp(&["simulate", path, "--samples", "2000", "--seed", "11"]);
    let b = pfp(&["simulate", path, "--samples", "2000", "--seed", "11"]);
    let c = pfp(&["simulate", path, "--samples", "2000", "--seed", "12"]);
    assert_eq!(a.0, EXIT_OK);
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);
}

#[test]
fn flags_override_run_block() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(golden("exponential.json"))
        .unwrap()
        .replace("[[0.5, 1]] }", "[[0.5, 1]] },\n  \"run\": { \"samples\": 3, \"seed\": 5 }");
    let path = write_config(dir.path(), "run.json", &text);
    let (_, out) = pfp(&["simulate", &path, "--seed", "9"]);
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["n_samples"], 3);
    assert_eq!(r["seed"], 9);
}

#[test]
fn unsatisfied_conditions_stop_other_commands() {
    let mut cfg = exponential();
    cfg.problem.t = DiscreteMeasure::dirac(0.6).unwrap();
    for command in [Command::Solve, Command::Simulate, Command::Report] {
        cfg.command = command;
        let out = run(&cfg);
        assert_eq!(out.exit_code, EXIT_CONDITIONS, "{command}");
        assert_eq!(out.report.unwrap()["error"]["code"], "conditions_not_satisfied");
    }
}

fn arb_atoms(max_loc: f64) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((0.0..max_loc, 0.05f64..1.0), 1..5).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect()).unwrap()
    })
}

fn arb_count() -> impl Strategy<Value = CountLaw> {
    prop_oneof![
        (0u64..6).prop_map(|k| CountLaw::Degenerate { k }),
        (0.05f64..0.95).prop_map(|p| CountLaw::Geometric1 { p }),
        (0.05f64..0.95).prop_map(|p| CountLaw::Geometric0 { p }),
        (0.1f64..5.0).prop_map(|lambda| CountLaw::Poisson { lambda }),
        prop::collection::btree_map(0u64..8, 0.05f64..1.0, 1..5).prop_map(|m| {
            let total: f64 = m.values().sum();
            CountLaw::Pmf { pmf: m.into_iter().map(|(k, w)| (k, w / total)).collect() }
        }),
    ]
}

fn arb_problem() -> impl Strategy<Value = ProblemSpec> {
    let kind = prop_oneof![
        Just(EquationKind::Homogeneous),
        (1u64..4).prop_map(|m| EquationKind::Floored { m }),
        Just(EquationKind::Nonhomogeneous),
        Just(EquationKind::CommonT),
        Just(EquationKind::NonhomogeneousCommonT),
    ];
    (kind, arb_count(), arb_atoms(2.0), arb_atoms(3.0), 0.01f64..10.0, any::<bool>()).prop_map(
        |(kind, n, t, b, mu, give_mu)| {
            let nonhomogeneous = kind.is_nonhomogeneous();
            let b = nonhomogeneous.then_some(b);
            let mu = (!nonhomogeneous || give_mu).then_some(mu);
            ProblemSpec::new(kind, n, t, b, mu).unwrap()
        },
    )
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    let command = prop::sample::select(Command::ALL.to_vec());
    let backend = prop::sample::select(vec![Backend::Auto, Backend::Grid, Backend::Discrete]);
    (
        arb_problem(),
        command,
        backend,
        (1e-14f64..1e-2, 0.0f64..1e-6, prop::option::of(1usize..10_000)),
        (2usize..10_000_000, 0usize..100, prop::option::of(0.01f64..0.99), any::<u64>()),
        prop::option::of("[a-z]{1,8}(/[a-z]{1,8}){0,2}\\.json"),
    )
        .prop_map(|(problem, command, backend, (tol, tol_eq, max_iter), (samples, depth, alpha, seed), out)| {
            let alpha = if command == Command::StableMap { alpha.or(Some(0.5)) } else { alpha };
            RunConfig {
                problem,
                command,
                tol,
                tol_eq,
                max_iter,
                backend,
                samples,
                depth,
                alpha,
                seed,
                output_path: out.map(PathBuf::from),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_round_trips(cfg in arb_config()) {
        let text = serialize(&cfg);
        prop_assert_eq!(parse_config(&text), Ok(cfg));
    }
}
