//! Problem files.
//!
//! ```json
//! {
//!   "equation": { "kind": "homogeneous", "mu": 1.0 },
//!   "N": { "family": "geometric1", "p": 0.5 },
//!   "T": { "atoms": [[0.5, 1.0]] },
//!   "run": { "command": "report", "seed": 7 }
//! }
//! ```
//!
//! `equation.kind` is one of `homogeneous`, `floored` (needs integer `m`),
//! `nonhomogeneous`, `common_t`, `nonhomogeneous_common_t`. The
//! nonhomogeneous kinds need a `B` block (`{"atoms": ...}`) and take no `mu`
//! requirement. `N.family` is `degenerate` (`k`), `pmf` (`pmf: [[k, mass], ...]`),
//! `geometric1` / `geometric0` (`p`) or `poisson` (`lambda`).
//!
//! Every `run` key is optional; see [`RunConfig::default_run`] for defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pfp_core::{Backend, CountLaw, DiscreteMeasure, EquationKind, ProblemSpec, DEFAULT_TOL_EQ};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_DEPTH: usize = 40;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_COMMAND: Command = Command::Check;

/// Configuration problems, each naming the key and (1-based) line involved.
/// Line 0 means the position is unknown, e.g. for a key that is absent.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("line {line}: unknown equation kind {kind:?}")]
    UnknownEquationKind { kind: String, line: usize },
    #[error("missing field {field:?} (line {line})")]
    MissingField { field: String, line: usize },
    #[error("line {line}: invalid law {key:?}: {message}")]
    InvalidLaw { key: String, line: usize, message: String },
    #[error("line {line}: invalid value for {key:?}: {message}")]
    InvalidValue { key: String, line: usize, message: String },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "parse_error",
            ConfigError::UnknownEquationKind { .. } => "unknown_equation_kind",
            ConfigError::MissingField { .. } => "missing_field",
            ConfigError::InvalidLaw { .. } => "invalid_law",
            ConfigError::InvalidValue { .. } => "invalid_value",
        }
    }

    pub fn line(&self) -> usize {
        match self {
            ConfigError::Parse { line, .. }
            | ConfigError::UnknownEquationKind { line, .. }
            | ConfigError::MissingField { line, .. }
            | ConfigError::InvalidLaw { line, .. }
            | ConfigError::InvalidValue { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    Simulate,
    StableMap,
    Report,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Check, Command::Solve, Command::Simulate, Command::StableMap, Command::Report];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::StableMap => "stable-map",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?} (expected check, solve, simulate, stable-map or report)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub command: Command,
    pub tol: f64,
    /// Absolute tolerance for the equality clauses of the conditions.
    pub tol_eq: f64,
    pub max_iter: Option<usize>,
    pub backend: Backend,
    pub samples: usize,
    pub depth: usize,
    /// Stable index in `(0, 1)`; required by `stable-map`.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
}

impl RunConfig {
    /// `problem` with every run setting at its default.
    pub fn default_run(problem: ProblemSpec) -> Self {
        RunConfig {
            problem,
            command: DEFAULT_COMMAND,
            tol: DEFAULT_TOL,
            tol_eq: DEFAULT_TOL_EQ,
            max_iter: None,
            backend: Backend::Auto,
            samples: DEFAULT_SAMPLES,
            depth: DEFAULT_DEPTH,
            alpha: None,
            seed: DEFAULT_SEED,
            output_path: None,
        }
    }

    /// Checks the command-specific and range constraints on run settings.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError::InvalidValue { key: key.into(), line: 0, message };
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(bad("run.tol", format!("{} must be positive", self.tol)));
        }
        if !(self.tol_eq >= 0.0 && self.tol_eq.is_finite()) {
            return Err(bad("run.tol_eq", format!("{} must be nonnegative", self.tol_eq)));
        }
        if self.samples < 2 {
            return Err(bad("run.samples", "at least 2 samples are needed".into()));
        }
        if self.max_iter == Some(0) {
            return Err(bad("run.max_iter", "must be at least 1".into()));
        }
        match self.alpha {
            Some(a) if !(a > 0.0 && a < 1.0) => Err(bad("run.alpha", format!("{a} is outside (0, 1)"))),
            None if self.command == Command::StableMap => {
                Err(ConfigError::MissingField { field: "run.alpha".into(), line: 0 })
            }
            _ => Ok(()),
        }
    }
}

/// 1-based line of the first `"key"` after the previous path segment.
fn locate(text: &str, path: &[&str]) -> usize {
    if path.is_empty() {
        return 0;
    }
    let mut pos = 0;
    for seg in path {
        match text[pos..].find(&format!("\"{seg}\"")) {
            Some(i) => pos += i,
            None => return 0,
        }
    }
    text[..pos].matches('\n').count() + 1
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn missing(&self, block: &[&str], field: &str) -> ConfigError {
        ConfigError::MissingField { field: field.into(), line: locate(self.text, block) }
    }

    fn invalid(&self, path: &[&str], message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue { key: path.join("."), line: locate(self.text, path), message: message.into() }
    }

    fn law(&self, path: &[&str], message: impl fmt::Display) -> ConfigError {
        ConfigError::InvalidLaw { key: path[0].into(), line: locate(self.text, path), message: message.to_string() }
    }

    fn object<'v>(&self, v: &'v Value, path: &[&str]) -> Result<&'v Map<String, Value>, ConfigError> {
        v.as_object().ok_or_else(|| self.invalid(path, "expected an object"))
    }

    fn only_keys(&self, obj: &Map<String, Value>, block: &str, allowed: &[&str]) -> Result<(), ConfigError> {
        match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => {
                let path: Vec<&str> = if block.is_empty() { vec![k] } else { vec![block, k] };
                Err(self.invalid(&path, format!("unknown key (expected one of {})", allowed.join(", "))))
            }
            None => Ok(()),
        }
    }

    fn number(&self, v: &Value, path: &[&str]) -> Result<f64, ConfigError> {
        v.as_f64().ok_or_else(|| self.invalid(path, format!("expected a number, found {v}")))
    }

    fn count(&self, v: &Value, path: &[&str]) -> Result<u64, ConfigError> {
        v.as_u64().ok_or_else(|| self.invalid(path, format!("expected a nonnegative integer, found {v}")))
    }

    fn field<'v>(&self, obj: &'v Map<String, Value>, block: &str, key: &str) -> Result<&'v Value, ConfigError> {
        obj.get(key).ok_or_else(|| self.missing(&[block], &format!("{block}.{key}")))
    }

    fn atoms(&self, root: &Map<String, Value>, block: &str) -> Result<DiscreteMeasure, ConfigError> {
        let obj = self.object(root.get(block).ok_or_else(|| self.missing(&[], block))?, &[block])?;
        self.only_keys(obj, block, &["atoms"])?;
        let list = self.field(obj, block, "atoms")?;
        let path = [block, "atoms"];
        let list = list.as_array().ok_or_else(|| self.law(&path, "atoms must be an array of [location, mass]"))?;
        let mut atoms = Vec::with_capacity(list.len());
        for item in list {
            match item.as_array().map(|a| a.as_slice()) {
                Some([x, w]) => match (x.as_f64(), w.as_f64()) {
                    (Some(x), Some(w)) => atoms.push((x, w)),
                    _ => return Err(self.law(&path, format!("atom {item} is not numeric"))),
                },
                _ => return Err(self.law(&path, format!("atom {item} is not a [location, mass] pair"))),
            }
        }
        DiscreteMeasure::new(atoms).map_err(|e| self.law(&path, e))
    }

    fn count_law(&self, root: &Map<String, Value>) -> Result<CountLaw, ConfigError> {
        let obj = self.object(root.get("N").ok_or_else(|| self.missing(&[], "N"))?, &["N"])?;
        let family = self.field(obj, "N", "family")?;
        let family = family.as_str().ok_or_else(|| self.law(&["N", "family"], "family must be a string"))?;
        let param = |key: &str| self.field(obj, "N", key).and_then(|v| self.number(v, &["N", key]));
        let (law, keys): (CountLaw, &[&str]) = match family {
            "degenerate" => {
                let k = self.field(obj, "N", "k").and_then(|v| self.count(v, &["N", "k"]))?;
                (CountLaw::Degenerate { k }, &["family", "k"])
            }
            "pmf" => {
                let path = ["N", "pmf"];
                let list = self.field(obj, "N", "pmf")?;
                let list = list.as_array().ok_or_else(|| self.law(&path, "pmf must be an array of [k, mass]"))?;
                let mut pmf = Vec::with_capacity(list.len());
                for item in list {
                    match item.as_array().map(|a| a.as_slice()) {
                        Some([k, w]) => match (k.as_u64(), w.as_f64()) {
                            (Some(k), Some(w)) => pmf.push((k, w)),
                            _ => return Err(self.law(&path, format!("entry {item} is not [integer, mass]"))),
                        },
                        _ => return Err(self.law(&path, format!("entry {item} is not a [k, mass] pair"))),
                    }
                }
                (CountLaw::Pmf { pmf }, &["family", "pmf"])
            }
            "geometric1" => (CountLaw::Geometric1 { p: param("p")? }, &["family", "p"]),
            "geometric0" => (CountLaw::Geometric0 { p: param("p")? }, &["family", "p"]),
            "poisson" => (CountLaw::Poisson { lambda: param("lambda")? }, &["family", "lambda"]),
            other => {
                return Err(self.law(
                    &["N", "family"],
                    format!("unknown family {other:?} (expected degenerate, pmf, geometric1, geometric0 or poisson)"),
                ))
            }
        };
        self.only_keys(obj, "N", keys)?;
        law.validate().map_err(|e| self.law(&["N"], e))?;
        Ok(law)
    }

    fn problem(&self, root: &Map<String, Value>) -> Result<ProblemSpec, ConfigError> {
        let eq = self.object(root.get("equation").ok_or_else(|| self.missing(&[], "equation"))?, &["equation"])?;
        self.only_keys(eq, "equation", &["kind", "m", "mu"])?;
        let kind = self.field(eq, "equation", "kind")?;
        let kind_path = ["equation", "kind"];
        let kind = kind.as_str().ok_or_else(|| self.invalid(&kind_path, "kind must be a string"))?;
        let kind = match kind {
            "homogeneous" => EquationKind::Homogeneous,
            "floored" => {
                let m = self.field(eq, "equation", "m").and_then(|v| self.count(v, &["equation", "m"]))?;
                if m == 0 {
                    return Err(self.invalid(&["equation", "m"], "floored equations need m >= 1"));
                }
                EquationKind::Floored { m }
            }
            "nonhomogeneous" => EquationKind::Nonhomogeneous,
            "common_t" => EquationKind::CommonT,
            "nonhomogeneous_common_t" => EquationKind::NonhomogeneousCommonT,
            other => {
                return Err(ConfigError::UnknownEquationKind { kind: other.into(), line: locate(self.text, &kind_path) })
            }
        };
        if eq.contains_key("m") && !matches!(kind, EquationKind::Floored { .. }) {
            return Err(self.invalid(&["equation", "m"], "m applies to floored equations only"));
        }
        let mu = eq.get("mu").map(|v| self.number(v, &["equation", "mu"])).transpose()?;
        if let Some(mu) = mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(self.invalid(&["equation", "mu"], format!("{mu} must be positive")));
            }
        } else if !kind.is_nonhomogeneous() {
            return Err(self.missing(&["equation"], "equation.mu"));
        }
        let n = self.count_law(root)?;
        let t = self.atoms(root, "T")?;
        let b = match (kind.is_nonhomogeneous(), root.contains_key("B")) {
            (true, _) => Some(self.atoms(root, "B")?),
            (false, true) => return Err(self.law(&["B"], format!("{} equations take no B", kind.name()))),
            (false, false) => None,
        };
        ProblemSpec::new(kind, n, t, b, mu).map_err(|e| self.invalid(&["equation"], e.to_string()))
    }

    fn run(&self, root: &Map<String, Value>, problem: ProblemSpec) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default_run(problem);
        let Some(run) = root.get("run") else {
            return Ok(cfg);
        };
        let run = self.object(run, &["run"])?;
        for (key, v) in run {
            let path = ["run", key.as_str()];
            let positive = |x: f64| {
                if x > 0.0 && x.is_finite() {
                    Ok(x)
                } else {
                    Err(self.invalid(&path, format!("{x} must be positive")))
                }
            };
            match key.as_str() {
                "command" => {
                    let s = v.as_str().ok_or_else(|| self.invalid(&path, "expected a string"))?;
                    cfg.command = s.parse().map_err(|e: String| self.invalid(&path, e))?;
                }
                "tol" => cfg.tol = positive(self.number(v, &path)?)?,
                "tol_eq" => cfg.tol_eq = self.number(v, &path)?,
                "max_iter" => cfg.max_iter = Some(self.count(v, &path)? as usize),
                "backend" => {
                    let s = v.as_str().ok_or_else(|| self.invalid(&path, "expected a string"))?;
                    cfg.backend = s.parse().map_err(|e: String| self.invalid(&path, e))?;
                }
                "samples" => cfg.samples = self.count(v, &path)? as usize,
                "depth" => cfg.depth = self.count(v, &path)? as usize,
                "alpha" => cfg.alpha = Some(self.number(v, &path)?),
                "seed" => cfg.seed = self.count(v, &path)?,
                "output" => {
                    let s = v.as_str().ok_or_else(|| self.invalid(&path, "expected a path string"))?;
                    cfg.output_path = Some(PathBuf::from(s));
                }
                _ => {
                    return Err(self.invalid(
                        &path,
                        "unknown key (expected command, tol, tol_eq, max_iter, backend, samples, depth, alpha, seed or output)",
                    ))
                }
            }
        }
        cfg.validate().map_err(|e| match e {
            ConfigError::InvalidValue { key, message, .. } => {
                let line = locate(self.text, &key.split('.').collect::<Vec<_>>());
                ConfigError::InvalidValue { key, line, message }
            }
            ConfigError::MissingField { field, .. } => ConfigError::MissingField { field, line: locate(self.text, &["run"]) },
            other => other,
        })?;
        Ok(cfg)
    }
}

/// Parses and validates a problem file.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let cx = Ctx { text };
    let root = root.as_object().ok_or(ConfigError::Parse {
        line: 1,
        column: 1,
        message: "top level must be an object".into(),
    })?;
    cx.only_keys(root, "", &["equation", "N", "T", "B", "run"])?;
    let problem = cx.problem(root)?;
    cx.run(root, problem)
}

fn atoms_json(m: &DiscreteMeasure) -> Value {
    Value::Array(m.atoms().iter().map(|&(x, w)| json!([x, w])).collect())
}

fn count_law_json(n: &CountLaw) -> Value {
    match n {
        CountLaw::Degenerate { k } => json!({ "family": "degenerate", "k": k }),
        CountLaw::Pmf { pmf } => {
            json!({ "family": "pmf", "pmf": pmf.iter().map(|&(k, w)| json!([k, w])).collect::<Vec<_>>() })
        }
        CountLaw::Geometric1 { p } => json!({ "family": "geometric1", "p": p }),
        CountLaw::Geometric0 { p } => json!({ "family": "geometric0", "p": p }),
        CountLaw::Poisson { lambda } => json!({ "family": "poisson", "lambda": lambda }),
    }
}

pub(crate) fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Auto => "auto",
        Backend::Grid => "grid",
        Backend::Discrete => "discrete",
    }
}

/// Problem file text for `cfg`; `parse_config(&serialize(cfg)) == Ok(cfg)`.
pub fn serialize(cfg: &RunConfig) -> String {
    let p = &cfg.problem;
    let mut eq = Map::new();
    eq.insert("kind".into(), json!(p.kind.name()));
    if let EquationKind::Floored { m } = p.kind {
        eq.insert("m".into(), json!(m));
    }
    if let Some(mu) = p.mu {
        eq.insert("mu".into(), json!(mu));
    }
    let mut run = Map::new();
    run.insert("command".into(), json!(cfg.command.name()));
    run.insert("tol".into(), json!(cfg.tol));
    run.insert("tol_eq".into(), json!(cfg.tol_eq));
    if let Some(k) = cfg.max_iter {
        run.insert("max_iter".into(), json!(k));
    }
    run.insert("backend".into(), json!(backend_name(cfg.backend)));
    run.insert("samples".into(), json!(cfg.samples));
    run.insert("depth".into(), json!(cfg.depth));
    if let Some(a) = cfg.alpha {
        run.insert("alpha".into(), json!(a));
    }
    run.insert("seed".into(), json!(cfg.seed));
    if let Some(path) = &cfg.output_path {
        run.insert("output".into(), json!(path.to_string_lossy()));
    }
    let mut root = Map::new();
    root.insert("equation".into(), Value::Object(eq));
    root.insert("N".into(), count_law_json(&p.n));
    root.insert("T".into(), json!({ "atoms": atoms_json(&p.t) }));
    if let Some(b) = &p.b {
        root.insert("B".into(), json!({ "atoms": atoms_json(b) }));
    }
    root.insert("run".into(), Value::Object(run));
    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("json values always serialize");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "equation": { "kind": "homogeneous", "mu": 1 },
  "N": { "family": "geometric1", "p": 0.5 },
  "T": { "atoms": [[0.5, 1]] }
}"#;

    #[test]
    fn minimal_homogeneous() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.problem.kind, EquationKind::Homogeneous);
        assert_eq!(cfg.problem.n, CountLaw::Geometric1 { p: 0.5 });
        assert_eq!(cfg.problem.mu, Some(1.0));
        assert_eq!(cfg, RunConfig::default_run(cfg.problem.clone()));
    }

    #[test]
    fn locate_finds_nested_keys() {
        assert_eq!(locate(MINIMAL, &["T", "atoms"]), 4);
        assert_eq!(locate(MINIMAL, &["N", "p"]), 3);
        assert_eq!(locate(MINIMAL, &["B"]), 0);
    }

    #[test]
    fn missing_b() {
        let text = MINIMAL.replace("\"homogeneous\"", "\"nonhomogeneous\"");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err, ConfigError::MissingField { field: "B".into(), line: 0 });
    }

    #[test]
    fn negative_t_atom() {
        let err = parse_config(&MINIMAL.replace("[[0.5, 1]]", "[[-0.5, 1]]")).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidLaw { ref key, line: 4, .. } if key == "T"), "{err:?}");
    }

    #[test]
    fn unknown_kind_names_line() {
        let err = parse_config(&MINIMAL.replace("\"homogeneous\"", "\"linear\"")).unwrap_err();
        assert_eq!(err, ConfigError::UnknownEquationKind { kind: "linear".into(), line: 2 });
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config("{\n  \"equation\": {,\n}").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn typo_in_run_block_is_rejected() {
        let text = MINIMAL.replace("[[0.5, 1]] }", "[[0.5, 1]] },\n  \"run\": { \"sampels\": 10 }");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { ref key, line: 5, .. } if key == "run.sampels"), "{err:?}");
    }

    #[test]
    fn stable_map_requires_alpha() {
        let text = MINIMAL.replace("[[0.5, 1]] }", "[[0.5, 1]] },\n  \"run\": { \"command\": \"stable-map\" }");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err, ConfigError::MissingField { field: "run.alpha".into(), line: 5 });
    }
}
