//! Checks a transcript against assertions written as paths into its JSON form.
//!
//! A path is dot-separated; `*` fans out over every member of an object or
//! array, and every match must satisfy the assertion. For example
//! `metrics.students.*.passive_triggers` or `snapshots.0.snapshot.cards.*.mode`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::transcript::Transcript;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "==",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub name: String,
    pub path: String,
    pub op: Op,
    /// Literal right-hand side.
    #[serde(default)]
    pub value: Option<Value>,
    /// Right-hand side read from another path, which must match exactly once.
    #[serde(default)]
    pub rhs: Option<String>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionFile {
    #[serde(rename = "assert")]
    pub assertions: Vec<Assertion>,
}

impl AssertionFile {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let f: AssertionFile = toml::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        for a in &f.assertions {
            if a.value.is_some() == a.rhs.is_some() {
                return Err(SimError::ScenarioInvalid(format!(
                    "assertion '{}' needs exactly one of value and rhs",
                    a.name
                )));
            }
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::ScenarioInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub expected: String,
    /// Every concrete path the assertion touched, with its value.
    pub actual: Vec<(String, Value)>,
    /// One line per failing match.
    pub diff: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub results: Vec<AssertionResult>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &AssertionResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&format!("{} {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name));
            for d in &r.diff {
                out.push_str(&format!("    {d}\n"));
            }
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} passed, {} failed\n", self.results.len() - failed, failed));
        out
    }
}

/// All values matching `path`, with their concrete paths.
pub fn select(root: &Value, path: &str) -> Vec<(String, Value)> {
    let mut current = vec![(String::new(), root.clone())];
    for segment in path.split('.').filter(|s| !s.is_empty()) {
        let mut next = Vec::new();
        for (prefix, v) in current {
            let join = |k: &str| if prefix.is_empty() { k.to_owned() } else { format!("{prefix}.{k}") };
            match (segment, &v) {
                ("*", Value::Object(m)) => next.extend(m.iter().map(|(k, c)| (join(k), c.clone()))),
                ("*", Value::Array(a)) => next.extend(a.iter().enumerate().map(|(i, c)| (join(&i.to_string()), c.clone()))),
                (key, Value::Object(m)) => {
                    if let Some(c) = m.get(key) {
                        next.push((join(key), c.clone()));
                    }
                }
                (key, Value::Array(a)) => {
                    if let Some(c) = key.parse::<usize>().ok().and_then(|i| a.get(i)) {
                        next.push((join(key), c.clone()));
                    }
                }
                _ => {}
            }
        }
        current = next;
    }
    current
}

fn compare(actual: &Value, op: Op, expected: &Value, tol: f64) -> Result<bool, String> {
    if let (Some(a), Some(e)) = (actual.as_f64(), expected.as_f64()) {
        return Ok(match op {
            Op::Eq => (a - e).abs() <= tol,
            Op::Ne => (a - e).abs() > tol,
            Op::Lt => a < e - tol,
            Op::Le => a <= e + tol,
            Op::Gt => a > e + tol,
            Op::Ge => a >= e - tol,
        });
    }
    match op {
        Op::Eq => Ok(actual == expected),
        Op::Ne => Ok(actual != expected),
        _ => Err(format!("{} needs numbers, got {actual} and {expected}", op.symbol())),
    }
}

fn describe(actual: &Value, expected: &Value) -> String {
    match (actual.as_f64(), expected.as_f64()) {
        (Some(a), Some(e)) => format!(" (off by {})", a - e),
        _ => String::new(),
    }
}

pub fn check(root: &Value, a: &Assertion) -> AssertionResult {
    let tol = a.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let actual = select(root, &a.path);
    let (expected, expected_text) = match (&a.value, &a.rhs) {
        (Some(v), _) => (Some(v.clone()), v.to_string()),
        (None, Some(rhs)) => {
            let found = select(root, rhs);
            match found.as_slice() {
                [(_, v)] => (Some(v.clone()), format!("{rhs} = {v}")),
                _ => (None, format!("{rhs} (matched {} values)", found.len())),
            }
        }
        (None, None) => (None, "nothing".into()),
    };
    let mut diff = Vec::new();
    match &expected {
        None => diff.push(format!("right-hand side {expected_text} does not resolve to one value")),
        Some(_) if actual.is_empty() => diff.push(format!("{}: no such path", a.path)),
        Some(e) => {
            for (path, v) in &actual {
                match compare(v, a.op, e, tol) {
                    Ok(true) => {}
                    Ok(false) => diff.push(format!(
                        "{path}: expected {} {expected_text}, got {v}{}",
                        a.op.symbol(),
                        describe(v, e)
                    )),
                    Err(msg) => diff.push(format!("{path}: {msg}")),
                }
            }
        }
    }
    AssertionResult {
        name: a.name.clone(),
        passed: diff.is_empty(),
        expected: format!("{} {expected_text}", a.op.symbol()),
        actual,
        diff,
    }
}

pub fn verify(transcript: &Transcript, assertions: &[Assertion]) -> VerifyReport {
    let root = serde_json::to_value(transcript).expect("transcripts serialize");
    let results: Vec<_> = assertions.iter().map(|a| check(&root, a)).collect();
    VerifyReport { passed: results.iter().all(|r| r.passed), results }
}
