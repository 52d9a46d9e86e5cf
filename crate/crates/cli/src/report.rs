//! Task outcomes, assertion checks and the on-disk artifacts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Number, Value};

use crate::scenario::{Assertion, Expectation, Scenario, Task};

/// Columns of numbers written as one CSV file.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub suffix: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(suffix: impl Into<String>, header: &[String]) -> Self {
        Table { suffix: suffix.into(), header: header.to_vec(), rows: Vec::new() }
    }
}

/// What a task computed.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub metrics: Vec<(String, f64)>,
    pub details: Map<String, Value>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn flag(&mut self, name: impl Into<String>, value: bool) {
        self.metric(name, if value { 1.0 } else { 0.0 });
    }

    pub fn components(&mut self, prefix: &str, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.metric(format!("{prefix}.{}", i + 1), *v);
        }
    }

    pub fn detail(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    fn lookup(&self, name: &str) -> Option<f64> {
        self.metrics.iter().rev().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Error => "error",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checked {
    pub assertion: Assertion,
    pub value: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct TaskReport {
    pub status: Status,
    pub outcome: Option<Outcome>,
    pub error: Option<String>,
    pub checks: Vec<Checked>,
}

pub fn check(task: &Task, result: Result<Outcome, spraykit::Error>) -> TaskReport {
    match result {
        Err(e) => TaskReport { status: Status::Error, outcome: None, error: Some(e.to_string()), checks: Vec::new() },
        Ok(outcome) => {
            let checks: Vec<Checked> = task
                .assertions
                .iter()
                .map(|a| {
                    let value = outcome.lookup(&a.metric);
                    let pass = value.is_some_and(|v| match a.expect {
                        Expectation::Near { value: target, tol } => (v - target).abs() <= tol,
                        Expectation::Below(bound) => v < bound,
                        Expectation::Above(bound) => v > bound,
                    });
                    Checked { assertion: a.clone(), value, pass }
                })
                .collect();
            let status = if checks.iter().all(|c| c.pass) { Status::Pass } else { Status::Fail };
            TaskReport { status, outcome: Some(outcome), error: None, checks }
        }
    }
}

/// `{:.16e}`: 17 significant digits, identical across runs. The JSON
/// writer adds an explicit exponent sign (`e+0`).
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(format!("{x:.16e}").parse::<Number>().expect("formatted float is a JSON number"))
    } else {
        Value::String(x.to_string())
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

fn check_json(c: &Checked) -> Value {
    let mut m = Map::new();
    m.insert("metric".into(), json!(c.assertion.metric));
    m.insert("value".into(), c.value.map_or(Value::Null, num));
    match c.assertion.expect {
        Expectation::Near { value, tol } => {
            m.insert("kind".into(), json!("near"));
            m.insert("expected".into(), num(value));
            m.insert("tolerance".into(), num(tol));
        }
        Expectation::Below(b) => {
            m.insert("kind".into(), json!("below"));
            m.insert("tolerance".into(), num(b));
        }
        Expectation::Above(b) => {
            m.insert("kind".into(), json!("above"));
            m.insert("tolerance".into(), num(b));
        }
    }
    m.insert("pass".into(), json!(c.pass));
    if c.value.is_none() {
        m.insert("note".into(), json!("metric not produced"));
    }
    Value::Object(m)
}

fn slug(text: &str) -> String {
    let s: String = text.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' }).collect();
    s.trim_matches('_').to_string()
}

pub fn stem(task: &Task) -> String {
    format!("task{:02}_{}", task.index, slug(&task.name))
}

fn write_csv(path: &Path, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()
}

fn write_json(path: &Path, value: &Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn task_json(task: &Task, report: &TaskReport, artifacts: &[String]) -> Value {
    let mut m = Map::new();
    m.insert("index".into(), json!(task.index));
    m.insert("kind".into(), json!(task.kind.name()));
    m.insert("name".into(), json!(task.name));
    m.insert("model".into(), json!(task.spray.label()));
    if let Some(p) = &task.p0 {
        m.insert("initial".into(), json!({ "x": nums(&p.x), "v": nums(&p.v) }));
    }
    m.insert("status".into(), json!(report.status.label()));
    if let Some(e) = &report.error {
        m.insert("error".into(), json!(e));
    }
    if let Some(o) = &report.outcome {
        let metrics: Map<String, Value> = o.metrics.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
        m.insert("metrics".into(), Value::Object(metrics));
        m.insert("details".into(), Value::Object(o.details.clone()));
    }
    m.insert("assertions".into(), Value::Array(report.checks.iter().map(check_json).collect()));
    m.insert("artifacts".into(), json!(artifacts));
    Value::Object(m)
}

/// Writes one JSON report and the CSV tables of every task, plus
/// `summary.json`. Returns the written paths.
pub fn write_all(dir: &Path, scenario: &Scenario, reports: &[TaskReport], exit_code: i32) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for (task, report) in scenario.tasks.iter().zip(reports) {
        let stem = stem(task);
        let mut artifacts = Vec::new();
        if let Some(o) = &report.outcome {
            for table in &o.tables {
                let file = format!("{stem}_{}.csv", table.suffix);
                let path = dir.join(&file);
                write_csv(&path, table)?;
                written.push(path);
                artifacts.push(file);
            }
        }
        let path = dir.join(format!("{stem}.json"));
        write_json(&path, &task_json(task, report, &artifacts))?;
        written.push(path);
        rows.push(json!({
            "index": task.index,
            "kind": task.kind.name(),
            "name": task.name,
            "status": report.status.label(),
            "report": format!("{stem}.json"),
            "assertions": report.checks.len(),
            "failed": report.checks.iter().filter(|c| !c.pass).count(),
        }));
    }
    let summary = json!({
        "scenario": scenario.name,
        "description": scenario.description,
        "tolerance": { "atol": num(scenario.tol.atol), "rtol": num(scenario.tol.rtol) },
        "tasks": rows,
        "exit_code": exit_code,
    });
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    written.push(path);
    Ok(written)
}
