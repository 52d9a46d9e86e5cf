//! Scenario files: TOML with a `[model]`, an `[initial]` phase point,
//! optional `[constants]` and `[integration]` sections, and `[[task]]`
//! entries. Loading resolves every formula and model up front so that a
//! malformed file is rejected before any computation starts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::Deserialize;
use spraykit::catalog::{self, CatalogItem};
use spraykit::expr::{Node, Params};
use spraykit::projective::apply_change;
use spraykit::{Expression, FinslerModel, PhasePoint, ProjectiveFactor, SprayModel, Tolerance};

use crate::error::ConfigError;

/// A number written either literally or as a formula over `pi` and the
/// scenario constants, e.g. `"pi/sqrt(3)"`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Formula(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    description: Option<String>,
    #[serde(default)]
    constants: BTreeMap<String, Num>,
    model: Option<RawModel>,
    initial: Option<RawInitial>,
    #[serde(default)]
    integration: RawIntegration,
    #[serde(default, rename = "task")]
    tasks: Vec<toml::Table>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    catalog: Option<String>,
    dim: Option<usize>,
    spray: Option<Vec<String>>,
    finsler: Option<String>,
    #[serde(default)]
    guards: Vec<String>,
    #[serde(default)]
    params: BTreeMap<String, Num>,
    change: Option<String>,
    label: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    x: Vec<Num>,
    v: Vec<Num>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegration {
    atol: Option<Num>,
    rtol: Option<Num>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpect {
    metric: String,
    value: Option<Num>,
    tol: Option<Num>,
    below: Option<Num>,
    above: Option<Num>,
}

#[derive(Debug, Deserialize)]
struct RawCircle {
    center: Vec<Num>,
    radius: Num,
}

#[derive(Debug, Deserialize)]
struct RawCurve {
    x: Vec<String>,
    v: Vec<String>,
}

/// Every key a task may carry. Which ones a kind accepts is listed in
/// [`TaskKind::keys`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    #[serde(rename = "kind")]
    _kind: String,
    name: Option<String>,
    model: Option<String>,
    change: Option<String>,
    x: Option<Vec<Num>>,
    v: Option<Vec<Num>>,
    #[serde(default)]
    expect: Vec<RawExpect>,
    samples: Option<usize>,
    seed: Option<u64>,
    radius: Option<Num>,
    t_end: Option<Num>,
    t_max: Option<Num>,
    t_window: Option<Num>,
    density: Option<Num>,
    halving: Option<bool>,
    compare: Option<bool>,
    circle: Option<RawCircle>,
    curve: Option<RawCurve>,
    target: Option<Vec<Num>>,
    lambda: Option<String>,
    field: Option<Vec<String>>,
    v0: Option<Vec<Num>>,
    mode: Option<String>,
    factor: Option<String>,
    residuals: Option<Vec<String>>,
    compare_to: Option<String>,
    w: Option<Vec<Num>>,
    u: Option<Vec<Num>>,
    s: Option<Vec<Num>>,
    delta: Option<Num>,
    a: Option<Num>,
    b: Option<Num>,
    intervals: Option<usize>,
    bridged: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Verify,
    Geodesic,
    Eigen,
    Bracket,
    Conjugate,
    Prop1,
    Transport,
    Jacobi,
    Projective,
    Preserve,
    Variation,
    Length,
}

const COMMON_KEYS: &[&str] = &["kind", "name", "model", "change", "x", "v", "expect"];

impl TaskKind {
    pub const ALL: [TaskKind; 12] = [
        TaskKind::Verify,
        TaskKind::Geodesic,
        TaskKind::Eigen,
        TaskKind::Bracket,
        TaskKind::Conjugate,
        TaskKind::Prop1,
        TaskKind::Transport,
        TaskKind::Jacobi,
        TaskKind::Projective,
        TaskKind::Preserve,
        TaskKind::Variation,
        TaskKind::Length,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Verify => "verify",
            TaskKind::Geodesic => "geodesic",
            TaskKind::Eigen => "eigen",
            TaskKind::Bracket => "bracket",
            TaskKind::Conjugate => "conjugate",
            TaskKind::Prop1 => "prop1",
            TaskKind::Transport => "transport",
            TaskKind::Jacobi => "jacobi",
            TaskKind::Projective => "projective",
            TaskKind::Preserve => "preserve",
            TaskKind::Variation => "variation",
            TaskKind::Length => "length",
        }
    }

    fn parse(text: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.name() == text)
    }

    /// Keys accepted besides the common ones.
    fn keys(self) -> &'static [&'static str] {
        match self {
            TaskKind::Verify => &["samples", "seed", "radius"],
            TaskKind::Geodesic => &["t_end", "samples", "circle", "curve", "target"],
            TaskKind::Eigen => &["t_end", "samples", "seed", "radius", "lambda"],
            TaskKind::Bracket => &["t_end", "samples", "seed", "radius"],
            TaskKind::Conjugate => &["t_max", "density", "halving", "samples"],
            TaskKind::Prop1 => &["t_max", "field", "compare", "samples"],
            TaskKind::Transport => &["v0", "t_end", "samples", "field"],
            TaskKind::Jacobi => &["mode", "t_end", "samples", "field", "curve"],
            TaskKind::Projective => &["factor", "residuals", "t_end", "samples", "seed", "radius", "compare_to"],
            TaskKind::Preserve => &["factor", "t_window"],
            TaskKind::Variation => &["w", "u", "s", "delta"],
            TaskKind::Length => &["curve", "a", "b", "intervals", "bridged"],
        }
    }

    /// Metric names a task of this kind can report. A trailing `*` stands
    /// for a 1-based index or a component suffix.
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            TaskKind::Verify => &[
                "samples",
                "homogeneity",
                "homogeneity_rel",
                "phi_t",
                "phi_v_rel",
                "gamma_v_rel",
                "nabla_t",
                "gamma_fd_rel",
                "phi_fd_rel",
                "eigen_scaling_rel",
                "eigen_scaling_samples",
            ],
            TaskKind::Geodesic => &[
                "t_end",
                "truncated",
                "midpoint_residual",
                "radial_deviation",
                "curve_deviation",
                "target_distance",
                "target_time",
                "speed_drift",
                "x_end.*",
                "v_end.*",
            ],
            TaskKind::Eigen => &[
                "points",
                "lambda",
                "lambda_dev",
                "lambda_min",
                "lambda_max",
                "multiplicity",
                "gap",
                "flow_derivative",
                "formula_residual",
            ],
            TaskKind::Bracket => &[
                "points",
                "bracket_min",
                "bracket_max",
                "restricted_min",
                "restricted_max",
                "isotropy_residual_max",
                "isotropy_lambda",
            ],
            TaskKind::Conjugate => &[
                "count",
                "t_searched",
                "truncated",
                "nullity_consistent",
                "halving_drift",
                "halving_same_count",
                "time.*",
                "nullity.*",
                "spacing.*",
                "x.*",
            ],
            TaskKind::Prop1 => &[
                "applicable",
                "partial",
                "t_fail",
                "lambda0",
                "max_flow_derivative",
                "max_eigen_residual",
                "field_deviation",
                "agreement",
                "time.*",
            ],
            TaskKind::Transport => &[
                "t_end",
                "field_deviation",
                "eigen_residual_max",
                "euclidean_norm_drift",
                "g_norm_drift",
                "end.*",
            ],
            TaskKind::Jacobi => &["tangent_deviation_rel", "t_end", "residual", "initial_derivative.*"],
            TaskKind::Projective => &[
                "points",
                "phi_tilde",
                "nabla_tilde",
                "b_of_t",
                "shift",
                "diag",
                "diag_case",
                "t0",
                "t0_agreement",
                "t0_bracket_holds",
                "t1",
                "t1_max",
                "t2",
                "t2_stated",
                "t2i",
                "lambda_tilde",
                "compare_rel",
            ],
            TaskKind::Preserve => &[
                "t1",
                "s1",
                "theta_s1",
                "parameter_error",
                "base_point_error",
                "theta_residual",
                "x_t1.*",
                "x_s1.*",
            ],
            TaskKind::Variation => &["jacobi_deviation", "field.*"],
            TaskKind::Length => &["length", "windows"],
        }
    }

    fn knows_metric(self, metric: &str) -> bool {
        self.metrics().iter().any(|m| match m.strip_suffix('*') {
            Some(prefix) => metric.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty()),
            None => *m == metric,
        })
    }
}

/// Named constants plus `pi`, shared by every formula in a scenario.
#[derive(Clone, Debug)]
pub struct Env {
    consts: Params,
}

impl Env {
    fn names(&self) -> Vec<&str> {
        self.consts.keys().map(String::as_str).collect()
    }

    fn number(&self, n: &Num, at: &str) -> Result<f64, ConfigError> {
        match n {
            Num::Value(v) => Ok(*v),
            Num::Formula(src) => {
                let e = Expression::parse(src, 1, &self.names()).map_err(|e| ConfigError::at(at, format!("`{src}`: {e}")))?;
                if uses_phase_variables(e.root()) {
                    return Err(ConfigError::at(at, format!("`{src}` must be a constant expression")));
                }
                e.evaluate(&[0.0], &[0.0], &self.consts).map_err(|e| ConfigError::at(at, format!("`{src}`: {e}")))
            }
        }
    }

    fn vector(&self, ns: &[Num], at: &str) -> Result<Vec<f64>, ConfigError> {
        ns.iter().enumerate().map(|(i, n)| self.number(n, &format!("{at}[{i}]"))).collect()
    }

    /// A phase-space formula with all constants bound.
    fn phase(&self, src: &str, dim: usize, at: &str) -> Result<Expression, ConfigError> {
        Expression::parse(src, dim, &self.names())
            .and_then(|e| e.bind(&self.consts))
            .map_err(|e| ConfigError::at(at, format!("`{src}`: {e}")))
    }

    /// Formulas in `t` (and optionally phase variables) evaluated at run time.
    fn timed(&self, srcs: &[String], dim: usize, at: &str) -> Result<TimeFormula, ConfigError> {
        let mut names = self.names();
        names.push("t");
        let exprs = srcs
            .iter()
            .enumerate()
            .map(|(i, s)| Expression::parse(s, dim, &names).map_err(|e| ConfigError::at(&format!("{at}[{i}]"), format!("`{s}`: {e}"))))
            .collect::<Result<_, _>>()?;
        Ok(TimeFormula { exprs, params: self.consts.clone() })
    }
}

fn uses_phase_variables(n: &Node) -> bool {
    match n {
        Node::X(_) | Node::V(_) => true,
        Node::Const(_) | Node::Param(_) => false,
        Node::Neg(a) | Node::Call(_, a) | Node::Pow { base: a, .. } => uses_phase_variables(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            uses_phase_variables(a) || uses_phase_variables(b)
        }
    }
}

/// Component formulas of a vector depending on `t`.
#[derive(Clone, Debug)]
pub struct TimeFormula {
    exprs: Vec<Expression>,
    params: Params,
}

impl TimeFormula {
    pub fn at(&self, t: f64) -> spraykit::Result<Vec<f64>> {
        let mut params = self.params.clone();
        params.insert("t".into(), t);
        let n = self.exprs.first().map_or(1, Expression::dim);
        let zero = vec![0.0; n];
        self.exprs.iter().map(|e| e.evaluate(&zero, &zero, &params)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ClosedCurve {
    pub x: TimeFormula,
    pub v: TimeFormula,
}

impl ClosedCurve {
    pub fn at(&self, t: f64) -> spraykit::Result<PhasePoint> {
        PhasePoint::new(self.x.at(t)?, self.v.at(t)?)
    }
}

#[derive(Clone, Debug)]
pub enum Expectation {
    Near { value: f64, tol: f64 },
    Below(f64),
    Above(f64),
}

#[derive(Clone, Debug)]
pub struct Assertion {
    pub metric: String,
    pub expect: Expectation,
}

/// Where sample points come from.
#[derive(Clone, Debug)]
pub enum Sampling {
    Initial,
    Along { t_end: f64, count: usize },
    Random { count: usize, seed: u64, radius: f64 },
}

#[derive(Clone, Debug)]
pub enum Job {
    Verify { count: usize, seed: u64, radius: f64 },
    Geodesic { t_end: f64, samples: usize, circle: Option<(Vec<f64>, f64)>, curve: Option<ClosedCurve>, target: Option<Vec<f64>> },
    Eigen { sampling: Sampling, lambda: Option<Expression> },
    Bracket { sampling: Sampling },
    Conjugate { t_max: f64, density: Option<f64>, halving: bool, samples: usize },
    Prop1 { t_max: f64, field: Option<TimeFormula>, compare: bool, samples: usize },
    Transport { v0: Vec<f64>, t_end: f64, samples: usize, field: Option<TimeFormula> },
    JacobiTangent { t_end: f64, samples: usize },
    JacobiField { field: TimeFormula, curve: Option<ClosedCurve>, t_end: f64, samples: usize },
    Projective { factor: ProjectiveFactor, residuals: Vec<Residual>, sampling: Sampling, compare_to: Option<SprayModel> },
    Preserve { factor: ProjectiveFactor, t_window: f64 },
    Variation { w: Vec<f64>, u: Vec<f64>, s: Vec<f64>, delta: f64 },
    Length { curve: Option<ClosedCurve>, a: f64, b: f64, intervals: usize, bridged: bool },
}

impl Job {
    /// Whether the job starts from the task's initial point.
    pub fn needs_initial(&self) -> bool {
        match self {
            Job::Verify { .. } => false,
            Job::Eigen { sampling, .. } | Job::Bracket { sampling } | Job::Projective { sampling, .. } => {
                !matches!(sampling, Sampling::Random { .. })
            }
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    PhiTilde,
    NablaTilde,
    BOfT,
    Shift,
    Diag,
    T0,
    T1,
    T2,
    T2i,
}

impl Residual {
    const ALL: [(&'static str, Residual); 9] = [
        ("phi_tilde", Residual::PhiTilde),
        ("nabla_tilde", Residual::NablaTilde),
        ("b_of_t", Residual::BOfT),
        ("shift", Residual::Shift),
        ("diag", Residual::Diag),
        ("t0", Residual::T0),
        ("t1", Residual::T1),
        ("t2", Residual::T2),
        ("t2i", Residual::T2i),
    ];

    fn parse(text: &str) -> Option<Residual> {
        Residual::ALL.iter().find(|(n, _)| *n == text).map(|(_, r)| *r)
    }
}

#[derive(Clone, Debug)]
pub struct Task {
    pub index: usize,
    pub kind: TaskKind,
    pub name: String,
    pub spray: SprayModel,
    pub finsler: Option<FinslerModel>,
    /// Absent only when the job draws its own samples.
    pub p0: Option<PhasePoint>,
    pub job: Job,
    pub assertions: Vec<Assertion>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub tol: Tolerance,
    pub tasks: Vec<Task>,
}

/// A model together with the Finsler function it came from, if any.
#[derive(Clone, Debug)]
struct Model {
    spray: SprayModel,
    finsler: Option<FinslerModel>,
}

pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| e.in_file(path, &text))
}

pub fn parse(text: &str) -> Result<Scenario, ConfigError> {
    let raw: RawScenario = toml::from_str(text).map_err(ConfigError::from_toml)?;
    let env = constants(&raw.constants)?;
    let model = raw.model.as_ref().map(|m| build_model(m, &env)).transpose()?;
    let p0 = match &raw.initial {
        Some(init) => Some(phase_point(&env, &init.x, &init.v, "initial")?),
        None => None,
    };
    if let (Some(m), Some(p)) = (&model, &p0) {
        check_dim(m.spray.dim(), p.dim(), "initial")?;
    }
    let defaults = Tolerance::default();
    let tol = Tolerance {
        atol: raw.integration.atol.as_ref().map(|n| env.number(n, "integration.atol")).transpose()?.unwrap_or(defaults.atol),
        rtol: raw.integration.rtol.as_ref().map(|n| env.number(n, "integration.rtol")).transpose()?.unwrap_or(defaults.rtol),
    };
    if !(tol.atol > 0.0 && tol.rtol > 0.0) {
        return Err(ConfigError::at("integration", "tolerances must be positive"));
    }
    if raw.tasks.is_empty() {
        return Err(ConfigError::new("scenario has no [[task]] entries"));
    }
    let tasks = raw
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| build_task(i, t, &env, model.as_ref(), p0.as_ref()))
        .collect::<Result<_, _>>()?;
    Ok(Scenario {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        description: raw.description.unwrap_or_default(),
        tol,
        tasks,
    })
}

/// Constants may refer to each other in any order.
fn constants(raw: &BTreeMap<String, Num>) -> Result<Env, ConfigError> {
    let mut env = Env { consts: Params::from([("pi".to_string(), PI)]) };
    let mut pending: Vec<(&String, &Num)> = raw.iter().collect();
    for (name, _) in &pending {
        let phase_var = name.len() > 1 && name.starts_with(['x', 'v']) && name[1..].bytes().all(|b| b.is_ascii_digit());
        if name.as_str() == "pi" || name.as_str() == "t" || phase_var {
            return Err(ConfigError::at(&format!("constants.{name}"), "reserved name"));
        }
    }
    while !pending.is_empty() {
        let before = pending.len();
        let mut last_err = None;
        pending.retain(|(name, n)| match env.number(n, &format!("constants.{name}")) {
            Ok(v) => {
                env.consts.insert((*name).clone(), v);
                false
            }
            Err(e) => {
                last_err = Some(e);
                true
            }
        });
        if pending.len() == before {
            return Err(last_err.expect("a constant failed"));
        }
    }
    Ok(env)
}

fn check_dim(expected: usize, got: usize, at: &str) -> Result<(), ConfigError> {
    if expected != got {
        return Err(ConfigError::at(at, format!("dimension {got} does not match the model dimension {expected}")));
    }
    Ok(())
}

fn phase_point(env: &Env, x: &[Num], v: &[Num], at: &str) -> Result<PhasePoint, ConfigError> {
    let x = env.vector(x, &format!("{at}.x"))?;
    let v = env.vector(v, &format!("{at}.v"))?;
    if x.len() != v.len() {
        return Err(ConfigError::at(at, format!("x has {} components, v has {}", x.len(), v.len())));
    }
    PhasePoint::new(x, v).map_err(|e| ConfigError::at(at, e.to_string()))
}

fn catalog_model(text: &str, at: &str) -> Result<Model, ConfigError> {
    let item = catalog::resolve(text).map_err(|e| ConfigError::at(at, e.to_string()))?;
    match item {
        CatalogItem::Factor(_) => Err(ConfigError::at(at, format!("`{text}` is a projective factor, not a model"))),
        other => Ok(Model { spray: other.spray().expect("models have a spray"), finsler: other.finsler().cloned() }),
    }
}

fn build_model(m: &RawModel, env: &Env) -> Result<Model, ConfigError> {
    let sources = [m.catalog.is_some(), m.spray.is_some(), m.finsler.is_some()];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err(ConfigError::at("model", "give exactly one of `catalog`, `spray` or `finsler`"));
    }
    let mut local = env.clone();
    for (name, n) in &m.params {
        let value = env.number(n, &format!("model.params.{name}"))?;
        local.consts.insert(name.clone(), value);
    }
    let mut model = if let Some(key) = &m.catalog {
        if m.dim.is_some() || !m.guards.is_empty() || !m.params.is_empty() {
            return Err(ConfigError::at("model", "`dim`, `guards` and `params` apply to inline models only"));
        }
        catalog_model(key, "model.catalog")?
    } else {
        let dim = match (&m.spray, m.dim) {
            (Some(f), None) => f.len(),
            (_, Some(d)) => d,
            (None, None) => return Err(ConfigError::at("model", "an inline Finsler function needs `dim`")),
        };
        if dim == 0 {
            return Err(ConfigError::at("model.dim", "must be at least 1"));
        }
        let guards = m
            .guards
            .iter()
            .enumerate()
            .map(|(i, g)| local.phase(g, dim, &format!("model.guards[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let label = m.label.clone().unwrap_or_else(|| "inline".into());
        if let Some(coeffs) = &m.spray {
            check_dim(dim, coeffs.len(), "model.spray")?;
            let f = coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| local.phase(c, dim, &format!("model.spray[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let spray = SprayModel::from_formulas(label, f, guards).map_err(|e| ConfigError::at("model.spray", e.to_string()))?;
            Model { spray, finsler: None }
        } else {
            let src = m.finsler.as_deref().expect("checked above");
            let f = local.phase(src, dim, "model.finsler")?;
            let fin = FinslerModel::new(label, f, guards).map_err(|e| ConfigError::at("model.finsler", e.to_string()))?;
            Model { spray: spraykit::finsler::geodesic_spray(&fin), finsler: Some(fin) }
        }
    };
    if let Some(text) = &m.change {
        model = changed(model, text, env, "model.change")?;
    }
    Ok(model)
}

fn changed(model: Model, text: &str, env: &Env, at: &str) -> Result<Model, ConfigError> {
    let factor = factor(text, model.spray.dim(), env, at)?;
    let spray = apply_change(&model.spray, &factor).map_err(|e| ConfigError::at(at, e.to_string()))?;
    Ok(Model { spray, finsler: None })
}

/// A catalog factor reference such as `r3_factor(1/2)`, or a formula in
/// `x`, `v` and the scenario constants.
fn factor(text: &str, dim: usize, env: &Env, at: &str) -> Result<ProjectiveFactor, ConfigError> {
    let is_catalog = catalog::parse_reference(text).ok().is_some_and(|(key, _)| catalog::entry(&key).is_ok());
    let f = if is_catalog {
        match catalog::resolve(text).map_err(|e| ConfigError::at(at, e.to_string()))? {
            CatalogItem::Factor(f) => f,
            _ => return Err(ConfigError::at(at, format!("`{text}` is a model, not a projective factor"))),
        }
    } else {
        let e = env.phase(text, dim, at)?;
        ProjectiveFactor::new(text, e).map_err(|e| ConfigError::at(at, e.to_string()))?
    };
    check_dim(dim, f.dim(), at)?;
    Ok(f)
}

fn build_task(index: usize, table: &toml::Table, env: &Env, model: Option<&Model>, p0: Option<&PhasePoint>) -> Result<Task, ConfigError> {
    let loc = |key: &str| format!("task[{index}].{key}");
    let kind_text = table
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| ConfigError::at(&format!("task[{index}]"), "missing string key `kind`"))?;
    let kind = TaskKind::parse(kind_text).ok_or_else(|| {
        let known: Vec<&str> = TaskKind::ALL.iter().map(|k| k.name()).collect();
        ConfigError::at(&loc("kind"), format!("unknown task kind `{kind_text}` (expected one of {})", known.join(", ")))
    })?;
    for key in table.keys() {
        if !COMMON_KEYS.contains(&key.as_str()) && !kind.keys().contains(&key.as_str()) {
            return Err(ConfigError::at(&loc(key), format!("key not used by `{}` tasks", kind.name())));
        }
    }
    let raw: RawTask =
        toml::Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| ConfigError::at(&format!("task[{index}]"), e.message().to_string()))?;

    let mut model = match (&raw.model, model) {
        (Some(text), _) => catalog_model(text, &loc("model"))?,
        (None, Some(m)) => m.clone(),
        (None, None) => return Err(ConfigError::at(&format!("task[{index}]"), "no [model] section and no task-level `model`")),
    };
    if let Some(text) = &raw.change {
        model = changed(model, text, env, &loc("change"))?;
    }
    let n = model.spray.dim();
    let p0 = match (&raw.x, &raw.v, p0) {
        (Some(x), Some(v), _) => Some(phase_point(env, x, v, &format!("task[{index}]"))?),
        (None, None, p) => p.cloned(),
        _ => return Err(ConfigError::at(&format!("task[{index}]"), "give both `x` and `v` or neither")),
    };
    if let Some(p) = &p0 {
        check_dim(n, p.dim(), &format!("task[{index}].x"))?;
    }

    let num = |n: &Option<Num>, key: &str| -> Result<Option<f64>, ConfigError> { n.as_ref().map(|n| env.number(n, &loc(key))).transpose() };
    let required = |n: &Option<Num>, key: &str| -> Result<f64, ConfigError> {
        num(n, key)?.ok_or_else(|| ConfigError::at(&loc(key), format!("required by `{}` tasks", kind.name())))
    };
    let positive = |value: f64, key: &str| -> Result<f64, ConfigError> {
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(ConfigError::at(&loc(key), format!("must be positive, got {value}")))
        }
    };
    let vector = |ns: &Option<Vec<Num>>, key: &str| -> Result<Option<Vec<f64>>, ConfigError> {
        match ns {
            Some(ns) => {
                let v = env.vector(ns, &loc(key))?;
                check_dim(n, v.len(), &loc(key))?;
                Ok(Some(v))
            }
            None => Ok(None),
        }
    };
    let field = |srcs: &Option<Vec<String>>, key: &str| -> Result<Option<TimeFormula>, ConfigError> {
        match srcs {
            Some(s) => {
                check_dim(n, s.len(), &loc(key))?;
                Ok(Some(env.timed(s, n, &loc(key))?))
            }
            None => Ok(None),
        }
    };
    let curve = |c: &Option<RawCurve>| -> Result<Option<ClosedCurve>, ConfigError> {
        match c {
            Some(c) => {
                check_dim(n, c.x.len(), &loc("curve.x"))?;
                check_dim(n, c.v.len(), &loc("curve.v"))?;
                Ok(Some(ClosedCurve { x: env.timed(&c.x, n, &loc("curve.x"))?, v: env.timed(&c.v, n, &loc("curve.v"))? }))
            }
            None => Ok(None),
        }
    };
    let sampling = |default_count: usize| -> Result<Sampling, ConfigError> {
        if let Some(t_end) = num(&raw.t_end, "t_end")? {
            if raw.radius.is_some() || raw.seed.is_some() {
                return Err(ConfigError::at(&format!("task[{index}]"), "`t_end` samples along the geodesic; `seed` and `radius` do not apply"));
            }
            return Ok(Sampling::Along { t_end: positive(t_end, "t_end")?, count: raw.samples.unwrap_or(default_count).max(2) });
        }
        match raw.samples {
            Some(count) => Ok(Sampling::Random {
                count,
                seed: raw.seed.unwrap_or(1),
                radius: positive(num(&raw.radius, "radius")?.unwrap_or(0.7), "radius")?,
            }),
            None => Ok(Sampling::Initial),
        }
    };
    let factor_of = |key: &str| -> Result<ProjectiveFactor, ConfigError> {
        let text = raw.factor.as_deref().ok_or_else(|| ConfigError::at(&loc(key), format!("required by `{}` tasks", kind.name())))?;
        factor(text, n, env, &loc(key))
    };

    let job = match kind {
        TaskKind::Verify => Job::Verify {
            count: raw.samples.unwrap_or(100),
            seed: raw.seed.unwrap_or(1),
            radius: positive(num(&raw.radius, "radius")?.unwrap_or(0.7), "radius")?,
        },
        TaskKind::Geodesic => {
            let circle = match &raw.circle {
                Some(c) => {
                    let center = env.vector(&c.center, &loc("circle.center"))?;
                    check_dim(n, center.len(), &loc("circle.center"))?;
                    Some((center, positive(env.number(&c.radius, &loc("circle.radius"))?, "circle.radius")?))
                }
                None => None,
            };
            Job::Geodesic {
                t_end: positive(required(&raw.t_end, "t_end")?, "t_end")?,
                samples: raw.samples.unwrap_or(201).max(2),
                circle,
                curve: curve(&raw.curve)?,
                target: vector(&raw.target, "target")?,
            }
        }
        TaskKind::Eigen => Job::Eigen {
            sampling: sampling(101)?,
            lambda: raw.lambda.as_deref().map(|s| env.phase(s, n, &loc("lambda"))).transpose()?,
        },
        TaskKind::Bracket => Job::Bracket { sampling: sampling(25)? },
        TaskKind::Conjugate => Job::Conjugate {
            t_max: positive(required(&raw.t_max, "t_max")?, "t_max")?,
            density: num(&raw.density, "density")?.map(|d| positive(d, "density")).transpose()?,
            halving: raw.halving.unwrap_or(false),
            samples: raw.samples.unwrap_or(401).max(2),
        },
        TaskKind::Prop1 => Job::Prop1 {
            t_max: positive(required(&raw.t_max, "t_max")?, "t_max")?,
            field: field(&raw.field, "field")?,
            compare: raw.compare.unwrap_or(false),
            samples: raw.samples.unwrap_or(401).max(2),
        },
        TaskKind::Transport => Job::Transport {
            v0: vector(&raw.v0, "v0")?.ok_or_else(|| ConfigError::at(&loc("v0"), "required by `transport` tasks"))?,
            t_end: positive(required(&raw.t_end, "t_end")?, "t_end")?,
            samples: raw.samples.unwrap_or(401).max(2),
            field: field(&raw.field, "field")?,
        },
        TaskKind::Jacobi => {
            let t_end = positive(required(&raw.t_end, "t_end")?, "t_end")?;
            let samples = raw.samples.unwrap_or(500).max(2);
            match raw.mode.as_deref().unwrap_or("tangent") {
                "tangent" => {
                    if raw.field.is_some() || raw.curve.is_some() {
                        return Err(ConfigError::at(&loc("mode"), "`tangent` mode takes no `field` or `curve`"));
                    }
                    Job::JacobiTangent { t_end, samples }
                }
                "field" => Job::JacobiField {
                    field: field(&raw.field, "field")?.ok_or_else(|| ConfigError::at(&loc("field"), "required in `field` mode"))?,
                    curve: curve(&raw.curve)?,
                    t_end,
                    samples,
                },
                other => return Err(ConfigError::at(&loc("mode"), format!("unknown mode `{other}` (expected `tangent` or `field`)"))),
            }
        }
        TaskKind::Projective => {
            let names = raw.residuals.clone().unwrap_or_else(|| Residual::ALL.iter().map(|(n, _)| n.to_string()).collect());
            let residuals = names
                .iter()
                .map(|r| {
                    Residual::parse(r).ok_or_else(|| {
                        let known: Vec<&str> = Residual::ALL.iter().map(|(n, _)| *n).collect();
                        ConfigError::at(&loc("residuals"), format!("unknown residual `{r}` (expected one of {})", known.join(", ")))
                    })
                })
                .collect::<Result<_, _>>()?;
            let compare_to = match &raw.compare_to {
                Some(text) => {
                    let m = catalog_model(text, &loc("compare_to"))?;
                    check_dim(n, m.spray.dim(), &loc("compare_to"))?;
                    Some(m.spray)
                }
                None => None,
            };
            Job::Projective { factor: factor_of("factor")?, residuals, sampling: sampling(25)?, compare_to }
        }
        TaskKind::Preserve => Job::Preserve {
            factor: factor_of("factor")?,
            t_window: positive(required(&raw.t_window, "t_window")?, "t_window")?,
        },
        TaskKind::Variation => {
            let w = vector(&raw.w, "w")?.ok_or_else(|| ConfigError::at(&loc("w"), "required by `variation` tasks"))?;
            let u = match &raw.u {
                Some(u) => env.vector(u, &loc("u"))?,
                None => (0..=20).map(|k| -1.0 + 0.1 * k as f64).collect(),
            };
            let s = match &raw.s {
                Some(s) => env.vector(s, &loc("s"))?,
                None => return Err(ConfigError::at(&loc("s"), "required by `variation` tasks")),
            };
            if s.iter().any(|v| *v < 0.0) {
                return Err(ConfigError::at(&loc("s"), "parameters must be nonnegative"));
            }
            Job::Variation { w, u, s, delta: positive(num(&raw.delta, "delta")?.unwrap_or(1e-4), "delta")? }
        }
        TaskKind::Length => {
            if model.finsler.is_none() {
                return Err(ConfigError::at(&format!("task[{index}]"), "`length` needs a Finsler model"));
            }
            let a = num(&raw.a, "a")?.unwrap_or(0.0);
            let b = required(&raw.b, "b")?;
            if b <= a {
                return Err(ConfigError::at(&loc("b"), "must exceed `a`"));
            }
            Job::Length { curve: curve(&raw.curve)?, a, b, intervals: raw.intervals.unwrap_or(2000).max(2), bridged: raw.bridged.unwrap_or(false) }
        }
    };

    if p0.is_none() && job.needs_initial() {
        return Err(ConfigError::at(&format!("task[{index}]"), "no [initial] section and no task-level `x`, `v`"));
    }

    let assertions = raw
        .expect
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let at = loc(&format!("expect[{i}]"));
            if !kind.knows_metric(&e.metric) {
                return Err(ConfigError::at(&at, format!("`{}` tasks report no metric `{}`", kind.name(), e.metric)));
            }
            let expect = match (&e.value, &e.tol, &e.below, &e.above) {
                (Some(v), Some(t), None, None) => {
                    Expectation::Near { value: env.number(v, &at)?, tol: positive(env.number(t, &at)?, &format!("expect[{i}].tol"))? }
                }
                (None, None, Some(b), None) => Expectation::Below(env.number(b, &at)?),
                (None, None, None, Some(a)) => Expectation::Above(env.number(a, &at)?),
                _ => return Err(ConfigError::at(&at, "give `value` with `tol`, or `below`, or `above`")),
            };
            Ok(Assertion { metric: e.metric.clone(), expect })
        })
        .collect::<Result<_, _>>()?;

    Ok(Task {
        index,
        kind,
        name: raw.name.clone().unwrap_or_else(|| kind.name().to_string()),
        spray: model.spray,
        finsler: model.finsler,
        p0,
        job,
        assertions,
    })
}
