//! Analysis configuration: a single JSON document with top-level keys
//! `system`, `constraints`, `initial_set`, `options` and the optional
//! command sections `trace` and `sweep`.
//!
//! Parsing happens in two passes. Serde maps the text onto raw structs (any
//! failure is a `SchemaError` with the JSON path of the offending field),
//! then validation walks the whole document and reports every issue it
//! finds rather than stopping at the first.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::dynamics::{Horizon, NamedField, PolyMatrix, PolyVector, Polynomial, SystemModel, MAX_POLY_DEGREE};
use crate::geometry::{Metric, Point, SpdMatrix, StarryCompact};
use crate::linstab::{PhaseConstraints, DEFAULT_GRID_SIZE};
use crate::starry_transform::{PhaseRegion, SetSchedule};

pub const DEFAULT_SAMPLES: usize = 500;
pub const DEFAULT_TIME_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueCode {
    SchemaError,
    DimensionMismatch,
    HorizonError,
    GridSizeError,
    DegreeError,
    InvalidValue,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::SchemaError => "SchemaError",
            IssueCode::DimensionMismatch => "DimensionMismatch",
            IssueCode::HorizonError => "HorizonError",
            IssueCode::GridSizeError => "GridSizeError",
            IssueCode::DegreeError => "DegreeError",
            IssueCode::InvalidValue => "InvalidValue",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub code: IssueCode,
    /// JSON pointer to the offending field.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config::{} at {}: {}", self.code.as_str(), self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn has(&self, code: IssueCode) -> bool {
        self.0.iter().any(|i| i.code == code)
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: Value,
    constraints: Value,
    initial_set: Value,
    #[serde(default)]
    options: RawOptions,
    #[serde(default)]
    trace: Option<RawTrace>,
    #[serde(default)]
    sweep: Option<RawSweep>,
}

// The `kind`-tagged sections are dispatched by hand rather than through
// serde's internally tagged enums, which buffer their content and so lose
// the path of a bad field.

#[derive(Debug)]
enum RawSystem {
    Linear(RawLinearSystem),
    Nonlinear(RawNonlinearSystem),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinearSystem {
    n: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    t0: f64,
    #[serde(rename = "T")]
    t1: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNonlinearSystem {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    n: usize,
    t0: f64,
    #[serde(rename = "T")]
    t1: f64,
}

#[derive(Debug)]
enum RawConstraints {
    Linear(RawLinearConstraints),
    Sets { times: Vec<f64>, sets: Vec<RawSet> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinearConstraints {
    l: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetFamily {
    times: Vec<f64>,
    sets: Vec<Value>,
}

#[derive(Debug)]
enum RawSet {
    Ball(RawBall),
    Ellipsoid(RawEllipsoid),
    GaugeTable(RawGaugeTable),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBall {
    center: Vec<f64>,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    free: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEllipsoid {
    center: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(default)]
    level: Option<f64>,
    #[serde(default)]
    free: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGaugeTable {
    directions: Vec<Vec<f64>>,
    radii: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    grid_size: Option<usize>,
    step: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    metric: Option<Value>,
}

#[derive(Debug)]
enum RawMetric {
    Euclidean,
    QWeighted(RawQ),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQ {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
}

fn schema_issue(path: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { code: IssueCode::SchemaError, path: path.into(), message: message.into() }
}

fn decode<T: DeserializeOwned>(body: Value, path: &str) -> Result<T, ConfigIssue> {
    serde_path_to_error::deserialize(body).map_err(|e| {
        schema_issue(format!("{path}{}", pointer_from_serde_path(&e.path().to_string())), e.inner().to_string())
    })
}

/// Splits a `{"kind": ..., ...}` object into its tag and remaining fields.
fn split_kind(v: &Value, path: &str) -> Result<(String, Value), ConfigIssue> {
    let mut obj = v.as_object().cloned().ok_or_else(|| schema_issue(path, "expected an object"))?;
    match obj.remove("kind") {
        Some(Value::String(k)) => Ok((k, Value::Object(obj))),
        Some(_) => Err(schema_issue(format!("{path}/kind"), "kind must be a string")),
        None => Err(schema_issue(format!("{path}/kind"), "missing field `kind`")),
    }
}

fn unknown_kind(path: &str, kind: &str, expected: &str) -> ConfigIssue {
    schema_issue(format!("{path}/kind"), format!("unknown kind `{kind}`, expected one of {expected}"))
}

impl RawSystem {
    fn decode(v: &Value, path: &str) -> Result<Self, ConfigIssue> {
        let (kind, body) = split_kind(v, path)?;
        match kind.as_str() {
            "linear" => decode(body, path).map(RawSystem::Linear),
            "nonlinear" => decode(body, path).map(RawSystem::Nonlinear),
            _ => Err(unknown_kind(path, &kind, "linear, nonlinear")),
        }
    }
}

impl RawConstraints {
    fn decode(v: &Value, path: &str, issues: &mut Vec<ConfigIssue>) -> Option<Self> {
        let (kind, body) = split_kind(v, path).map_err(|e| issues.push(e)).ok()?;
        match kind.as_str() {
            "linear" => decode(body, path).map(RawConstraints::Linear).map_err(|e| issues.push(e)).ok(),
            "sets" => {
                let fam: RawSetFamily = decode(body, path).map_err(|e| issues.push(e)).ok()?;
                let mut sets = Vec::new();
                for (i, s) in fam.sets.iter().enumerate() {
                    match RawSet::decode(s, &format!("{path}/sets/{i}")) {
                        Ok(s) => sets.push(s),
                        Err(e) => issues.push(e),
                    }
                }
                (sets.len() == fam.sets.len()).then_some(RawConstraints::Sets { times: fam.times, sets })
            }
            _ => {
                issues.push(unknown_kind(path, &kind, "linear, sets"));
                None
            }
        }
    }
}

impl RawSet {
    fn decode(v: &Value, path: &str) -> Result<Self, ConfigIssue> {
        let (kind, body) = split_kind(v, path)?;
        match kind.as_str() {
            "ball" => decode(body, path).map(RawSet::Ball),
            "ellipsoid" => decode(body, path).map(RawSet::Ellipsoid),
            "gauge_table" => decode(body, path).map(RawSet::GaugeTable),
            _ => Err(unknown_kind(path, &kind, "ball, ellipsoid, gauge_table")),
        }
    }
}

impl RawMetric {
    fn decode(v: &Value, path: &str) -> Result<Self, ConfigIssue> {
        let (kind, body) = split_kind(v, path)?;
        match kind.as_str() {
            "euclidean" => decode::<BTreeMap<String, Value>>(body, path).and_then(|rest| match rest.keys().next() {
                Some(k) => Err(schema_issue(format!("{path}/{k}"), "unknown field")),
                None => Ok(RawMetric::Euclidean),
            }),
            "q_weighted" => decode(body, path).map(RawMetric::QWeighted),
            _ => Err(unknown_kind(path, &kind, "euclidean, q_weighted")),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    x0: Vec<f64>,
    #[serde(default)]
    form: Option<TraceForm>,
    #[serde(default)]
    time_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceForm {
    V,
    W,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: String,
    values: Vec<f64>,
}

/// Shape of the initial set and, when fixed, the set itself.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSetSpec {
    Ball { center: Point, radius: Option<f64> },
    Ellipsoid { center: Point, q: DMatrix<f64>, level: Option<f64> },
    GaugeTable(StarryCompact),
}

impl InitialSetSpec {
    /// The concrete set, if its size is fixed.
    pub fn fixed_set(&self) -> Option<StarryCompact> {
        match self {
            InitialSetSpec::Ball { center, radius: Some(r) } => StarryCompact::ball(center.clone(), *r).ok(),
            InitialSetSpec::Ellipsoid { center, q, level: Some(c) } => {
                StarryCompact::ellipsoid(center.clone(), q.clone(), *c).ok()
            }
            InitialSetSpec::GaugeTable(s) => Some(s.clone()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub x0: Point,
    pub form: TraceForm,
    pub time_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// JSON pointer into the configuration document.
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub system: SystemModel,
    pub constraints: PhaseRegion,
    pub initial_set: InitialSetSpec,
    /// Whether the initial set's size is to be searched for.
    pub free: bool,
    pub grid_size: usize,
    pub step: f64,
    pub samples: usize,
    pub seed: u64,
    pub metric: Metric,
    pub trace: Option<TraceSpec>,
    pub sweep: Option<SweepSpec>,
    /// The document the configuration was parsed from.
    pub document: Value,
}

pub fn parse_config(text: &str) -> Result<AnalysisConfig, ConfigErrors> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        ConfigErrors(vec![ConfigIssue {
            code: IssueCode::SchemaError,
            path: String::new(),
            message: e.to_string(),
        }])
    })?;
    parse_config_value(value)
}

pub fn parse_config_value(value: Value) -> Result<AnalysisConfig, ConfigErrors> {
    let raw: RawConfig = decode(value.clone(), "").map_err(|e| ConfigErrors(vec![e]))?;
    let mut issues = Vec::new();
    let system = RawSystem::decode(&raw.system, "/system").map_err(|e| issues.push(e)).ok();
    let constraints = RawConstraints::decode(&raw.constraints, "/constraints", &mut issues);
    let initial = RawSet::decode(&raw.initial_set, "/initial_set").map_err(|e| issues.push(e)).ok();
    let metric = match &raw.options.metric {
        None => Some(RawMetric::Euclidean),
        Some(m) => RawMetric::decode(m, "/options/metric").map_err(|e| issues.push(e)).ok(),
    };
    match (system, constraints, initial, metric) {
        (Some(system), Some(constraints), Some(initial), Some(metric)) if issues.is_empty() => {
            let sections = Sections { system, constraints, initial, metric };
            Validator::default().finish(sections, raw, value)
        }
        _ => Err(ConfigErrors(issues)),
    }
}

struct Sections {
    system: RawSystem,
    constraints: RawConstraints,
    initial: RawSet,
    metric: RawMetric,
}

/// `a.b[2].c` → `/a/b/2/c`.
fn pointer_from_serde_path(path: &str) -> String {
    if path == "." {
        return String::new();
    }
    let mut out = String::new();
    for part in path.split('.') {
        let mut rest = part;
        while let Some(open) = rest.find('[') {
            let (name, tail) = rest.split_at(open);
            if !name.is_empty() {
                out.push('/');
                out.push_str(name);
            }
            let close = tail.find(']').unwrap_or(tail.len());
            out.push('/');
            out.push_str(&tail[1..close]);
            rest = tail.get(close + 1..).unwrap_or("");
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

#[derive(Default)]
struct Validator {
    issues: Vec<ConfigIssue>,
}

impl Validator {
    fn push(&mut self, code: IssueCode, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue { code, path: path.into(), message: message.into() });
    }

    fn dims(&mut self, path: &str, expected: usize, got: usize) -> bool {
        if expected != got {
            self.push(IssueCode::DimensionMismatch, path, format!("expected length {expected}, got {got}"));
            false
        } else {
            true
        }
    }

    fn poly(&mut self, path: &str, coeffs: &[f64]) -> Option<Polynomial> {
        if coeffs.len() > MAX_POLY_DEGREE + 1 {
            self.push(
                IssueCode::DegreeError,
                path,
                format!("degree {} exceeds {MAX_POLY_DEGREE}", coeffs.len() - 1),
            );
            return None;
        }
        match Polynomial::new(coeffs.to_vec()) {
            Ok(p) => Some(p),
            Err(e) => {
                self.push(IssueCode::InvalidValue, path, e.to_string());
                None
            }
        }
    }

    fn square(&mut self, path: &str, rows: &[Vec<f64>], n: Option<usize>) -> Option<DMatrix<f64>> {
        let size = n.unwrap_or(rows.len());
        let mut ok = self.dims(path, size, rows.len());
        for (i, r) in rows.iter().enumerate() {
            ok &= self.dims(&format!("{path}/{i}"), size, r.len());
        }
        if !ok || size == 0 {
            return None;
        }
        Some(DMatrix::from_fn(size, size, |i, j| rows[i][j]))
    }

    fn spd(&mut self, path: &str, rows: &[Vec<f64>], n: Option<usize>) -> Option<DMatrix<f64>> {
        let m = self.square(path, rows, n)?;
        if SpdMatrix::new(m.clone()).is_err() {
            self.push(IssueCode::InvalidValue, path, "matrix must be symmetric positive definite");
            return None;
        }
        Some(m)
    }

    fn system(&mut self, raw: &RawSystem) -> (Option<SystemModel>, Option<usize>, Option<f64>) {
        let (n, t0, t1) = match raw {
            RawSystem::Linear(s) => (s.n, s.t0, s.t1),
            RawSystem::Nonlinear(s) => (s.n, s.t0, s.t1),
        };
        if n == 0 {
            self.push(IssueCode::DimensionMismatch, "/system/n", "dimension must be at least 1");
        }
        let horizon = match Horizon::new(t0, t1) {
            Ok(h) => Some(h),
            Err(_) => {
                self.push(IssueCode::HorizonError, "/system/T", format!("need t0 < T, got t0 = {t0}, T = {t1}"));
                None
            }
        };
        let model = match raw {
            RawSystem::Linear(RawLinearSystem { a, .. }) => {
                let mut ok = self.dims("/system/A", n, a.len());
                let mut rows = Vec::new();
                for (i, row) in a.iter().enumerate() {
                    ok &= self.dims(&format!("/system/A/{i}"), n, row.len());
                    let mut r = Vec::new();
                    for (j, coeffs) in row.iter().enumerate() {
                        match self.poly(&format!("/system/A/{i}/{j}"), coeffs) {
                            Some(p) => r.push(p),
                            None => ok = false,
                        }
                    }
                    rows.push(r);
                }
                match (ok && n > 0, horizon) {
                    (true, Some(h)) => PolyMatrix::new(rows)
                        .and_then(|a| SystemModel::linear(a, h))
                        .map_err(|e| self.push(IssueCode::InvalidValue, "/system/A", e.to_string()))
                        .ok(),
                    _ => None,
                }
            }
            RawSystem::Nonlinear(RawNonlinearSystem { name, params, .. }) => match NamedField::new(name, params, n) {
                Ok(f) => horizon.and_then(|h| {
                    SystemModel::nonlinear(f, n, h)
                        .map_err(|e| self.push(IssueCode::InvalidValue, "/system/name", e.to_string()))
                        .ok()
                }),
                Err(crate::dynamics::DynamicsError::DimensionMismatch { expected, got }) => {
                    self.push(
                        IssueCode::DimensionMismatch,
                        "/system/n",
                        format!("field '{name}' is {expected}-dimensional, got n = {got}"),
                    );
                    None
                }
                Err(e) => {
                    self.push(IssueCode::InvalidValue, "/system/name", e.to_string());
                    None
                }
            },
        };
        (model, (n > 0).then_some(n), horizon.map(|h| h.t0()))
    }

    fn set(&mut self, path: &str, raw: &RawSet, n: Option<usize>, need_fixed: bool) -> Option<(InitialSetSpec, bool)> {
        match raw {
            RawSet::Ball(RawBall { center, radius, free }) => {
                let ok = n.is_none_or(|n| self.dims(&format!("{path}/center"), n, center.len()));
                if let Some(r) = radius {
                    if !(r.is_finite() && *r > 0.0) {
                        self.push(IssueCode::InvalidValue, format!("{path}/radius"), "radius must be positive");
                        return None;
                    }
                } else if need_fixed || !free {
                    self.push(IssueCode::SchemaError, format!("{path}/radius"), "missing radius for a fixed set");
                    return None;
                }
                ok.then(|| (InitialSetSpec::Ball { center: Point::from_vec(center.clone()), radius: *radius }, *free))
            }
            RawSet::Ellipsoid(RawEllipsoid { center, q, level, free }) => {
                let size = n.unwrap_or(center.len());
                let ok = self.dims(&format!("{path}/center"), size, center.len());
                let q = self.spd(&format!("{path}/Q"), q, Some(size));
                if let Some(c) = level {
                    if !(c.is_finite() && *c > 0.0) {
                        self.push(IssueCode::InvalidValue, format!("{path}/level"), "level must be positive");
                        return None;
                    }
                } else if need_fixed || !free {
                    self.push(IssueCode::SchemaError, format!("{path}/level"), "missing level for a fixed set");
                    return None;
                }
                match (ok, q) {
                    (true, Some(q)) => Some((
                        InitialSetSpec::Ellipsoid { center: Point::from_vec(center.clone()), q, level: *level },
                        *free,
                    )),
                    _ => None,
                }
            }
            RawSet::GaugeTable(RawGaugeTable { directions, radii }) => {
                let mut ok = true;
                if let Some(n) = n {
                    for (i, d) in directions.iter().enumerate() {
                        ok &= self.dims(&format!("{path}/directions/{i}"), n, d.len());
                    }
                }
                ok &= self.dims(&format!("{path}/radii"), directions.len(), radii.len());
                if !ok {
                    return None;
                }
                let dirs = directions.iter().map(|d| Point::from_vec(d.clone())).collect();
                match StarryCompact::gauge_table(dirs, radii.clone()) {
                    Ok(s) => Some((InitialSetSpec::GaugeTable(s), false)),
                    Err(e) => {
                        self.push(IssueCode::InvalidValue, path, e.to_string());
                        None
                    }
                }
            }
        }
    }

    fn constraints(&mut self, raw: &RawConstraints, n: Option<usize>, t0: Option<f64>) -> Option<PhaseRegion> {
        match raw {
            RawConstraints::Linear(RawLinearConstraints { l }) => {
                if l.is_empty() {
                    self.push(IssueCode::InvalidValue, "/constraints/l", "at least one constraint is required");
                    return None;
                }
                let mut ok = true;
                let mut rows = Vec::new();
                for (s, ls) in l.iter().enumerate() {
                    let path = format!("/constraints/l/{s}");
                    if let Some(n) = n {
                        ok &= self.dims(&path, n, ls.len());
                    }
                    let mut entries = Vec::new();
                    for (i, coeffs) in ls.iter().enumerate() {
                        match self.poly(&format!("{path}/{i}"), coeffs) {
                            Some(p) => entries.push(p),
                            None => ok = false,
                        }
                    }
                    let v = PolyVector::new(entries);
                    if v.is_zero() {
                        self.push(IssueCode::InvalidValue, path, "constraint is identically zero");
                        ok = false;
                    }
                    rows.push(v);
                }
                if !ok {
                    return None;
                }
                PhaseConstraints::new(rows, t0.unwrap_or(0.0))
                    .map(PhaseRegion::Linear)
                    .map_err(|e| self.push(IssueCode::InvalidValue, "/constraints/l", e.to_string()))
                    .ok()
            }
            RawConstraints::Sets { times, sets } => {
                let mut ok = self.dims("/constraints/sets", times.len(), sets.len());
                if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) {
                    self.push(IssueCode::InvalidValue, "/constraints/times", "times must be non-empty and increasing");
                    ok = false;
                }
                let mut built = Vec::new();
                for (i, s) in sets.iter().enumerate() {
                    match self.set(&format!("/constraints/sets/{i}"), s, n, true) {
                        Some((spec, _)) => built.extend(spec.fixed_set()),
                        None => ok = false,
                    }
                }
                if !ok {
                    return None;
                }
                SetSchedule::new(times.clone(), built)
                    .map(PhaseRegion::Sets)
                    .map_err(|e| self.push(IssueCode::InvalidValue, "/constraints", e.to_string()))
                    .ok()
            }
        }
    }

    fn finish(mut self, sections: Sections, raw: RawConfig, document: Value) -> Result<AnalysisConfig, ConfigErrors> {
        let (system, n, t0) = self.system(&sections.system);
        let constraints = self.constraints(&sections.constraints, n, t0);
        let initial = self.set("/initial_set", &sections.initial, n, false);

        let opts = &raw.options;
        let grid_size = opts.grid_size.unwrap_or(DEFAULT_GRID_SIZE);
        if grid_size < 2 {
            self.push(IssueCode::GridSizeError, "/options/grid_size", format!("need at least 2 nodes, got {grid_size}"));
        }
        let length = system.as_ref().map(|m| m.horizon().length());
        let step = opts.step.or(length.map(|l| l / 2000.0)).unwrap_or(f64::NAN);
        if let Some(s) = opts.step {
            if !(s.is_finite() && s > 0.0) || length.is_some_and(|l| s > l) {
                self.push(IssueCode::InvalidValue, "/options/step", format!("step must be in (0, T - t0], got {s}"));
            }
        }
        let samples = opts.samples.unwrap_or(DEFAULT_SAMPLES);
        if samples == 0 {
            self.push(IssueCode::InvalidValue, "/options/samples", "samples must be at least 1");
        }
        let metric = match &sections.metric {
            RawMetric::Euclidean => Some(Metric::Euclidean),
            RawMetric::QWeighted(RawQ { q }) => {
                self.spd("/options/metric/Q", q, n).map(|q| Metric::q_weighted(q).expect("validated"))
            }
        };
        let trace = raw.trace.as_ref().and_then(|t| {
            let ok = n.is_none_or(|n| self.dims("/trace/x0", n, t.x0.len()));
            let time_samples = t.time_samples.unwrap_or(DEFAULT_TIME_SAMPLES);
            if time_samples == 0 {
                self.push(IssueCode::InvalidValue, "/trace/time_samples", "need at least one sample");
                return None;
            }
            ok.then(|| TraceSpec {
                x0: Point::from_vec(t.x0.clone()),
                form: t.form.unwrap_or(TraceForm::V),
                time_samples,
            })
        });
        let sweep = raw.sweep.as_ref().and_then(|s| {
            match document.pointer(&s.parameter) {
                Some(v) if v.is_number() => {}
                _ => {
                    self.push(
                        IssueCode::InvalidValue,
                        "/sweep/parameter",
                        format!("'{}' does not point at a number in this document", s.parameter),
                    );
                    return None;
                }
            }
            Some(SweepSpec { parameter: s.parameter.clone(), values: s.values.clone() })
        });

        if !self.issues.is_empty() {
            return Err(ConfigErrors(self.issues));
        }
        let (initial_set, free) = initial.expect("no issues implies a valid initial set");
        Ok(AnalysisConfig {
            system: system.expect("validated"),
            constraints: constraints.expect("validated"),
            initial_set,
            free,
            grid_size,
            step,
            samples,
            seed: opts.seed.unwrap_or(0),
            metric: metric.expect("validated"),
            trace,
            sweep,
            document,
        })
    }
}
