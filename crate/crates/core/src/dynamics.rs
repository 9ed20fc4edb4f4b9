//! System models and their flows.
//!
//! Linear models carry `A(t)` as a matrix of polynomials in `t - t0`;
//! nonlinear models are drawn from a small registry of named vector fields.
//! Everything is integrated with classical fixed-step RK4 so that
//! trajectories, fundamental matrices and Gram matrices share grid nodes.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{Point, SpdMatrix};

pub const MAX_POLY_DEGREE: usize = 6;

/// Condition-number estimate of `X(t, t0)` above which the table is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {t}; reduce the step")]
    NonFiniteState { t: f64 },
    #[error("operation requires a linear model")]
    NotLinear,
    #[error("fundamental matrix is ill-conditioned at t = {t} (estimate {condition:e})")]
    IllConditioned { t: f64, condition: f64 },
    #[error("time {t} lies outside the horizon [{t0}, {t1}]")]
    OutOfHorizon { t: f64, t0: f64, t1: f64 },
    #[error("horizon requires t0 < T, got [{t0}, {t1}]")]
    Horizon { t0: f64, t1: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("polynomial degree {degree} exceeds {MAX_POLY_DEGREE}")]
    DegreeTooHigh { degree: usize },
    #[error("non-finite polynomial coefficient")]
    NonFiniteCoefficient,
    #[error("unknown vector field '{0}'")]
    UnknownField(String),
    #[error("vector field '{field}' has no parameter '{param}'")]
    UnknownParameter { field: String, param: String },
    #[error("vector field does not vanish at the origin (t = {t}, |f(0,t)| = {norm:e})")]
    NonzeroEquilibrium { t: f64, norm: f64 },
    #[error("step must be positive and no longer than the horizon, got {0}")]
    InvalidStep(f64),
    #[error("initial Gram matrix must be symmetric positive definite")]
    NotPositiveDefinite,
    #[error("a linear model needs a flow table for pullbacks")]
    MissingFlow,
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Polynomial in `s = t - t0`, coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() > MAX_POLY_DEGREE + 1 {
            return Err(DynamicsError::DegreeTooHigh { degree: coeffs.len() - 1 });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::NonFiniteCoefficient);
        }
        Ok(Self { coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn negated(&self) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }
}

/// Time interval `[t0, t1]` with `t0 < t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    t0: f64,
    t1: f64,
}

impl Horizon {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(DynamicsError::Horizon { t0, t1 });
        }
        Ok(Self { t0, t1 })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Tolerance used to snap times onto the horizon ends and grid nodes.
    pub fn time_tol(&self) -> f64 {
        1e-12 * self.length().max(1.0)
    }

    pub fn check(&self, t: f64) -> Result<()> {
        let tol = self.time_tol();
        if t.is_nan() || t < self.t0 - tol || t > self.t1 + tol {
            return Err(DynamicsError::OutOfHorizon { t, t0: self.t0, t1: self.t1 });
        }
        Ok(())
    }

    /// Default integration step, 1/2000 of the horizon.
    pub fn default_step(&self) -> f64 {
        self.length() / 2000.0
    }

    /// Uniform grid with the given step; the last interval is shortened to
    /// land exactly on `t1`.
    pub fn uniform_grid(&self, step: f64) -> Result<Vec<f64>> {
        let len = self.length();
        if !(step.is_finite() && step > 0.0 && step <= len * (1.0 + 1e-12)) {
            return Err(DynamicsError::InvalidStep(step));
        }
        let intervals = ((len / step) - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..intervals).map(|k| self.t0 + k as f64 * step).collect();
        times.push(self.t1);
        Ok(times)
    }

    /// `nodes` equally spaced times from `t0` to `t1` inclusive.
    pub fn node_grid(&self, nodes: usize) -> Vec<f64> {
        let m = nodes.max(2) - 1;
        let mut times: Vec<f64> = (0..m).map(|k| self.t0 + self.length() * k as f64 / m as f64).collect();
        times.push(self.t1);
        times
    }
}

/// Square matrix of polynomials in `t - t0`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    n: usize,
    entries: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn new(rows: Vec<Vec<Polynomial>>) -> Result<Self> {
        let n = rows.len();
        for r in &rows {
            if r.len() != n {
                return Err(DynamicsError::DimensionMismatch { expected: n, got: r.len() });
            }
        }
        Ok(Self { n, entries: rows.into_iter().flatten().collect() })
    }

    pub fn constant(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(DynamicsError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| Polynomial::constant(m[(i, j)])).collect())
            .collect();
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entries[i * self.n + j].eval(s))
    }
}

/// Time-varying vector of polynomials in `t - t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyVector {
    entries: Vec<Polynomial>,
}

impl PolyVector {
    pub fn new(entries: Vec<Polynomial>) -> Self {
        Self { entries }
    }

    pub fn constant(v: &[f64]) -> Self {
        Self { entries: v.iter().map(|&c| Polynomial::constant(c)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize) -> &Polynomial {
        &self.entries[i]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Polynomial::is_zero)
    }

    pub fn eval(&self, s: f64) -> Point {
        Point::from_iterator(self.entries.len(), self.entries.iter().map(|p| p.eval(s)))
    }
}

type FieldFn = fn(&Point, f64, &[f64]) -> Point;

struct FieldSpec {
    name: &'static str,
    /// `None` accepts any dimension.
    dim: Option<usize>,
    params: &'static [(&'static str, f64)],
    eval: FieldFn,
}

const REGISTRY: &[FieldSpec] = &[
    FieldSpec {
        name: "quadratic_cascade",
        dim: Some(2),
        params: &[("a", 1.0), ("b", 1.0), ("c", 1.0)],
        eval: |x, _, p| Point::from_vec(vec![-p[0] * x[0] + p[1] * x[1] * x[1], -p[2] * x[1]]),
    },
    FieldSpec {
        name: "reversed_van_der_pol",
        dim: Some(2),
        params: &[("mu", 1.0)],
        eval: |x, _, p| Point::from_vec(vec![-x[1], x[0] + p[0] * (x[0] * x[0] - 1.0) * x[1]]),
    },
    FieldSpec {
        name: "damped_pendulum",
        dim: Some(2),
        params: &[("omega2", 1.0), ("damping", 0.5)],
        eval: |x, _, p| Point::from_vec(vec![x[1], -p[0] * x[0].sin() - p[1] * x[1]]),
    },
    FieldSpec {
        name: "cubic_decay",
        dim: None,
        params: &[("a", 1.0)],
        eval: |x, _, p| x * (-p[0] * x.norm_squared()),
    },
];

pub fn registry_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|f| f.name).collect()
}

/// A registered nonlinear vector field with resolved parameters.
#[derive(Clone)]
pub struct NamedField {
    name: String,
    params: Vec<f64>,
    eval: FieldFn,
}

impl std::fmt::Debug for NamedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NamedField").field("name", &self.name).field("params", &self.params).finish()
    }
}

impl PartialEq for NamedField {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.params == other.params
    }
}

impl NamedField {
    pub fn new(name: &str, params: &BTreeMap<String, f64>, n: usize) -> Result<Self> {
        let spec = REGISTRY
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| DynamicsError::UnknownField(name.to_string()))?;
        if let Some(d) = spec.dim {
            if d != n {
                return Err(DynamicsError::DimensionMismatch { expected: d, got: n });
            }
        }
        for key in params.keys() {
            if !spec.params.iter().any(|(p, _)| p == key) {
                return Err(DynamicsError::UnknownParameter { field: name.to_string(), param: key.clone() });
            }
        }
        let values = spec
            .params
            .iter()
            .map(|(p, default)| params.get(*p).copied().unwrap_or(*default))
            .collect();
        Ok(Self { name: name.to_string(), params: values, eval: spec.eval })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &Point, t: f64) -> Point {
        (self.eval)(x, t, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Linear(PolyMatrix),
    Nonlinear(NamedField),
}

/// `dx/dt = f(x, t)` on a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    n: usize,
    horizon: Horizon,
    kind: FieldKind,
}

impl SystemModel {
    pub fn linear(a: PolyMatrix, horizon: Horizon) -> Result<Self> {
        let model = Self { n: a.dim(), horizon, kind: FieldKind::Linear(a) };
        for t in horizon_probe(&horizon) {
            if model.a_at(t).iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFiniteCoefficient);
            }
        }
        Ok(model)
    }

    /// Linear model with constant generator.
    pub fn linear_constant(a: &DMatrix<f64>, horizon: Horizon) -> Result<Self> {
        Self::linear(PolyMatrix::constant(a)?, horizon)
    }

    pub fn nonlinear(field: NamedField, n: usize, horizon: Horizon) -> Result<Self> {
        let model = Self { n, horizon, kind: FieldKind::Nonlinear(field) };
        let zero = Point::zeros(n);
        for t in horizon_probe(&horizon) {
            let norm = model.field(&zero, t).norm();
            if norm.is_nan() || norm > 1e-12 {
                return Err(DynamicsError::NonzeroEquilibrium { t, norm });
            }
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, FieldKind::Linear(_))
    }

    /// `A(t)`; panics for nonlinear models.
    pub fn a_at(&self, t: f64) -> DMatrix<f64> {
        match &self.kind {
            FieldKind::Linear(a) => a.eval(t - self.horizon.t0),
            FieldKind::Nonlinear(_) => panic!("a_at called on a nonlinear model"),
        }
    }

    pub fn field(&self, x: &Point, t: f64) -> Point {
        match &self.kind {
            FieldKind::Linear(a) => a.eval(t - self.horizon.t0) * x,
            FieldKind::Nonlinear(f) => f.eval(x, t),
        }
    }
}

fn horizon_probe(h: &Horizon) -> impl Iterator<Item = f64> + '_ {
    (0..=10).map(move |k| h.t0 + h.length() * k as f64 / 10.0)
}

/// One classical RK4 step for `y' = f(t, y)`.
pub fn rk4_step<S, F>(f: &F, t: f64, y: &S, h: f64) -> S
where
    F: Fn(f64, &S) -> S,
    for<'a> &'a S: Add<&'a S, Output = S> + Mul<f64, Output = S>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &(&k1 * (0.5 * h))));
    let k3 = f(t + 0.5 * h, &(y + &(&k2 * (0.5 * h))));
    let k4 = f(t + h, &(y + &(&k3 * h)));
    let incr = &(&(&k1 + &(&k2 * 2.0)) + &(&(&k3 * 2.0) + &k4)) * (h / 6.0);
    y + &incr
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Point>,
    pub step: f64,
    pub method: &'static str,
}

impl Trajectory {
    pub fn final_state(&self) -> &Point {
        self.states.last().expect("trajectory has at least one node")
    }
}

/// Integrates `dx/dt = f(x, t)` from `x(t0) = x0` over the model horizon.
pub fn integrate_trajectory(model: &SystemModel, x0: &Point, step: f64) -> Result<Trajectory> {
    let times = model.horizon.uniform_grid(step)?;
    integrate_on(model, x0, &times, 1).map(|states| Trajectory { times, states, step, method: "rk4" })
}

/// Integrates over the given increasing node list with `substeps` RK4 steps
/// per interval; returns the state at every node.
pub fn integrate_on(model: &SystemModel, x0: &Point, times: &[f64], substeps: usize) -> Result<Vec<Point>> {
    if x0.len() != model.n {
        return Err(DynamicsError::DimensionMismatch { expected: model.n, got: x0.len() });
    }
    let f = |t: f64, x: &Point| model.field(x, t);
    let mut states = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    states.push(x.clone());
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for k in 0..substeps {
            x = rk4_step(&f, w[0] + k as f64 * h, &x, h);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState { t: w[1] });
        }
        states.push(x.clone());
    }
    Ok(states)
}

/// Fundamental matrices, their inverses and Gram matrices on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    times: Vec<f64>,
    x: Vec<DMatrix<f64>>,
    xinv: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
    h0: DMatrix<f64>,
    step: f64,
    time_tol: f64,
}

impl FlowTable {
    /// Integrates `X' = A X`, `Z' = -Z A` and `H' = A H + H A^T` on a uniform
    /// grid of the given step.
    pub fn propagate(model: &SystemModel, step: f64, h0: &DMatrix<f64>) -> Result<Self> {
        let times = model.horizon.uniform_grid(step)?;
        Self::propagate_on(model, times, 1, h0)
    }

    /// Same integration on `nodes` equally spaced grid nodes with `substeps`
    /// RK4 steps between consecutive nodes; only node values are stored.
    pub fn on_nodes(model: &SystemModel, nodes: usize, substeps: usize, h0: &DMatrix<f64>) -> Result<Self> {
        let times = model.horizon.node_grid(nodes);
        Self::propagate_on(model, times, substeps.max(1), h0)
    }

    fn propagate_on(model: &SystemModel, times: Vec<f64>, substeps: usize, h0: &DMatrix<f64>) -> Result<Self> {
        if !model.is_linear() {
            return Err(DynamicsError::NotLinear);
        }
        let n = model.n;
        if h0.nrows() != n || h0.ncols() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: h0.nrows() });
        }
        SpdMatrix::new(h0.clone()).map_err(|_| DynamicsError::NotPositiveDefinite)?;

        let id = DMatrix::<f64>::identity(n, n);
        let (mut x, mut z, mut h) = (id.clone(), id, h0.clone());
        let fx = |t: f64, m: &DMatrix<f64>| model.a_at(t) * m;
        let fz = |t: f64, m: &DMatrix<f64>| -(m * model.a_at(t));
        let fh = |t: f64, m: &DMatrix<f64>| {
            let a = model.a_at(t);
            &a * m + m * a.transpose()
        };

        let mut xs = vec![x.clone()];
        let mut zs = vec![z.clone()];
        let mut hs = vec![h.clone()];
        for w in times.windows(2) {
            let dt = (w[1] - w[0]) / substeps as f64;
            for k in 0..substeps {
                let t = w[0] + k as f64 * dt;
                x = rk4_step(&fx, t, &x, dt);
                z = rk4_step(&fz, t, &z, dt);
                h = rk4_step(&fh, t, &h, dt);
                h = (&h + h.transpose()) * 0.5;
            }
            if x.iter().chain(z.iter()).chain(h.iter()).any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { t: w[1] });
            }
            let condition = norm1(&x) * norm1(&z);
            if condition > MAX_CONDITION {
                return Err(DynamicsError::IllConditioned { t: w[1], condition });
            }
            xs.push(x.clone());
            zs.push(z.clone());
            hs.push(h.clone());
        }
        let step = (times[1] - times[0]) / substeps as f64;
        Ok(Self {
            times,
            x: xs,
            xinv: zs,
            h: hs,
            h0: h0.clone(),
            step,
            time_tol: model.horizon.time_tol(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// RK4 step used for the integration.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn h0(&self) -> &DMatrix<f64> {
        &self.h0
    }

    /// `X(t_i, t0)`.
    pub fn x(&self, i: usize) -> &DMatrix<f64> {
        &self.x[i]
    }

    /// `X(t0, t_i)`.
    pub fn xinv(&self, i: usize) -> &DMatrix<f64> {
        &self.xinv[i]
    }

    pub fn gram(&self, i: usize) -> &DMatrix<f64> {
        &self.h[i]
    }

    /// Locates `t` on the grid: `(i, w)` such that `t = (1-w) t_i + w t_{i+1}`;
    /// `w == 0` when `t` coincides with a node.
    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        let last = self.times.len() - 1;
        let t0 = self.times[0];
        let t1 = self.times[last];
        if t < t0 - self.time_tol || t > t1 + self.time_tol {
            return None;
        }
        let hi = self.times.partition_point(|&s| s <= t);
        let cand = [hi.saturating_sub(1), hi.min(last)];
        for &i in &cand {
            if (self.times[i] - t).abs() <= self.time_tol {
                return Some((i, 0.0));
            }
        }
        if hi == 0 {
            return Some((0, 0.0));
        }
        if hi > last {
            return Some((last, 0.0));
        }
        let i = hi - 1;
        Some((i, (t - self.times[i]) / (self.times[i + 1] - self.times[i])))
    }

    fn lerp(mats: &[DMatrix<f64>], i: usize, w: f64) -> DMatrix<f64> {
        if w == 0.0 {
            mats[i].clone()
        } else {
            &mats[i] * (1.0 - w) + &mats[i + 1] * w
        }
    }

    /// Entrywise linear interpolation of `(X, X^{-1}, H)` at `t`.
    pub fn interpolate(&self, t: f64) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (i, w) = self.locate(t)?;
        Some((Self::lerp(&self.x, i, w), Self::lerp(&self.xinv, i, w), Self::lerp(&self.h, i, w)))
    }

    pub fn xinv_at(&self, t: f64) -> Option<DMatrix<f64>> {
        let (i, w) = self.locate(t)?;
        Some(Self::lerp(&self.xinv, i, w))
    }

    pub fn x_at(&self, t: f64) -> Option<DMatrix<f64>> {
        let (i, w) = self.locate(t)?;
        Some(Self::lerp(&self.x, i, w))
    }

    /// Largest `|H(t_i) - X H0 X^T|` entry over all nodes.
    pub fn gram_consistency(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.h)
            .map(|(x, h)| (h - x * &self.h0 * x.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// Largest `|X X^{-1} - I|` entry over all nodes.
    pub fn inverse_consistency(&self) -> f64 {
        let n = self.h0.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        self.x.iter().zip(&self.xinv).map(|(x, z)| (x * z - &id).amax()).fold(0.0, f64::max)
    }
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// How the first integral `phi(t, t0, x)` is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Pullback {
    /// Linear models: `X(t0, t) x` from a flow table.
    Table(FlowTable),
    /// Backward RK4 integration with (at most) the given step.
    Integrate { step: f64 },
}

impl Pullback {
    /// The natural pullback for a model: a flow table with `H0 = I` for
    /// linear models, backward integration otherwise.
    pub fn for_model(model: &SystemModel, step: f64) -> Result<Self> {
        if model.is_linear() {
            let n = model.dim();
            FlowTable::propagate(model, step, &DMatrix::identity(n, n)).map(Pullback::Table)
        } else {
            model.horizon.uniform_grid(step)?;
            Ok(Pullback::Integrate { step })
        }
    }
}

/// `phi(t, t0, x)`: the initial state at `t0` of the solution through `x` at `t`.
pub fn inverse_flow(model: &SystemModel, pullback: &Pullback, x: &Point, t: f64) -> Result<Point> {
    model.horizon.check(t)?;
    if x.len() != model.n {
        return Err(DynamicsError::DimensionMismatch { expected: model.n, got: x.len() });
    }
    match pullback {
        Pullback::Table(table) => {
            if !model.is_linear() {
                return Err(DynamicsError::NotLinear);
            }
            let z = table.xinv_at(t).ok_or(DynamicsError::OutOfHorizon {
                t,
                t0: model.horizon.t0,
                t1: model.horizon.t1,
            })?;
            Ok(z * x)
        }
        Pullback::Integrate { step } => backward_integrate(model, x, t, *step),
    }
}

fn backward_integrate(model: &SystemModel, x: &Point, t: f64, step: f64) -> Result<Point> {
    let span = t - model.horizon.t0;
    if span <= model.horizon.time_tol() {
        return Ok(x.clone());
    }
    let m = ((span / step) - 1e-9).ceil().max(1.0) as usize;
    let h = -span / m as f64;
    let f = |s: f64, y: &Point| model.field(y, s);
    let mut y = x.clone();
    for k in 0..m {
        y = rk4_step(&f, t + k as f64 * h, &y, h);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFiniteState { t: model.horizon.t0 });
    }
    Ok(y)
}

/// Pullback when a flow table may be absent: linear models require one.
pub fn inverse_flow_opt(model: &SystemModel, flow: Option<&FlowTable>, x: &Point, t: f64, step: f64) -> Result<Point> {
    match (model.is_linear(), flow) {
        (true, None) => Err(DynamicsError::MissingFlow),
        (true, Some(table)) => {
            model.horizon.check(t)?;
            table
                .xinv_at(t)
                .map(|z| z * x)
                .ok_or(DynamicsError::OutOfHorizon { t, t0: model.horizon.t0, t1: model.horizon.t1 })
        }
        (false, _) => {
            model.horizon.check(t)?;
            backward_integrate(model, x, t, step)
        }
    }
}
