//! Reduction of `{G0, Phi_t}`-stability with a star-shaped `G0` to
//! `{K_1(0), Psi_t}`-stability of a normalized system.
//!
//! Initial states are divided by their Minkowski gauge, `y = x / k(G0, x0)`,
//! so every admissible `y0` lies in the closed unit ball and the boundary of
//! `G0` maps onto the unit sphere. The transformed field is
//! `g(y, t, y0) = f(k y, t) / k` with `k = k(G0, y0)`, and `g = 0` for `y0 = 0`.

use std::collections::HashMap;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{rk4_step, DynamicsError, SystemModel};
use crate::geometry::{GeometryError, Metric, Point, StarryCompact};
use crate::linstab::PhaseConstraints;

/// Interior shells sampled along with each boundary point.
pub const INTERIOR_SCALES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("set schedule must be non-empty with increasing times")]
    InvalidSchedule,
}

pub type Result<T> = std::result::Result<T, TransformError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub y0: Point,
    /// `None` for `x0 = 0`.
    pub k: Option<f64>,
}

/// `y0 = x0 / k(G0, x0)` (and `y0 = 0` for `x0 = 0`).
pub fn normalize_initial(g0: &StarryCompact, x0: &Point) -> Result<Normalized> {
    if x0.len() != g0.dim() {
        return Err(TransformError::DimensionMismatch { expected: g0.dim(), got: x0.len() });
    }
    if x0.iter().all(|&v| v == 0.0) {
        return Ok(Normalized { y0: x0.clone(), k: None });
    }
    let k = g0.minkowski_gauge(x0)?;
    Ok(Normalized { y0: x0 / k, k: Some(k) })
}

/// The normalized system `dy/dt = g(y, t, y0)`.
#[derive(Debug)]
pub struct TransformedSystem {
    base: SystemModel,
    g0: StarryCompact,
    gauge_cache: RwLock<HashMap<Vec<u64>, f64>>,
}

impl TransformedSystem {
    pub fn new(base: SystemModel, g0: StarryCompact) -> Result<Self> {
        if base.dim() != g0.dim() {
            return Err(TransformError::DimensionMismatch { expected: base.dim(), got: g0.dim() });
        }
        if !g0.origin_is_interior() {
            return Err(GeometryError::OriginNotInterior.into());
        }
        Ok(Self { base, g0, gauge_cache: RwLock::new(HashMap::new()) })
    }

    pub fn base(&self) -> &SystemModel {
        &self.base
    }

    pub fn g0(&self) -> &StarryCompact {
        &self.g0
    }

    /// `k(G0, y0)`, memoized on the exact bits of `y0`.
    pub fn gauge(&self, y0: &Point) -> Result<f64> {
        let key: Vec<u64> = y0.iter().map(|v| v.to_bits()).collect();
        if let Some(&k) = self.gauge_cache.read().expect("gauge cache poisoned").get(&key) {
            return Ok(k);
        }
        let k = self.g0.minkowski_gauge(y0)?;
        self.gauge_cache.write().expect("gauge cache poisoned").insert(key, k);
        Ok(k)
    }

    pub fn field(&self, y: &Point, t: f64, y0: &Point) -> Result<Point> {
        if is_zero(y0) {
            return Ok(Point::zeros(y.len()));
        }
        let k = self.gauge(y0)?;
        Ok(self.base.field(&(y * k), t) / k)
    }

    /// States of the normalized system on `times`, from `y(t0) = y0`.
    pub fn integrate_on(&self, y0: &Point, times: &[f64]) -> Result<Vec<Point>> {
        let mut states = Vec::with_capacity(times.len());
        let mut y = y0.clone();
        states.push(y.clone());
        if is_zero(y0) {
            states.resize(times.len(), y);
            return Ok(states);
        }
        let k = self.gauge(y0)?;
        let f = |t: f64, v: &Point| self.base.field(&(v * k), t) / k;
        for w in times.windows(2) {
            y = rk4_step(&f, w[0], &y, w[1] - w[0]);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { t: w[1] }.into());
            }
            states.push(y.clone());
        }
        Ok(states)
    }

    /// First integral of the normalized system: the `y(t0)` of the solution
    /// through `y` at `t`, by backward RK4 with at most the given step.
    pub fn pullback(&self, y: &Point, t: f64, y0: &Point, step: f64) -> Result<Point> {
        let horizon = self.base.horizon();
        horizon.check(t)?;
        let span = t - horizon.t0();
        if is_zero(y0) || span <= horizon.time_tol() {
            return Ok(y.clone());
        }
        let k = self.gauge(y0)?;
        let f = |s: f64, v: &Point| self.base.field(&(v * k), s) / k;
        let m = ((span / step) - 1e-9).ceil().max(1.0) as usize;
        let h = -span / m as f64;
        let mut v = y.clone();
        for i in 0..m {
            v = rk4_step(&f, t + i as f64 * h, &v, h);
        }
        Ok(v)
    }

    /// `min_{|z| = 1} |z - phi|`, i.e. `|1 - |phi||`, for the pulled-back
    /// normalized state.
    pub fn sphere_distance(&self, y: &Point, t: f64, y0: &Point, step: f64) -> Result<f64> {
        let phi = self.pullback(y, t, y0, step)?;
        Ok((1.0 - phi.norm()).abs())
    }
}

fn is_zero(v: &Point) -> bool {
    v.iter().all(|&c| c == 0.0)
}

/// Piecewise-constant family of admissible sets: `sets[i]` applies on
/// `[times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetSchedule {
    times: Vec<f64>,
    sets: Vec<StarryCompact>,
}

impl SetSchedule {
    pub fn new(times: Vec<f64>, sets: Vec<StarryCompact>) -> Result<Self> {
        if times.is_empty() || times.len() != sets.len() || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TransformError::InvalidSchedule);
        }
        let n = sets[0].dim();
        if let Some(s) = sets.iter().find(|s| s.dim() != n) {
            return Err(TransformError::DimensionMismatch { expected: n, got: s.dim() });
        }
        Ok(Self { times, sets })
    }

    pub fn constant(set: StarryCompact, t0: f64) -> Self {
        Self { times: vec![t0], sets: vec![set] }
    }

    /// Index of the set in force at `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn at(&self, t: f64) -> &StarryCompact {
        &self.sets[self.index_at(t)]
    }

    pub fn dim(&self) -> usize {
        self.sets[0].dim()
    }
}

/// Admissible region `Phi_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseRegion {
    Linear(PhaseConstraints),
    Sets(SetSchedule),
}

impl PhaseRegion {
    pub fn dim(&self) -> usize {
        match self {
            PhaseRegion::Linear(c) => c.dim(),
            PhaseRegion::Sets(s) => s.dim(),
        }
    }

    /// `None` if `x` is admissible at `t`; otherwise the one-based constraint
    /// (or schedule node) id and the excess.
    pub fn violation(&self, x: &Point, t: f64) -> Option<(usize, f64)> {
        match self {
            PhaseRegion::Linear(c) => {
                let (v, s) = c.max_abs(x, t);
                (v > 1.0).then(|| (s + 1, v - 1.0))
            }
            PhaseRegion::Sets(sched) => {
                let i = sched.index_at(t);
                let set = &sched.sets[i];
                (!set.contains(x)).then(|| (i + 1, set.boundary_distance(x, &Metric::Euclidean)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Index into the sampled initial states.
    pub sample: usize,
    pub x0: Vec<f64>,
    /// First grid time at which the trajectory leaves `Phi_t`.
    pub t: f64,
    /// One-based constraint id, or schedule node id for set families.
    pub constraint: usize,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub violations: Vec<Violation>,
    /// `max W(x0, t0, x0) = |x0| / k(G0, x0)`; `None` when the origin is not
    /// interior to `G0`.
    pub max_w: Option<f64>,
    pub samples_checked: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    pub step: f64,
    /// Appended after the sampled states.
    pub extra_initial: Vec<Point>,
}

const EVIDENCE_NOTE: &str = "sampled check: a violation disproves stability; \
                             no violation is evidence at the sampled resolution, not a proof";

/// Boundary samples of `g0`, each followed by its interior shells about the
/// set's reference point, then the caller's extra states.
pub fn verification_states(g0: &StarryCompact, opts: &VerifyOptions) -> Vec<Point> {
    let mut states = Vec::with_capacity(opts.samples * INTERIOR_SCALES.len() + opts.extra_initial.len());
    for b in g0.boundary_sample(opts.samples, opts.seed) {
        for &lambda in &INTERIOR_SCALES {
            states.push(g0.scale_about_reference(&b, lambda));
        }
    }
    states.extend(opts.extra_initial.iter().cloned());
    states
}

/// Sampled check that every trajectory from `G0` stays in `Phi_t` on the
/// grid.
pub fn verify_practical_stability(
    model: &SystemModel,
    g0: &StarryCompact,
    phi: &PhaseRegion,
    opts: &VerifyOptions,
) -> Result<StabilityReport> {
    check_dims(model, g0, phi)?;
    let times = model.horizon().uniform_grid(opts.step)?;
    let states = verification_states(g0, opts);

    let firsts: Vec<Option<(f64, usize, f64)>> = states
        .par_iter()
        .map(|x0| {
            let traj = crate::dynamics::integrate_on(model, x0, &times, 1)?;
            Ok(first_exit(&times, &traj, |x, _| x.clone(), phi))
        })
        .collect::<Result<_>>()?;

    let max_w = if g0.origin_is_interior() {
        let mut w = 0.0f64;
        for x0 in &states {
            if !is_zero(x0) {
                w = w.max(x0.norm() / g0.minkowski_gauge(x0)?);
            }
        }
        Some(w)
    } else {
        None
    };
    Ok(report(&states, firsts, max_w))
}

/// Same check carried out on the normalized system: `y0 = x0 / k` is
/// integrated under `g` and `(y, y0)` is tested against
/// `Psi_t = {(y, y0) : k(G0, y0) y in Phi_t}`.
pub fn verify_transformed(
    model: &SystemModel,
    g0: &StarryCompact,
    phi: &PhaseRegion,
    opts: &VerifyOptions,
) -> Result<StabilityReport> {
    check_dims(model, g0, phi)?;
    let ts = TransformedSystem::new(model.clone(), g0.clone())?;
    let times = model.horizon().uniform_grid(opts.step)?;
    let states = verification_states(g0, opts);

    let firsts: Vec<Option<(f64, usize, f64)>> = states
        .par_iter()
        .map(|x0| {
            let norm = normalize_initial(g0, x0)?;
            let k = norm.k.unwrap_or(0.0);
            let traj = ts.integrate_on(&norm.y0, &times)?;
            Ok(first_exit(&times, &traj, |y, _| y * k, phi))
        })
        .collect::<Result<_>>()?;
    let max_w = Some(
        states
            .iter()
            .map(|x0| normalize_initial(g0, x0).map(|n| n.y0.norm()))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0, f64::max),
    );
    Ok(report(&states, firsts, max_w))
}

fn check_dims(model: &SystemModel, g0: &StarryCompact, phi: &PhaseRegion) -> Result<()> {
    for got in [g0.dim(), phi.dim()] {
        if got != model.dim() {
            return Err(TransformError::DimensionMismatch { expected: model.dim(), got });
        }
    }
    Ok(())
}

fn first_exit<F: Fn(&Point, f64) -> Point>(
    times: &[f64],
    traj: &[Point],
    to_x: F,
    phi: &PhaseRegion,
) -> Option<(f64, usize, f64)> {
    times.iter().zip(traj).find_map(|(&t, y)| {
        let x = to_x(y, t);
        phi.violation(&x, t).map(|(id, excess)| (t, id, excess))
    })
}

fn report(states: &[Point], firsts: Vec<Option<(f64, usize, f64)>>, max_w: Option<f64>) -> StabilityReport {
    let violations: Vec<Violation> = firsts
        .into_iter()
        .enumerate()
        .filter_map(|(i, v)| {
            v.map(|(t, constraint, excess)| Violation {
                sample: i,
                x0: states[i].iter().cloned().collect(),
                t,
                constraint,
                excess,
            })
        })
        .collect();
    StabilityReport {
        stable: violations.is_empty(),
        violations,
        max_w,
        samples_checked: states.len(),
        note: EVIDENCE_NOTE.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_trajectory, Horizon, NamedField};
    use nalgebra::DMatrix;
    use std::collections::BTreeMap;
    use std::f64::consts::TAU;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn origin_ball(r: f64) -> StarryCompact {
        StarryCompact::ball(p(&[0.0, 0.0]), r).unwrap()
    }

    fn strip() -> PhaseRegion {
        PhaseRegion::Linear(PhaseConstraints::constant(&[&[1.0, 0.0]], 0.0).unwrap())
    }

    fn cascade(t1: f64) -> SystemModel {
        let f = NamedField::new("quadratic_cascade", &BTreeMap::new(), 2).unwrap();
        SystemModel::nonlinear(f, 2, Horizon::new(0.0, t1).unwrap()).unwrap()
    }

    fn opts(samples: usize) -> VerifyOptions {
        VerifyOptions { samples, seed: 1, step: 0.01, extra_initial: vec![] }
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_initial(&origin_ball(1.0), &p(&[0.5, 0.0])).unwrap();
        assert_eq!(n, Normalized { y0: p(&[0.5, 0.0]), k: Some(1.0) });
        let e = StarryCompact::ellipsoid(p(&[0.0, 0.0]), DMatrix::from_diagonal(&p(&[4.0, 1.0])), 1.0).unwrap();
        let n = normalize_initial(&e, &p(&[0.25, 0.0])).unwrap();
        assert!((n.k.unwrap() - 0.5).abs() < 1e-15);
        assert!((n.y0 - p(&[0.5, 0.0])).amax() < 1e-15);
        let n = normalize_initial(&e, &p(&[0.0, 0.0])).unwrap();
        assert_eq!(n, Normalized { y0: p(&[0.0, 0.0]), k: None });
    }

    #[test]
    fn field_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, 0.1]);
        let lin = SystemModel::linear_constant(&a, Horizon::new(0.0, 1.0).unwrap()).unwrap();
        let ts = TransformedSystem::new(lin, origin_ball(3.0)).unwrap();
        let y = p(&[0.4, -0.7]);
        let g = ts.field(&y, 0.2, &p(&[0.1, 0.9])).unwrap();
        assert!((g - &a * &y).amax() < 1e-15);
        assert_eq!(ts.field(&y, 0.2, &p(&[0.0, 0.0])).unwrap(), p(&[0.0, 0.0]));

        let ts = TransformedSystem::new(cascade(1.0), origin_ball(2.0)).unwrap();
        let y = p(&[0.3, -0.6]);
        let g = ts.field(&y, 0.0, &p(&[1.0, 0.0])).unwrap();
        assert!((g - p(&[-0.3 + 2.0 * 0.36, 0.6])).amax() < 1e-15);
    }

    #[test]
    fn rejects_set_without_interior_origin() {
        let g0 = StarryCompact::ball(p(&[2.0, 0.0]), 1.0).unwrap();
        assert!(matches!(
            TransformedSystem::new(cascade(1.0), g0),
            Err(TransformError::Geometry(GeometryError::OriginNotInterior))
        ));
    }

    #[test]
    fn static_examples() {
        let zero = SystemModel::linear_constant(&DMatrix::zeros(2, 2), Horizon::new(0.0, 1.0).unwrap()).unwrap();
        let r = verify_practical_stability(&zero, &origin_ball(1.0), &strip(), &opts(100)).unwrap();
        assert!(r.stable);
        assert!((r.max_w.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.samples_checked, 400);

        let r = verify_practical_stability(&zero, &origin_ball(1.2), &strip(), &opts(100)).unwrap();
        assert!(!r.stable);
        let worst = r.violations.iter().max_by(|a, b| a.excess.total_cmp(&b.excess)).unwrap();
        assert!((worst.x0[0].abs() - 1.2).abs() < 0.02, "{:?}", worst.x0);
        assert_eq!(worst.t, 0.0);
    }

    #[test]
    fn rotation_keeps_small_ball_inside_strip() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let m = SystemModel::linear_constant(&a, Horizon::new(0.0, TAU).unwrap()).unwrap();
        let o = VerifyOptions { samples: 200, seed: 4, step: TAU / 2000.0, extra_initial: vec![] };
        assert!(verify_practical_stability(&m, &origin_ball(0.99), &strip(), &o).unwrap().stable);
    }

    #[test]
    fn transformed_trajectories_reproduce_original() {
        let m = cascade(2.0);
        let g0 = origin_ball(2.0);
        let ts = TransformedSystem::new(m.clone(), g0.clone()).unwrap();
        for x0 in [p(&[0.3, -1.2]), p(&[-1.9, 0.1]), p(&[0.5, 0.5])] {
            let tr = integrate_trajectory(&m, &x0, 1e-3).unwrap();
            let n = normalize_initial(&g0, &x0).unwrap();
            let ys = ts.integrate_on(&n.y0, &tr.times).unwrap();
            let k = n.k.unwrap();
            for (x, y) in tr.states.iter().zip(&ys) {
                assert!((x - y * k).amax() < 1e-7);
            }
            // first integral of the normalized system
            let last = ys.last().unwrap();
            let back = ts.pullback(last, 2.0, &n.y0, 1e-3).unwrap();
            assert!((back.norm() - n.y0.norm()).abs() < 1e-7);
            let d = ts.sphere_distance(last, 2.0, &n.y0, 1e-3).unwrap();
            assert!((d - (1.0 - n.y0.norm()).abs()).abs() < 1e-7);
        }
    }

    #[test]
    fn both_formulations_agree() {
        let m = cascade(3.0);
        let phi = PhaseRegion::Linear(PhaseConstraints::constant(&[&[1.0, 0.0], &[0.3, 1.0]], 0.0).unwrap());
        let g0 = StarryCompact::ellipsoid(p(&[0.1, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]), 1.3)
            .unwrap();
        let o = opts(60);
        let a = verify_practical_stability(&m, &g0, &phi, &o).unwrap();
        let b = verify_transformed(&m, &g0, &phi, &o).unwrap();
        assert!(!a.stable, "test needs some violations to be meaningful");
        let ids = |r: &StabilityReport| r.violations.iter().map(|v| (v.sample, v.t)).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert!((a.max_w.unwrap() - b.max_w.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn set_schedule_region() {
        let sched = SetSchedule::new(vec![0.0, 0.5], vec![origin_ball(2.0), origin_ball(0.5)]).unwrap();
        let phi = PhaseRegion::Sets(sched);
        assert!(phi.violation(&p(&[1.0, 0.0]), 0.2).is_none());
        let (id, excess) = phi.violation(&p(&[1.0, 0.0]), 0.7).unwrap();
        assert_eq!(id, 2);
        assert!((excess - 0.5).abs() < 1e-15);
        assert_eq!(
            SetSchedule::new(vec![0.5, 0.5], vec![origin_ball(1.0), origin_ball(1.0)]),
            Err(TransformError::InvalidSchedule)
        );
    }
}
