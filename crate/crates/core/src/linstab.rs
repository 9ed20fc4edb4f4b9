//! Maximal admissible initial balls and ellipsoids for linear time-varying
//! systems under symmetric linear phase constraints `|l_s(t)^T x| <= 1`.
//!
//! For a ball `|x - z0| <= c` (or `|x - z0|_Q <= c`) the largest value of
//! `|l^T X(t,t0) x|` over the set is `|l^T X z0| + c sqrt(l^T H l)` with
//! `H = X H0 X^T`, `H0 = I` (or `Q^{-1}`). Hence the admissible radius is the
//! minimum over `t` and `s` of `(1 - |l^T X z0|) / sqrt(l^T H l)`.
//!
//! Ellipsoid certificates use the `Q`-norm radius convention: the initial
//! set is `{x : (x - z0)^T Q (x - z0) <= c^2}`, so the reported level is
//! `c_star^2`. With `Q = I` this coincides with the ball certificate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, FlowTable, PolyVector, SystemModel};
use crate::geometry::{golden_section, GeometryError, Point, SpdMatrix, StarryCompact};

pub const DEFAULT_GRID_SIZE: usize = 2001;

/// `l^T H l` at or below this is treated as a vanishing constraint.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-14;

/// Nominal margin below this counts as a violation.
pub const NOMINAL_TOL: f64 = 1e-12;

const REFINE_ITERATIONS: usize = 3;
const BISECTION_STEPS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinstabError {
    #[error("nominal trajectory violates constraint s = {s} at t = {t} (|l^T X z0| = {value})")]
    NominalViolation { t: f64, s: usize, value: f64 },
    #[error("every constraint vanishes on the grid (l^T H l <= {DEGENERATE_DENOMINATOR:e}); c* is unbounded")]
    DegenerateConstraint,
    #[error("constraint s = {s} is identically zero")]
    ZeroConstraint { s: usize },
    #[error("no constraints given")]
    NoConstraints,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Q is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("grid needs at least two nodes, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, LinstabError>;

/// `Gamma_t = {x : |l_s(t)^T x| <= 1, s = 1..N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConstraints {
    t0: f64,
    l: Vec<PolyVector>,
}

impl PhaseConstraints {
    /// `l` entries are polynomials in `t - t0`.
    pub fn new(l: Vec<PolyVector>, t0: f64) -> Result<Self> {
        let first = l.first().ok_or(LinstabError::NoConstraints)?;
        let n = first.dim();
        for (s, ls) in l.iter().enumerate() {
            if ls.dim() != n {
                return Err(LinstabError::DimensionMismatch { expected: n, got: ls.dim() });
            }
            if ls.is_zero() {
                return Err(LinstabError::ZeroConstraint { s: s + 1 });
            }
        }
        Ok(Self { t0, l })
    }

    pub fn constant(rows: &[&[f64]], t0: f64) -> Result<Self> {
        Self::new(rows.iter().map(|r| PolyVector::constant(r)).collect(), t0)
    }

    pub fn count(&self) -> usize {
        self.l.len()
    }

    pub fn dim(&self) -> usize {
        self.l[0].dim()
    }

    /// `l_s(t)` for zero-based `s`.
    pub fn at(&self, s: usize, t: f64) -> Point {
        self.l[s].eval(t - self.t0)
    }

    pub fn all_at(&self, t: f64) -> Vec<Point> {
        (0..self.count()).map(|s| self.at(s, t)).collect()
    }

    /// Same constraints with `l_s` replaced by `-l_s` where `flip[s]`.
    pub fn with_signs(&self, flip: &[bool]) -> Self {
        let l = self
            .l
            .iter()
            .zip(flip.iter().chain(std::iter::repeat(&false)))
            .map(|(ls, &f)| {
                if f {
                    PolyVector::new(
                        (0..ls.dim())
                            .map(|i| ls.entry(i).negated())
                            .collect(),
                    )
                } else {
                    ls.clone()
                }
            })
            .collect();
        Self { t0: self.t0, l }
    }

    /// Constraints reordered by `perm` (zero-based indices).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { t0: self.t0, l: perm.iter().map(|&i| self.l[i].clone()).collect() }
    }

    /// `max_s |l_s(t)^T x|` and its zero-based argmax.
    pub fn max_abs(&self, x: &Point, t: f64) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for s in 0..self.count() {
            let v = self.at(s, t).dot(x).abs();
            if v > best.0 {
                best = (v, s);
            }
        }
        best
    }
}

/// Initial-set family the certificate describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSetShape {
    /// `{x : |x - z0| <= c}`.
    Ball,
    /// `{x : (x - z0)^T Q (x - z0) <= c^2}`.
    Ellipsoid { q: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub c_lower: f64,
    pub c_upper: f64,
    pub samples: usize,
    pub violated_at_c_star: bool,
    pub bracket_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub initial_set: InitialSetShape,
    pub z0: Vec<f64>,
    /// Radius (ball) or `Q`-norm radius (ellipsoid).
    pub c_star: f64,
    /// Ellipsoid level `c_star^2`; for balls the squared radius.
    pub level: f64,
    pub t_star: f64,
    /// One-based constraint index.
    pub s_star: usize,
    pub witness_x0: Vec<f64>,
    pub nominal_margin: f64,
    pub grid_size: usize,
    /// `|c*(grid) - c*(every other node)|` before refinement.
    pub grid_delta: f64,
    pub step: f64,
    /// Semi-axis lengths of the reported set, largest first.
    pub semi_axes: Vec<f64>,
    pub warnings: Vec<String>,
    pub oracle_verdict: Option<OracleVerdict>,
}

impl StabilityCertificate {
    pub fn witness(&self) -> Point {
        Point::from_vec(self.witness_x0.clone())
    }

    pub fn center(&self) -> Point {
        Point::from_vec(self.z0.clone())
    }

    /// Offset of the witness from the center per unit of radius.
    pub fn witness_direction(&self) -> Point {
        (self.witness() - self.center()) / self.c_star
    }

    /// The certified initial set scaled to radius `c`.
    pub fn set_with_radius(&self, c: f64) -> std::result::Result<StarryCompact, GeometryError> {
        match &self.initial_set {
            InitialSetShape::Ball => StarryCompact::ball(self.center(), c),
            InitialSetShape::Ellipsoid { q } => {
                StarryCompact::ellipsoid(self.center(), rows_to_matrix(q), c * c)
            }
        }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinstabOptions {
    pub grid_size: usize,
    /// Upper bound on the RK4 step; defaults to the grid spacing.
    pub step: Option<f64>,
}

impl Default for LinstabOptions {
    fn default() -> Self {
        Self { grid_size: DEFAULT_GRID_SIZE, step: None }
    }
}

/// One evaluated cell of the ratio surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCell {
    pub t: f64,
    /// One-based.
    pub s: usize,
    /// `+inf` where the constraint vanishes.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusAnalysis {
    pub certificate: StabilityCertificate,
    pub surface: Vec<RatioCell>,
    pub flow: FlowTable,
}

pub fn max_ball_radius(
    model: &SystemModel,
    constraints: &PhaseConstraints,
    z0: &Point,
    opts: LinstabOptions,
) -> Result<RadiusAnalysis> {
    let n = model.dim();
    analyze(model, constraints, z0, &DMatrix::identity(n, n), InitialSetShape::Ball, opts)
}

pub fn max_ellipsoid_radius(
    model: &SystemModel,
    constraints: &PhaseConstraints,
    z0: &Point,
    q: &DMatrix<f64>,
    opts: LinstabOptions,
) -> Result<RadiusAnalysis> {
    if q.nrows() != model.dim() || q.ncols() != model.dim() {
        return Err(LinstabError::DimensionMismatch { expected: model.dim(), got: q.nrows() });
    }
    SpdMatrix::new(q.clone()).map_err(|_| LinstabError::NotPositiveDefinite)?;
    let h0 = q.clone().cholesky().ok_or(LinstabError::NotPositiveDefinite)?.inverse();
    let h0 = (&h0 + h0.transpose()) * 0.5;
    analyze(model, constraints, z0, &h0, InitialSetShape::Ellipsoid { q: matrix_to_rows(q) }, opts)
}

fn ratio_at(l: &Point, x: &DMatrix<f64>, h: &DMatrix<f64>, z0: &Point) -> (f64, f64, f64) {
    let nominal = l.dot(&(x * z0));
    let denom = l.dot(&(h * l));
    let ratio = if denom <= DEGENERATE_DENOMINATOR {
        f64::INFINITY
    } else {
        (1.0 - nominal.abs()) / denom.sqrt()
    };
    (ratio, nominal, denom)
}

fn analyze(
    model: &SystemModel,
    constraints: &PhaseConstraints,
    z0: &Point,
    h0: &DMatrix<f64>,
    shape: InitialSetShape,
    opts: LinstabOptions,
) -> Result<RadiusAnalysis> {
    let n = model.dim();
    if constraints.dim() != n {
        return Err(LinstabError::DimensionMismatch { expected: n, got: constraints.dim() });
    }
    if z0.len() != n {
        return Err(LinstabError::DimensionMismatch { expected: n, got: z0.len() });
    }
    if opts.grid_size < 2 {
        return Err(LinstabError::GridTooSmall(opts.grid_size));
    }
    if !model.is_linear() {
        return Err(DynamicsError::NotLinear.into());
    }
    let horizon = model.horizon();
    let spacing = horizon.length() / (opts.grid_size - 1) as f64;
    let substeps = match opts.step {
        Some(h) if h > 0.0 && h.is_finite() => ((spacing / h) - 1e-9).ceil().max(1.0) as usize,
        Some(h) => return Err(DynamicsError::InvalidStep(h).into()),
        None => 1,
    };
    let flow = FlowTable::on_nodes(model, opts.grid_size, substeps, h0)?;

    let count = constraints.count();
    let mut surface = Vec::with_capacity(flow.len() * count);
    let mut warnings = Vec::new();
    let mut nominal_margin = f64::INFINITY;
    for (i, &t) in flow.times().iter().enumerate() {
        for s in 0..count {
            let l = constraints.at(s, t);
            let (ratio, nominal, denom) = ratio_at(&l, flow.x(i), flow.gram(i), z0);
            let margin = 1.0 - nominal.abs();
            nominal_margin = nominal_margin.min(margin);
            if margin <= NOMINAL_TOL {
                return Err(LinstabError::NominalViolation { t, s: s + 1, value: nominal.abs() });
            }
            if denom <= DEGENERATE_DENOMINATOR {
                warnings.push(format!("constraint s = {} vanishes at t = {t}; node skipped", s + 1));
            }
            surface.push(RatioCell { t, s: s + 1, ratio });
        }
    }

    // Row-major (t, then s) scan with strict comparison keeps the smallest
    // (t, s) among ties.
    let argmin = |cells: &mut dyn Iterator<Item = (usize, &RatioCell)>| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in cells {
            if c.ratio.is_finite() && best.is_none_or(|(_, r)| c.ratio < r) {
                best = Some((k, c.ratio));
            }
        }
        best
    };
    let (best_k, grid_min) =
        argmin(&mut surface.iter().enumerate()).ok_or(LinstabError::DegenerateConstraint)?;
    let last = flow.len() - 1;
    let coarse_min = argmin(&mut surface.iter().enumerate().filter(|(k, _)| {
        let i = k / count;
        i.is_multiple_of(2) || i == last
    }))
    .map(|(_, r)| r)
    .unwrap_or(grid_min);
    let grid_delta = (coarse_min - grid_min).abs();

    let node = best_k / count;
    let s_star = best_k % count;
    let mut t_star = flow.times()[node];
    let mut c_star = grid_min;

    // Local golden-section refinement between neighbouring nodes.
    let times = flow.times();
    let (a, b) = (times[node.saturating_sub(1)], times[(node + 1).min(last)]);
    let eval = |t: f64| {
        let (x, _, h) = flow.interpolate(t).expect("refinement stays on the grid");
        ratio_at(&constraints.at(s_star, t), &x, &h, z0).0
    };
    let (t_ref, r_ref) = golden_section_iters(&eval, a, b, REFINE_ITERATIONS);
    if r_ref < c_star {
        c_star = r_ref;
        t_star = t_ref;
    }

    let (x_star, _, _) = flow.interpolate(t_star).expect("t_star on grid");
    let l_star = constraints.at(s_star, t_star);
    let xt_l = x_star.transpose() * &l_star;
    let dir = h0 * &xt_l;
    let scale = xt_l.dot(&dir).sqrt();
    let nominal = l_star.dot(&(&x_star * z0));
    let sign = if nominal < 0.0 { -1.0 } else { 1.0 };
    let witness = z0 + dir * (sign * c_star / scale);

    let semi_axes = {
        // semi-axes of {u^T Q u <= c^2} are c / sqrt(eig(Q)) = c sqrt(eig(H0))
        let mut ev: Vec<f64> = h0.clone().symmetric_eigen().eigenvalues.iter().map(|e| c_star * e.sqrt()).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    };

    let certificate = StabilityCertificate {
        initial_set: shape,
        z0: z0.iter().cloned().collect(),
        c_star,
        level: c_star * c_star,
        t_star,
        s_star: s_star + 1,
        witness_x0: witness.iter().cloned().collect(),
        nominal_margin,
        grid_size: opts.grid_size,
        grid_delta,
        step: flow.step(),
        semi_axes,
        warnings,
        oracle_verdict: None,
    };
    Ok(RadiusAnalysis { certificate, surface, flow })
}

/// Fixed number of golden-section iterations on `[a, b]`; returns the best
/// interior probe.
fn golden_section_iters<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, iterations: usize) -> (f64, f64) {
    if b <= a {
        return (a, f(a));
    }
    let width = (b - a) * ((5f64.sqrt() - 1.0) / 2.0).powi(iterations as i32);
    golden_section(f, a, b, width * (1.0 + 1e-12))
}

/// Options for the simulation oracle.
pub struct OracleOptions<'a> {
    pub samples: usize,
    pub seed: u64,
    pub step: f64,
    /// Extra initial states for radius `c` (e.g. the analytic witness).
    pub augment: Option<&'a (dyn Fn(f64) -> Vec<Point> + Sync)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub violated: bool,
    /// `max |l_s(t)^T x(t)|` over samples, nodes and constraints at `c_probe`.
    pub worst_ratio: f64,
    pub bracket: [f64; 2],
    /// `false` when the initial bracket `[c/2, 2c]` did not straddle the
    /// empirical critical radius.
    pub bracket_valid: bool,
    pub samples: usize,
}

/// Simulation-only check of `{G0, Gamma_t}`-stability for the family
/// `c -> family(c)`: integrates boundary samples and reports the largest
/// constraint value, then bisects on `c` for the empirical critical radius.
pub fn falsification_oracle(
    model: &SystemModel,
    constraints: &PhaseConstraints,
    family: &(dyn Fn(f64) -> std::result::Result<StarryCompact, GeometryError> + Sync),
    c_probe: f64,
    opts: &OracleOptions<'_>,
) -> Result<OracleReport> {
    let times = model.horizon().uniform_grid(opts.step)?;
    let lvals: Vec<Vec<Point>> = times.iter().map(|&t| constraints.all_at(t)).collect();

    let initial_states = |c: f64| -> Result<Vec<Point>> {
        let set = family(c)?;
        let mut pts = set.boundary_sample(opts.samples, opts.seed);
        if let Some(aug) = opts.augment {
            pts.extend(aug(c));
        }
        Ok(pts)
    };
    let worst = |c: f64, stop_above: Option<f64>| -> Result<f64> {
        let pts = initial_states(c)?;
        let values: Vec<f64> = pts
            .par_iter()
            .map(|x0| max_constraint_value(model, x0, &times, &lvals, stop_above))
            .collect::<std::result::Result<_, _>>()?;
        Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
    };
    let violated = |c: f64| -> Result<bool> { Ok(worst(c, Some(1.0))? > 1.0) };

    let worst_ratio = worst(c_probe, None)?;
    let (mut lo, mut hi) = (0.5 * c_probe, 2.0 * c_probe);
    let bracket_valid = !violated(lo)? && violated(hi)?;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if violated(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(OracleReport {
        violated: worst_ratio > 1.0,
        worst_ratio,
        bracket: [lo, hi],
        bracket_valid,
        samples: opts.samples,
    })
}

/// Integrates from `x0` and returns `max_{i,s} |l_s(t_i)^T x(t_i)|`,
/// stopping early once the value exceeds `stop_above`.
fn max_constraint_value(
    model: &SystemModel,
    x0: &Point,
    times: &[f64],
    lvals: &[Vec<Point>],
    stop_above: Option<f64>,
) -> std::result::Result<f64, DynamicsError> {
    let f = |t: f64, x: &Point| model.field(x, t);
    let mut x = x0.clone();
    let mut worst = f64::NEG_INFINITY;
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            x = crate::dynamics::rk4_step(&f, times[i - 1], &x, t - times[i - 1]);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { t });
            }
        }
        for l in &lvals[i] {
            worst = worst.max(l.dot(&x).abs());
        }
        if stop_above.is_some_and(|lim| worst > lim) {
            break;
        }
    }
    Ok(worst)
}

/// Runs the oracle around a certificate (probe at `c_star`, augmented with
/// the witness direction) and records the verdict on it.
pub fn attach_oracle(
    model: &SystemModel,
    constraints: &PhaseConstraints,
    cert: &mut StabilityCertificate,
    samples: usize,
    seed: u64,
    step: f64,
) -> Result<OracleReport> {
    let template = cert.clone();
    let family = move |c: f64| template.set_with_radius(c);
    let center = cert.center();
    let dir = cert.witness_direction();
    let augment = move |c: f64| vec![&center + &dir * c];
    let opts = OracleOptions { samples, seed, step, augment: Some(&augment) };
    let report = falsification_oracle(model, constraints, &family, cert.c_star, &opts)?;
    cert.oracle_verdict = Some(OracleVerdict {
        c_lower: report.bracket[0],
        c_upper: report.bracket[1],
        samples,
        violated_at_c_star: report.violated,
        bracket_valid: report.bracket_valid,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Horizon, Polynomial};
    use std::f64::consts::TAU;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn constant_model(a: &[f64], n: usize, t1: f64) -> SystemModel {
        SystemModel::linear_constant(&DMatrix::from_row_slice(n, n, a), Horizon::new(0.0, t1).unwrap()).unwrap()
    }

    fn e1() -> PhaseConstraints {
        PhaseConstraints::constant(&[&[1.0, 0.0]], 0.0).unwrap()
    }

    #[test]
    fn static_unit_strip() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let r = max_ball_radius(&m, &e1(), &p(&[0.0, 0.0]), LinstabOptions { grid_size: 11, step: None }).unwrap();
        let c = &r.certificate;
        assert_eq!(c.c_star, 1.0);
        assert_eq!(c.t_star, 0.0);
        assert_eq!(c.s_star, 1);
        assert_eq!(c.witness_x0, vec![1.0, 0.0]);
        assert_eq!(c.grid_delta, 0.0);
    }

    #[test]
    fn shifted_center() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let r = max_ball_radius(&m, &e1(), &p(&[0.5, 0.0]), LinstabOptions { grid_size: 11, step: None }).unwrap();
        assert_eq!(r.certificate.c_star, 0.5);
        assert_eq!(r.certificate.witness_x0, vec![1.0, 0.0]);
        assert_eq!(r.certificate.nominal_margin, 0.5);
    }

    #[test]
    fn negative_nominal_flips_witness() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let r = max_ball_radius(&m, &e1(), &p(&[-0.5, 0.0]), LinstabOptions { grid_size: 11, step: None }).unwrap();
        assert_eq!(r.certificate.witness_x0, vec![-1.0, 0.0]);
    }

    #[test]
    fn rotation_full_turn() {
        let m = constant_model(&[0.0, 1.0, -1.0, 0.0], 2, TAU);
        let r = max_ball_radius(&m, &e1(), &p(&[0.0, 0.0]), LinstabOptions::default()).unwrap();
        assert!((r.certificate.c_star - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_growth() {
        let m = constant_model(&[0.5], 1, 1.0);
        let l = PhaseConstraints::constant(&[&[1.0]], 0.0).unwrap();
        let r = max_ball_radius(&m, &l, &p(&[0.0]), LinstabOptions { grid_size: 2000, step: None }).unwrap();
        assert!((r.certificate.c_star - (-0.5f64).exp()).abs() < 1e-6);
        assert_eq!(r.certificate.t_star, 1.0);
    }

    #[test]
    fn ellipsoid_support_function() {
        // max of x1 over {x^T diag(4,1) x <= c^2} is c/2, so c* = 2 (level 4).
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let q = DMatrix::from_diagonal(&p(&[4.0, 1.0]));
        let r = max_ellipsoid_radius(&m, &e1(), &p(&[0.0, 0.0]), &q, LinstabOptions { grid_size: 11, step: None })
            .unwrap();
        let c = &r.certificate;
        assert!((c.c_star - 2.0).abs() < 1e-14);
        assert!((c.level - 4.0).abs() < 1e-13);
        assert!((c.witness() - p(&[1.0, 0.0])).amax() < 1e-14);
        assert!((c.semi_axes[0] - 2.0).abs() < 1e-14 && (c.semi_axes[1] - 1.0).abs() < 1e-14);
        let set = c.set_with_radius(c.c_star).unwrap();
        assert!(set.boundary_distance(&c.witness(), &crate::geometry::Metric::Euclidean) < 1e-12);
    }

    #[test]
    fn ellipsoid_identity_matches_ball_by_symmetry() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let l = PhaseConstraints::constant(&[&[0.0, 1.0]], 0.0).unwrap();
        let opts = LinstabOptions { grid_size: 11, step: None };
        let ball = max_ball_radius(&m, &e1(), &p(&[0.0, 0.0]), opts).unwrap();
        let ell = max_ellipsoid_radius(&m, &l, &p(&[0.0, 0.0]), &DMatrix::identity(2, 2), opts).unwrap();
        assert_eq!(ball.certificate.c_star, ell.certificate.c_star);
    }

    #[test]
    fn nominal_violation() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let err = max_ball_radius(&m, &e1(), &p(&[2.0, 0.0]), LinstabOptions { grid_size: 11, step: None });
        assert!(matches!(err, Err(LinstabError::NominalViolation { s: 1, t, .. }) if t == 0.0));
    }

    #[test]
    fn zero_constraint_rejected_and_isolated_zero_skipped() {
        assert_eq!(
            PhaseConstraints::constant(&[&[1.0, 0.0], &[0.0, 0.0]], 0.0),
            Err(LinstabError::ZeroConstraint { s: 2 })
        );
        // l(t) = (t - 0.5, 0): vanishes at t = 0.5 only.
        let l = PhaseConstraints::new(
            vec![PolyVector::new(vec![Polynomial::new(vec![-0.5, 1.0]).unwrap(), Polynomial::constant(0.0)])],
            0.0,
        )
        .unwrap();
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let r = max_ball_radius(&m, &l, &p(&[0.0, 0.0]), LinstabOptions { grid_size: 11, step: None }).unwrap();
        assert_eq!(r.certificate.warnings.len(), 1);
        assert!((r.certificate.c_star - 2.0).abs() < 1e-12);
        assert!(r.surface.iter().any(|c| c.ratio.is_infinite()));
    }

    #[test]
    fn rejects_nonlinear_and_bad_q() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            max_ellipsoid_radius(&m, &e1(), &p(&[0.0, 0.0]), &q, LinstabOptions::default()),
            Err(LinstabError::NotPositiveDefinite)
        );
        assert_eq!(
            max_ball_radius(&m, &e1(), &p(&[0.0, 0.0]), LinstabOptions { grid_size: 1, step: None }),
            Err(LinstabError::GridTooSmall(1))
        );
    }

    #[test]
    fn oracle_on_static_strip() {
        let m = constant_model(&[0.0; 4], 2, 1.0);
        let family = |c: f64| StarryCompact::ball(p(&[0.0, 0.0]), c);
        let opts = OracleOptions { samples: 200, seed: 0, step: 0.05, augment: None };
        let inside = falsification_oracle(&m, &e1(), &family, 0.99, &opts).unwrap();
        assert!(!inside.violated);
        assert!(inside.worst_ratio <= 0.99 + 1e-12);
        let outside = falsification_oracle(&m, &e1(), &family, 1.01, &opts).unwrap();
        assert!(outside.violated);
        assert!(outside.bracket[0] <= 1.0 && 1.0 <= outside.bracket[1]);
        assert!(outside.bracket_valid);
        assert_eq!(inside, falsification_oracle(&m, &e1(), &family, 0.99, &opts).unwrap());
    }

    #[test]
    fn oracle_on_rotation() {
        let m = constant_model(&[0.0, 1.0, -1.0, 0.0], 2, TAU);
        let family = |c: f64| StarryCompact::ball(p(&[0.0, 0.0]), c);
        let opts = OracleOptions { samples: 500, seed: 3, step: TAU / 2000.0, augment: None };
        assert!(!falsification_oracle(&m, &e1(), &family, 0.98, &opts).unwrap().violated);
        assert!(falsification_oracle(&m, &e1(), &family, 1.02, &opts).unwrap().violated);
    }

    #[test]
    fn sign_and_order_invariance() {
        let m = constant_model(&[0.0, 1.0, -1.0, -0.2], 2, 10.0);
        let l = PhaseConstraints::constant(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, -0.8]], 0.0).unwrap();
        let z0 = p(&[0.1, -0.05]);
        let opts = LinstabOptions { grid_size: 501, step: None };
        let base = max_ball_radius(&m, &l, &z0, opts).unwrap().certificate.c_star;
        let flipped = max_ball_radius(&m, &l.with_signs(&[true, false, true]), &z0, opts).unwrap();
        assert_eq!(flipped.certificate.c_star, base);
        let perm = max_ball_radius(&m, &l.permuted(&[2, 0, 1]), &z0, opts).unwrap();
        assert_eq!(perm.certificate.c_star, base);
    }
}
