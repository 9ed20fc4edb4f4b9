//! Star-shaped compact sets, metrics, and the quantities built on them:
//! membership, distance to the boundary, the boundary indicator `alpha`,
//! and the Minkowski gauge along rays from the origin.
//!
//! Balls and ellipsoids are handled in closed form (or by a one-dimensional
//! monotone root solve for point-to-ellipsoid distance). Arbitrary
//! star-shaped sets are stored as a table of boundary radii per direction
//! and interpolated between directions.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub type Point = DVector<f64>;

/// Relative width of the band treated as "on the boundary".
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Angular tolerance for the golden-section refinement on gauge tables.
const ANGLE_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("the gauge is undefined at the origin")]
    ZeroDirection,
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("scale parameter must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the origin is not an interior point of the set")]
    OriginNotInterior,
    #[error("invalid gauge table: {0}")]
    InvalidGaugeTable(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Symmetric positive-definite matrix with its eigendecomposition cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(GeometryError::NotPositiveDefinite);
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotPositiveDefinite);
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(GeometryError::NotPositiveDefinite);
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(GeometryError::NotPositiveDefinite);
        }
        Ok(Self {
            matrix: sym,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is positive definite")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.max()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|l| 1.0 / l));
        let v = &self.eigenvectors;
        let m = v * DMatrix::from_diagonal(&inv) * v.transpose();
        (&m + m.transpose()) * 0.5
    }

    /// `x^T M x`.
    pub fn quad(&self, x: &Point) -> f64 {
        x.dot(&(&self.matrix * x))
    }

    /// Symmetric square root `M^{1/2}`.
    fn sqrt(&self) -> DMatrix<f64> {
        let s = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|l| l.sqrt()));
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&s) * v.transpose()
    }

    fn inv_sqrt(&self) -> DMatrix<f64> {
        let s = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&s) * v.transpose()
    }
}

/// Distance used for boundary distances and the indicator `alpha`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// `rho(a, b) = sqrt((a - b)^T Q (a - b))`.
    QWeighted(SpdMatrix),
}

impl Metric {
    pub fn q_weighted(q: DMatrix<f64>) -> Result<Self> {
        SpdMatrix::new(q).map(Metric::QWeighted)
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        let d = a - b;
        match self {
            Metric::Euclidean => d.norm(),
            Metric::QWeighted(q) => q.quad(&d).max(0.0).sqrt(),
        }
    }

    /// Constants `(m, M)` with `m |a-b| <= rho(a,b) <= M |a-b|`.
    pub fn equivalence_bounds(&self) -> (f64, f64) {
        match self {
            Metric::Euclidean => (1.0, 1.0),
            Metric::QWeighted(q) => (q.min_eigenvalue().sqrt(), q.max_eigenvalue().sqrt()),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Metric::QWeighted(q) if q.dim() != n => Err(GeometryError::DimensionMismatch {
                expected: n,
                got: q.dim(),
            }),
            _ => Ok(()),
        }
    }
}

/// Closed ball `{x : |x - center| <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    center: Point,
    radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::NonPositiveScale(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Ellipsoid `{x : (x - center)^T Q (x - center) <= level}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Point,
    shape: SpdMatrix,
    level: f64,
}

impl Ellipsoid {
    pub fn new(center: Point, q: DMatrix<f64>, level: f64) -> Result<Self> {
        let shape = SpdMatrix::new(q)?;
        Self::with_shape(center, shape, level)
    }

    pub fn with_shape(center: Point, shape: SpdMatrix, level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0) {
            return Err(GeometryError::NonPositiveScale(level));
        }
        if shape.dim() != center.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: center.len(),
                got: shape.dim(),
            });
        }
        Ok(Self { center, shape, level })
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn shape(&self) -> &SpdMatrix {
        &self.shape
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// `sqrt(level)`: the radius of the set measured in the `Q`-norm.
    pub fn q_radius(&self) -> f64 {
        self.level.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Interpolation {
    /// Two rays, `+e1` and `-e1`.
    Line { plus: f64, minus: f64 },
    /// Sorted polar angles in `[0, 2pi)`, radii in the same order.
    Polar { angles: Vec<f64>, radii: Vec<f64> },
    /// Triangulated unit sphere (convex hull of the directions).
    Spherical { triangles: Vec<[usize; 3]> },
}

/// Star-shaped set about the origin given by boundary radii along a finite
/// set of directions. Between directions the radius is interpolated: linearly
/// in the polar angle in 2-D, barycentrically over a triangulation of the
/// sphere in 3-D.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeTable {
    dim: usize,
    directions: Vec<Point>,
    radii: Vec<f64>,
    interp: Interpolation,
}

impl GaugeTable {
    pub fn new(directions: Vec<Point>, radii: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| GeometryError::InvalidGaugeTable(m.to_string());
        if directions.is_empty() {
            return Err(bad("no directions"));
        }
        if directions.len() != radii.len() {
            return Err(bad("directions and radii differ in length"));
        }
        let dim = directions[0].len();
        if dim == 0 {
            return Err(bad("zero-dimensional directions"));
        }
        let mut units = Vec::with_capacity(directions.len());
        for d in &directions {
            if d.len() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: d.len() });
            }
            let norm = d.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(bad("directions must be finite and nonzero"));
            }
            units.push(d / norm);
        }
        if let Some(r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(GeometryError::NonPositiveScale(*r));
        }

        let interp = match dim {
            1 => {
                let plus = units.iter().zip(&radii).find(|(u, _)| u[0] > 0.0);
                let minus = units.iter().zip(&radii).find(|(u, _)| u[0] < 0.0);
                match (plus, minus) {
                    (Some((_, &p)), Some((_, &m))) if units.len() == 2 => {
                        Interpolation::Line { plus: p, minus: m }
                    }
                    _ => return Err(bad("a 1-D table needs exactly one positive and one negative direction")),
                }
            }
            2 => polar_interpolation(&units, &radii)?,
            3 => Interpolation::Spherical { triangles: sphere_triangulation(&units)? },
            _ => return Err(bad("only dimensions 1 to 3 are supported")),
        };
        Ok(Self { dim, directions: units, radii, interp })
    }

    /// Tabulates the boundary of `set` along `count` directions: evenly spaced
    /// angles in 2-D, a Fibonacci lattice in 3-D.
    pub fn from_set(set: &StarryCompact, count: usize) -> Result<Self> {
        let dirs: Vec<Point> = match set.dim() {
            1 => vec![Point::from_element(1, 1.0), Point::from_element(1, -1.0)],
            2 => (0..count)
                .map(|i| {
                    let th = std::f64::consts::TAU * i as f64 / count as f64;
                    Point::from_vec(vec![th.cos(), th.sin()])
                })
                .collect(),
            3 => fibonacci_sphere(count),
            n => {
                return Err(GeometryError::InvalidGaugeTable(format!(
                    "cannot tabulate a {n}-dimensional set"
                )))
            }
        };
        let radii = dirs
            .iter()
            .map(|d| set.minkowski_gauge(d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dirs, radii)
    }

    pub fn directions(&self) -> &[Point] {
        &self.directions
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Interpolated boundary radius along the unit direction `u`.
    fn radius_along(&self, u: &Point) -> f64 {
        match &self.interp {
            Interpolation::Line { plus, minus } => {
                if u[0] >= 0.0 {
                    *plus
                } else {
                    *minus
                }
            }
            Interpolation::Polar { angles, radii } => polar_radius(angles, radii, polar_angle(u)),
            Interpolation::Spherical { triangles } => {
                let u3 = Vector3::new(u[0], u[1], u[2]);
                let mut best: Option<(f64, f64)> = None;
                for t in triangles {
                    let m = nalgebra::Matrix3::from_columns(&[
                        to3(&self.directions[t[0]]),
                        to3(&self.directions[t[1]]),
                        to3(&self.directions[t[2]]),
                    ]);
                    let Some(w) = m.lu().solve(&u3) else { continue };
                    let lowest = w.min();
                    let r = (w[0] * self.radii[t[0]] + w[1] * self.radii[t[1]] + w[2] * self.radii[t[2]])
                        / w.sum();
                    if lowest >= -1e-12 {
                        return r;
                    }
                    // Numerical slack: keep the least-negative candidate.
                    if best.is_none_or(|(l, _)| lowest > l) {
                        best = Some((lowest, r));
                    }
                }
                best.map(|(_, r)| r).unwrap_or_else(|| self.radii.iter().cloned().fold(f64::INFINITY, f64::min))
            }
        }
    }

    fn boundary_distance(&self, x: &Point, metric: &Metric) -> f64 {
        match &self.interp {
            Interpolation::Line { plus, minus } => {
                let a = metric.distance(x, &Point::from_element(1, *plus));
                let b = metric.distance(x, &Point::from_element(1, -*minus));
                a.min(b)
            }
            Interpolation::Polar { angles, radii } => {
                let point_at = |th: f64| {
                    let r = polar_radius(angles, radii, th.rem_euclid(std::f64::consts::TAU));
                    Point::from_vec(vec![r * th.cos(), r * th.sin()])
                };
                let dist = |th: f64| metric.distance(x, &point_at(th));
                let m = angles.len();
                let mut coarse: Vec<(f64, usize)> =
                    (0..m).map(|i| (dist(angles[i]), i)).collect();
                coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut best = coarse[0].0;
                for &(_, j) in coarse.iter().take(3) {
                    let prev = if j == 0 { angles[m - 1] - std::f64::consts::TAU } else { angles[j - 1] };
                    let next = if j + 1 == m { angles[0] + std::f64::consts::TAU } else { angles[j + 1] };
                    let (_, v) = golden_section(&dist, prev, next, ANGLE_TOL);
                    best = best.min(v);
                }
                best
            }
            Interpolation::Spherical { triangles } => {
                let point_at = |d: &Point| {
                    let u = d.normalize();
                    self.radius_along(&u) * u
                };
                let dist = |d: &Point| metric.distance(x, &point_at(d));
                let mut candidates: Vec<Point> = self.directions.clone();
                for t in triangles {
                    let c = &self.directions[t[0]] + &self.directions[t[1]] + &self.directions[t[2]];
                    candidates.push(c.normalize());
                }
                let mut scored: Vec<(f64, usize)> =
                    candidates.iter().enumerate().map(|(i, d)| (dist(d), i)).collect();
                scored.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut best = scored[0].0;
                for &(_, i) in scored.iter().take(3) {
                    best = best.min(compass_search_sphere(&dist, &candidates[i]));
                }
                best
            }
        }
    }
}

fn to3(p: &Point) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn polar_angle(u: &Point) -> f64 {
    u[1].atan2(u[0]).rem_euclid(std::f64::consts::TAU)
}

fn polar_interpolation(units: &[Point], radii: &[f64]) -> Result<Interpolation> {
    let bad = |m: &str| GeometryError::InvalidGaugeTable(m.to_string());
    if units.len() < 3 {
        return Err(bad("a 2-D table needs at least three directions"));
    }
    let mut pairs: Vec<(f64, f64)> = units.iter().zip(radii).map(|(u, &r)| (polar_angle(u), r)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = pairs.len();
    for i in 0..m {
        let next = if i + 1 == m { pairs[0].0 + std::f64::consts::TAU } else { pairs[i + 1].0 };
        let gap = next - pairs[i].0;
        if gap <= 0.0 {
            return Err(bad("repeated direction"));
        }
        if gap >= std::f64::consts::PI {
            return Err(bad("angular gap of pi or more leaves the origin on the boundary"));
        }
    }
    Ok(Interpolation::Polar {
        angles: pairs.iter().map(|p| p.0).collect(),
        radii: pairs.iter().map(|p| p.1).collect(),
    })
}

fn polar_radius(angles: &[f64], radii: &[f64], th: f64) -> f64 {
    let m = angles.len();
    // index of first angle > th
    let hi = angles.partition_point(|&a| a <= th);
    let (a0, r0, a1, r1) = if hi == 0 {
        (angles[m - 1] - std::f64::consts::TAU, radii[m - 1], angles[0], radii[0])
    } else if hi == m {
        (angles[m - 1], radii[m - 1], angles[0] + std::f64::consts::TAU, radii[0])
    } else {
        (angles[hi - 1], radii[hi - 1], angles[hi], radii[hi])
    };
    if th == a0 {
        return r0;
    }
    let w = (th - a0) / (a1 - a0);
    r0 + w * (r1 - r0)
}

fn fibonacci_sphere(count: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            Point::from_vec(vec![r * th.cos(), r * th.sin(), z])
        })
        .collect()
}

/// Convex hull of unit vectors, returned as outward-oriented triangles.
fn sphere_triangulation(units: &[Point]) -> Result<Vec<[usize; 3]>> {
    let bad = |m: &str| GeometryError::InvalidGaugeTable(m.to_string());
    let pts: Vec<Vector3<f64>> = units.iter().map(to3).collect();
    let n = pts.len();
    if n < 4 {
        return Err(bad("a 3-D table needs at least four directions"));
    }
    const EPS: f64 = 1e-12;

    // Initial tetrahedron.
    let i0 = 0;
    let i1 = (1..n)
        .max_by(|&a, &b| (pts[a] - pts[i0]).norm().total_cmp(&(pts[b] - pts[i0]).norm()))
        .unwrap();
    let i2 = (0..n)
        .max_by(|&a, &b| {
            let da = (pts[i1] - pts[i0]).cross(&(pts[a] - pts[i0])).norm();
            let db = (pts[i1] - pts[i0]).cross(&(pts[b] - pts[i0])).norm();
            da.total_cmp(&db)
        })
        .unwrap();
    let normal = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0]));
    if normal.norm() < 1e-9 {
        return Err(bad("directions are collinear"));
    }
    let i3 = (0..n)
        .max_by(|&a, &b| normal.dot(&(pts[a] - pts[i0])).abs().total_cmp(&normal.dot(&(pts[b] - pts[i0])).abs()))
        .unwrap();
    if normal.dot(&(pts[i3] - pts[i0])).abs() < 1e-9 {
        return Err(bad("directions are coplanar"));
    }

    let centroid = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
    let orient = |f: [usize; 3]| -> [usize; 3] {
        let nrm = (pts[f[1]] - pts[f[0]]).cross(&(pts[f[2]] - pts[f[0]]));
        if nrm.dot(&(pts[f[0]] - centroid)) < 0.0 {
            [f[0], f[2], f[1]]
        } else {
            f
        }
    };
    let mut faces: Vec<[usize; 3]> = vec![
        orient([i0, i1, i2]),
        orient([i0, i1, i3]),
        orient([i0, i2, i3]),
        orient([i1, i2, i3]),
    ];
    let face_normal = |f: &[usize; 3]| (pts[f[1]] - pts[f[0]]).cross(&(pts[f[2]] - pts[f[0]]));

    for p in 0..n {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| face_normal(f).normalize().dot(&(pts[p] - pts[f[0]])) > EPS)
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                edges.push((f[k], f[(k + 1) % 3]));
            }
        }
        let horizon: Vec<(usize, usize)> = edges
            .iter()
            .filter(|&&(a, b)| !edges.contains(&(b, a)))
            .cloned()
            .collect();
        let mut kept: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(f, _)| *f)
            .collect();
        kept.extend(horizon.into_iter().map(|(a, b)| [a, b, p]));
        faces = kept;
    }

    for f in &faces {
        let nrm = face_normal(f).normalize();
        if nrm.dot(&pts[f[0]]) <= 1e-9 {
            return Err(bad("directions do not surround the origin"));
        }
    }
    Ok(faces)
}

/// Golden-section minimization on `[a, b]`; returns `(argmin, min)`.
pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn compass_search_sphere<F: Fn(&Point) -> f64>(f: &F, start: &Point) -> f64 {
    let d = start.normalize();
    let seed = if d[0].abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let d3 = to3(&d);
    let e1 = d3.cross(&seed).normalize();
    let e2 = d3.cross(&e1);
    let at = |a: f64, b: f64| {
        let v = d3 + a * e1 + b * e2;
        Point::from_vec(vec![v[0], v[1], v[2]])
    };
    let (mut a, mut b) = (0.0, 0.0);
    let mut best = f(&at(a, b));
    let mut step = 0.05;
    while step > ANGLE_TOL {
        let mut moved = false;
        for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let v = f(&at(a + da, b + db));
            if v < best {
                best = v;
                a += da;
                b += db;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Closed star-shaped compact set.
#[derive(Debug, Clone, PartialEq)]
pub enum StarryCompact {
    Ball(Ball),
    Ellipsoid(Ellipsoid),
    GaugeTable(GaugeTable),
}

impl StarryCompact {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        Ball::new(center, radius).map(StarryCompact::Ball)
    }

    pub fn ellipsoid(center: Point, q: DMatrix<f64>, level: f64) -> Result<Self> {
        Ellipsoid::new(center, q, level).map(StarryCompact::Ellipsoid)
    }

    pub fn gauge_table(directions: Vec<Point>, radii: Vec<f64>) -> Result<Self> {
        GaugeTable::new(directions, radii).map(StarryCompact::GaugeTable)
    }

    pub fn dim(&self) -> usize {
        match self {
            StarryCompact::Ball(b) => b.center.len(),
            StarryCompact::Ellipsoid(e) => e.center.len(),
            StarryCompact::GaugeTable(g) => g.dim,
        }
    }

    /// Interior point the set is star-shaped about: the center for balls and
    /// ellipsoids, the origin for gauge tables.
    pub fn reference_point(&self) -> Point {
        match self {
            StarryCompact::Ball(b) => b.center.clone(),
            StarryCompact::Ellipsoid(e) => e.center.clone(),
            StarryCompact::GaugeTable(g) => Point::zeros(g.dim),
        }
    }

    /// `reference + lambda (x - reference)`.
    pub fn scale_about_reference(&self, x: &Point, lambda: f64) -> Point {
        let r = self.reference_point();
        &r + (x - &r) * lambda
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            StarryCompact::Ball(b) => (x - &b.center).norm() <= b.radius * (1.0 + BOUNDARY_TOL),
            StarryCompact::Ellipsoid(e) => {
                let r = e.shape.quad(&(x - &e.center)).max(0.0).sqrt();
                r <= e.q_radius() * (1.0 + BOUNDARY_TOL)
            }
            StarryCompact::GaugeTable(g) => {
                let norm = x.norm();
                if norm == 0.0 {
                    return true;
                }
                norm <= g.radius_along(&(x / norm)) * (1.0 + BOUNDARY_TOL)
            }
        }
    }

    pub fn origin_is_interior(&self) -> bool {
        match self {
            StarryCompact::Ball(b) => b.center.norm() < b.radius * (1.0 - BOUNDARY_TOL),
            StarryCompact::Ellipsoid(e) => e.shape.quad(&e.center) < e.level * (1.0 - BOUNDARY_TOL),
            StarryCompact::GaugeTable(_) => true,
        }
    }

    /// Distance from `x` to the boundary of the set under `metric`.
    pub fn boundary_distance(&self, x: &Point, metric: &Metric) -> f64 {
        debug_assert!(metric.check_dim(self.dim()).is_ok());
        match (self, metric) {
            (StarryCompact::Ball(b), Metric::Euclidean) => ((x - &b.center).norm() - b.radius).abs(),
            (StarryCompact::Ball(b), Metric::QWeighted(p)) => {
                let unit = SpdMatrix::identity(b.center.len());
                quadric_boundary_distance(&(x - &b.center), &unit, b.radius * b.radius, Some(p))
            }
            (StarryCompact::Ellipsoid(e), Metric::Euclidean) => {
                quadric_boundary_distance(&(x - &e.center), &e.shape, e.level, None)
            }
            (StarryCompact::Ellipsoid(e), Metric::QWeighted(p)) => {
                if e.shape == *p {
                    (p.quad(&(x - &e.center)).max(0.0).sqrt() - e.q_radius()).abs()
                } else {
                    quadric_boundary_distance(&(x - &e.center), &e.shape, e.level, Some(p))
                }
            }
            (StarryCompact::GaugeTable(g), m) => g.boundary_distance(x, m),
        }
    }

    /// Continuous indicator equal to 1 on the boundary, below 1 inside and
    /// above 1 outside: `1 -/+ boundary_distance`.
    pub fn alpha_indicator(&self, x: &Point, metric: &Metric) -> f64 {
        let psi = self.boundary_distance(x, metric);
        if self.contains(x) {
            1.0 - psi
        } else {
            1.0 + psi
        }
    }

    /// Largest `k > 0` with `k x / |x|` in the set.
    pub fn minkowski_gauge(&self, x: &Point) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let norm = x.norm();
        if norm == 0.0 {
            return Err(GeometryError::ZeroDirection);
        }
        let u = x / norm;
        match self {
            StarryCompact::Ball(b) => ray_quadric_exit(&u, &b.center, None, b.radius * b.radius),
            StarryCompact::Ellipsoid(e) => ray_quadric_exit(&u, &e.center, Some(&e.shape), e.level),
            StarryCompact::GaugeTable(g) => Ok(g.radius_along(&u)),
        }
    }

    /// `count` boundary points along directions drawn uniformly on the unit
    /// sphere about the reference point. Deterministic for a given seed.
    pub fn boundary_sample(&self, count: usize, seed: u64) -> Vec<Point> {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = Point::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let norm = u.norm();
            if norm < 1e-12 {
                continue;
            }
            let u = u / norm;
            let z = match self {
                StarryCompact::Ball(b) => &b.center + &u * b.radius,
                StarryCompact::Ellipsoid(e) => &e.center + &u * (e.q_radius() / e.shape.quad(&u).sqrt()),
                StarryCompact::GaugeTable(g) => &u * g.radius_along(&u),
            };
            out.push(z);
        }
        out
    }
}

/// Largest root `k` of `|k u - center|_M^2 = level` (M = I when `None`).
fn ray_quadric_exit(u: &Point, center: &Point, shape: Option<&SpdMatrix>, level: f64) -> Result<f64> {
    let (a, b, c0) = match shape {
        None => (u.norm_squared(), u.dot(center), center.norm_squared() - level),
        Some(m) => {
            let mc = m.matrix() * center;
            (m.quad(u), u.dot(&mc), center.dot(&mc) - level)
        }
    };
    if c0 >= 0.0 {
        return Err(GeometryError::OriginNotInterior);
    }
    let disc = (b * b - a * c0).sqrt();
    // Product of the roots is c0 / a < 0; pick the stable formula.
    Ok(if b >= 0.0 { (b + disc) / a } else { c0 / (b - disc) })
}

/// Distance from `rel` (a point relative to the center) to the boundary of
/// `{y : y^T M y = level}`, measured in the metric `P` (Euclidean if `None`).
fn quadric_boundary_distance(rel: &Point, m: &SpdMatrix, level: f64, metric: Option<&SpdMatrix>) -> f64 {
    // Whiten the metric: w = P^{1/2} y turns rho into the Euclidean norm and
    // the quadric into w^T (P^{-1/2} M P^{-1/2}) w = level.
    let (w, s) = match metric {
        None => (rel.clone(), m.matrix().clone()),
        Some(p) => {
            let half = p.sqrt();
            let inv_half = p.inv_sqrt();
            (&half * rel, &inv_half * m.matrix() * &inv_half)
        }
    };
    let eig = ((&s + s.transpose()) * 0.5).symmetric_eigen();
    let coords = eig.eigenvectors.transpose() * w;
    let axes: Vec<f64> = eig.eigenvalues.iter().map(|l| (level / l).sqrt()).collect();
    let y: Vec<f64> = coords.iter().map(|c| c.abs()).collect();
    axis_ellipsoid_distance(&axes, &y)
}

/// Euclidean distance from `y` (nonnegative coordinates) to the surface
/// `sum (x_i / e_i)^2 = 1`.
///
/// The nearest point is `x_i = e_i^2 y_i / (t + e_i^2)` for the root `t` of
/// `F(t) = sum (e_i y_i / (t + e_i^2))^2 = 1` with `t > -min e_i^2`; when the
/// root does not exist on that interval the nearest point leaves the
/// shortest axis's hyperplane and is found at `t = -min e_i^2`.
pub(crate) fn axis_ellipsoid_distance(axes: &[f64], y: &[f64]) -> f64 {
    let f = |t: f64| -> f64 {
        axes.iter()
            .zip(y)
            .map(|(&e, &yi)| {
                if yi == 0.0 {
                    return 0.0;
                }
                let den = t + e * e;
                if den <= 0.0 {
                    f64::INFINITY
                } else {
                    let r = e * yi / den;
                    r * r
                }
            })
            .sum()
    };
    let dist_at = |t: f64| -> f64 {
        axes.iter()
            .zip(y)
            .map(|(&e, &yi)| {
                if yi == 0.0 {
                    0.0
                } else {
                    let r = t * yi / (t + e * e);
                    r * r
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    let bisect = |mut lo: f64, mut hi: f64| -> f64 {
        // f(lo) >= 1 >= f(hi)
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) >= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let f0 = f(0.0);
    if f0 >= 1.0 {
        let hi = axes.iter().zip(y).map(|(e, yi)| (e * yi).powi(2)).sum::<f64>().sqrt();
        return dist_at(bisect(0.0, hi.max(f64::MIN_POSITIVE)));
    }
    let (m, emin) = axes
        .iter()
        .cloned()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    let lo = -emin * emin;
    if f(lo) >= 1.0 {
        return dist_at(bisect(lo, 0.0));
    }
    // Nearest point has a nonzero component along the shortest axis.
    let mut sum_sq = 0.0;
    let mut used = 0.0;
    for (i, (&e, &yi)) in axes.iter().zip(y).enumerate() {
        if i == m || yi == 0.0 {
            continue;
        }
        let xi = e * e * yi / (e * e - emin * emin);
        used += (xi / e).powi(2);
        sum_sq += (xi - yi).powi(2);
    }
    let xm = emin * (1.0 - used).max(0.0).sqrt();
    (sum_sq + (xm - y[m]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn unit_ball() -> StarryCompact {
        StarryCompact::ball(p(&[0.0, 0.0]), 1.0).unwrap()
    }

    fn diag_ellipsoid() -> StarryCompact {
        StarryCompact::ellipsoid(p(&[0.0, 0.0]), DMatrix::from_diagonal(&p(&[4.0, 1.0])), 1.0).unwrap()
    }

    /// Dense parametric sampling of a 2-D ellipse boundary; independent of
    /// the root-solve route.
    fn brute_force_distance(center: &Point, q: &DMatrix<f64>, level: f64, x: &Point, metric: &Metric) -> f64 {
        let eig = q.clone().symmetric_eigen();
        let inv_half = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        let n = 400_000;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let y = center + &inv_half * p(&[th.cos(), th.sin()]) * level.sqrt();
            best = best.min(metric.distance(x, &y));
        }
        best
    }

    #[test]
    fn contains_examples() {
        let b = unit_ball();
        assert!(b.contains(&p(&[0.0, 0.0])));
        assert!(b.contains(&p(&[1.0, 0.0])));
        assert!(!b.contains(&p(&[1.5, 0.0])));
    }

    #[test]
    fn boundary_distance_examples() {
        let e = Metric::Euclidean;
        assert_eq!(unit_ball().boundary_distance(&p(&[0.0, 0.0]), &e), 1.0);
        assert_eq!(unit_ball().boundary_distance(&p(&[2.0, 0.0]), &e), 1.0);
        let d = diag_ellipsoid().boundary_distance(&p(&[0.0, 0.0]), &e);
        assert!((d - 0.5).abs() < 1e-12, "{d}");
    }

    #[test]
    fn ellipsoid_distance_matches_brute_force() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 1.2]);
        let center = p(&[0.3, -0.2]);
        let set = StarryCompact::ellipsoid(center.clone(), q.clone(), 2.0).unwrap();
        let metrics = [
            Metric::Euclidean,
            Metric::q_weighted(DMatrix::from_row_slice(2, 2, &[2.0, -0.3, -0.3, 0.5])).unwrap(),
        ];
        let probes = [[0.3, -0.2], [0.31, -0.2], [2.0, 1.0], [-0.4, 0.9], [0.0, 0.0], [5.0, -7.0]];
        for m in &metrics {
            for x in probes {
                let x = p(&x);
                let fast = set.boundary_distance(&x, m);
                let slow = brute_force_distance(&center, &q, 2.0, &x, m);
                assert!((fast - slow).abs() < 1e-6, "{x:?}: {fast} vs {slow}");
                assert!(fast <= slow + 1e-12);
            }
        }
    }

    #[test]
    fn ball_under_weighted_metric_matches_brute_force() {
        let center = p(&[0.1, 0.2]);
        let set = StarryCompact::ball(center.clone(), 0.8).unwrap();
        let m = Metric::q_weighted(DMatrix::from_diagonal(&p(&[4.0, 1.0]))).unwrap();
        for x in [[0.1, 0.2], [1.5, 0.0], [0.0, -0.3]] {
            let x = p(&x);
            let fast = set.boundary_distance(&x, &m);
            let slow = brute_force_distance(&center, &DMatrix::identity(2, 2), 0.64, &x, &m);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn center_of_sphere_like_ellipsoid_degenerate_axis() {
        // All coordinates zero: nearest point is on the shortest axis.
        assert!((axis_ellipsoid_distance(&[3.0, 2.0, 1.0], &[0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        // Off-center on the long axis, inside: nearest point leaves that axis.
        let d = axis_ellipsoid_distance(&[2.0, 1.0], &[0.5, 0.0]);
        let brute = (0..1_000_000)
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / 1e6;
                ((2.0 * th.cos() - 0.5).powi(2) + th.sin().powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((d - brute).abs() < 1e-9, "{d} vs {brute}");
    }

    #[test]
    fn alpha_examples() {
        let b = unit_ball();
        let e = Metric::Euclidean;
        assert_eq!(b.alpha_indicator(&p(&[0.0, 0.0]), &e), 0.0);
        assert_eq!(b.alpha_indicator(&p(&[1.0, 0.0]), &e), 1.0);
        assert_eq!(b.alpha_indicator(&p(&[2.0, 0.0]), &e), 2.0);
    }

    #[test]
    fn gauge_examples() {
        assert_eq!(unit_ball().minkowski_gauge(&p(&[3.0, 0.0])).unwrap(), 1.0);
        assert!((diag_ellipsoid().minkowski_gauge(&p(&[1.0, 0.0])).unwrap() - 0.5).abs() < 1e-15);
        assert!((diag_ellipsoid().minkowski_gauge(&p(&[0.0, 7.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(unit_ball().minkowski_gauge(&p(&[0.0, 0.0])), Err(GeometryError::ZeroDirection));
    }

    #[test]
    fn gauge_of_off_center_ball() {
        let b = StarryCompact::ball(p(&[0.5, 0.0]), 1.0).unwrap();
        assert!((b.minkowski_gauge(&p(&[1.0, 0.0])).unwrap() - 1.5).abs() < 1e-15);
        assert!((b.minkowski_gauge(&p(&[-1.0, 0.0])).unwrap() - 0.5).abs() < 1e-15);
        let far = StarryCompact::ball(p(&[2.0, 0.0]), 1.0).unwrap();
        assert_eq!(far.minkowski_gauge(&p(&[1.0, 0.0])), Err(GeometryError::OriginNotInterior));
    }

    #[test]
    fn boundary_sample_examples() {
        let pts = unit_ball().boundary_sample(4, 7);
        assert_eq!(pts.len(), 4);
        for z in &pts {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        let q = DMatrix::from_diagonal(&p(&[4.0, 1.0]));
        for z in diag_ellipsoid().boundary_sample(100, 0) {
            assert!((z.dot(&(&q * &z)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(unit_ball().boundary_sample(5, 3), unit_ball().boundary_sample(5, 3));
    }

    #[test]
    fn gauge_table_tracks_ellipsoid() {
        let q = DMatrix::from_diagonal(&p(&[4.0, 1.0]));
        let table = StarryCompact::GaugeTable(GaugeTable::from_set(&diag_ellipsoid(), 720).unwrap());
        for z in table.boundary_sample(100, 0) {
            assert!((z.dot(&(&q * &z)) - 1.0).abs() < 1e-3);
        }
        for z in table.boundary_sample(50, 1) {
            let d = table.boundary_distance(&z, &Metric::Euclidean);
            assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn gauge_table_validation() {
        let dirs = vec![p(&[1.0, 0.0]), p(&[0.0, 1.0]), p(&[-1.0, 0.0])];
        assert!(matches!(
            GaugeTable::new(dirs.clone(), vec![1.0, 1.0, 1.0]),
            Err(GeometryError::InvalidGaugeTable(_))
        ));
        assert!(matches!(
            GaugeTable::new(dirs, vec![1.0, 1.0]),
            Err(GeometryError::InvalidGaugeTable(_))
        ));
        let square = vec![p(&[1.0, 0.0]), p(&[0.0, 1.0]), p(&[-1.0, 0.0]), p(&[0.0, -1.0])];
        assert!(matches!(
            GaugeTable::new(square, vec![1.0, -1.0, 1.0, 1.0]),
            Err(GeometryError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn spherical_table_reproduces_sphere_and_nodes() {
        let sphere = StarryCompact::ball(p(&[0.0, 0.0, 0.0]), 2.0).unwrap();
        let table = GaugeTable::from_set(&sphere, 200).unwrap();
        let set = StarryCompact::GaugeTable(table.clone());
        for (d, r) in table.directions().iter().zip(table.radii()) {
            assert!((set.minkowski_gauge(d).unwrap() - r).abs() < 1e-9);
        }
        for z in set.boundary_sample(40, 5) {
            assert!((z.norm() - 2.0).abs() < 1e-12);
            assert!(set.boundary_distance(&z, &Metric::Euclidean) < 1e-8);
        }
        let inner = p(&[0.1, 0.2, -0.1]);
        let d = set.boundary_distance(&inner, &Metric::Euclidean);
        assert!((d - (2.0 - inner.norm())).abs() < 1e-9, "{d}");
    }

    #[test]
    fn rejects_non_spd() {
        assert_eq!(
            Metric::q_weighted(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            Err(GeometryError::NotPositiveDefinite)
        );
        assert_eq!(
            StarryCompact::ellipsoid(p(&[0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), 1.0),
            Err(GeometryError::NotPositiveDefinite)
        );
        assert_eq!(StarryCompact::ball(p(&[0.0]), 0.0), Err(GeometryError::NonPositiveScale(0.0)));
    }

    #[test]
    fn gauge_continuity_probe() {
        let table = StarryCompact::GaugeTable(GaugeTable::from_set(&diag_ellipsoid(), 720).unwrap());
        for set in [diag_ellipsoid(), table] {
            let th: f64 = 0.7;
            let k0 = set.minkowski_gauge(&p(&[th.cos(), th.sin()])).unwrap();
            let devs: Vec<f64> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|d| {
                    let k = set.minkowski_gauge(&p(&[(th + d).cos(), (th + d).sin()])).unwrap();
                    (k - k0).abs()
                })
                .collect();
            assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        }
    }

    proptest! {
        #[test]
        fn weighted_metric_axioms(
            a in prop::array::uniform2(-5.0f64..5.0),
            b in prop::array::uniform2(-5.0f64..5.0),
            c in prop::array::uniform2(-5.0f64..5.0),
        ) {
            let m = Metric::q_weighted(DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 0.5])).unwrap();
            let (a, b, c) = (p(&a), p(&b), p(&c));
            let ab = m.distance(&a, &b);
            prop_assert!((ab - m.distance(&b, &a)).abs() < 1e-12);
            prop_assert!(ab <= m.distance(&a, &c) + m.distance(&c, &b) + 1e-12);
            prop_assert_eq!(m.distance(&a, &a), 0.0);
            let (lo, hi) = m.equivalence_bounds();
            let e = (&a - &b).norm();
            prop_assert!(lo * e <= ab + 1e-12 && ab <= hi * e + 1e-12);
        }

        #[test]
        fn gauge_point_lies_on_boundary(th in 0.0f64..std::f64::consts::TAU) {
            let set = StarryCompact::ellipsoid(
                p(&[0.2, -0.1]),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
                1.0,
            ).unwrap();
            let u = p(&[th.cos(), th.sin()]);
            let k = set.minkowski_gauge(&u).unwrap();
            prop_assert!(set.boundary_distance(&(&u * k), &Metric::Euclidean) <= 1e-9);
        }
    }
}
