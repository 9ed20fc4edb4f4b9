//! Lyapunov functions built from a first integral.
//!
//! `V(x, t) = alpha(phi(t, t0, x))` composes the boundary indicator of a base
//! set with the pullback to `t0`; along any solution it equals
//! `alpha(x0)`, so it is constant (hence nonincreasing) and
//! `{V(., t0) <= 1}` is exactly the base set. For a ball `K_c(z0)` under the
//! Euclidean metric this is `1 - c + |X(t0,t) x - z0|`.
//!
//! `W(x, t, x0) = |phi_g(t, t0, x / k, x0 / k)|` is the normalized form
//! obtained through the gauge transform, with `k = k(G0, x0)`.

use thiserror::Error;

use crate::dynamics::{integrate_trajectory, inverse_flow, DynamicsError, Pullback, SystemModel};
use crate::geometry::{GeometryError, Metric, Point, StarryCompact};
use crate::starry_transform::{TransformError, TransformedSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least one time sample")]
    NoSamples,
}

pub type Result<T> = std::result::Result<T, LyapunovError>;

/// Common evaluation interface for the two constructions.
pub trait LyapunovForm {
    fn model(&self) -> &SystemModel;
    /// Integration step matching the pullback grid.
    fn step(&self) -> f64;
    /// Value at `(x, t)` for the solution started at `x0`; `V` ignores `x0`.
    fn value(&self, x: &Point, t: f64, x0: &Point) -> Result<f64>;
    /// Column label used in traces.
    fn label(&self) -> &'static str;
}

fn pullback_step(p: &Pullback) -> f64 {
    match p {
        Pullback::Table(t) => t.step(),
        Pullback::Integrate { step } => *step,
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovDistanceForm {
    base_set: StarryCompact,
    metric: Metric,
    model: SystemModel,
    pullback: Pullback,
}

impl LyapunovDistanceForm {
    pub fn new(base_set: StarryCompact, metric: Metric, model: SystemModel, pullback: Pullback) -> Result<Self> {
        if base_set.dim() != model.dim() {
            return Err(LyapunovError::DimensionMismatch { expected: model.dim(), got: base_set.dim() });
        }
        if let Metric::QWeighted(q) = &metric {
            if q.dim() != model.dim() {
                return Err(LyapunovError::DimensionMismatch { expected: model.dim(), got: q.dim() });
            }
        }
        Ok(Self { base_set, metric, model, pullback })
    }

    /// Builds the pullback for `model` with the given step.
    pub fn with_step(base_set: StarryCompact, metric: Metric, model: SystemModel, step: f64) -> Result<Self> {
        let pullback = Pullback::for_model(&model, step)?;
        Self::new(base_set, metric, model, pullback)
    }

    pub fn base_set(&self) -> &StarryCompact {
        &self.base_set
    }

    pub fn eval_v(&self, x: &Point, t: f64) -> Result<f64> {
        let x0 = inverse_flow(&self.model, &self.pullback, x, t)?;
        Ok(self.base_set.alpha_indicator(&x0, &self.metric))
    }
}

impl LyapunovForm for LyapunovDistanceForm {
    fn model(&self) -> &SystemModel {
        &self.model
    }

    fn step(&self) -> f64 {
        pullback_step(&self.pullback)
    }

    fn value(&self, x: &Point, t: f64, _x0: &Point) -> Result<f64> {
        self.eval_v(x, t)
    }

    fn label(&self) -> &'static str {
        "V"
    }
}

#[derive(Debug)]
pub struct LyapunovNormalizedForm {
    transformed: TransformedSystem,
    pullback: Pullback,
}

impl LyapunovNormalizedForm {
    pub fn new(base_set: StarryCompact, model: SystemModel, step: f64) -> Result<Self> {
        let pullback = Pullback::for_model(&model, step)?;
        let transformed = TransformedSystem::new(model, base_set)?;
        Ok(Self { transformed, pullback })
    }

    /// `|phi_g(t, t0, x/k, x0/k)|` with `k = k(G0, x0)`.
    pub fn eval_w(&self, x: &Point, t: f64, x0: &Point) -> Result<f64> {
        if x0.iter().all(|&v| v == 0.0) {
            return Err(GeometryError::ZeroDirection.into());
        }
        let k = self.transformed.gauge(x0)?;
        let y = x / k;
        let y0 = x0 / k;
        let model = self.transformed.base();
        let phi = match &self.pullback {
            // g is linear with the same generator, so its pullback is X(t0, t).
            Pullback::Table(_) => inverse_flow(model, &self.pullback, &y, t)?,
            Pullback::Integrate { step } => self.transformed.pullback(&y, t, &y0, *step)?,
        };
        Ok(phi.norm())
    }
}

impl LyapunovForm for LyapunovNormalizedForm {
    fn model(&self) -> &SystemModel {
        self.transformed.base()
    }

    fn step(&self) -> f64 {
        pullback_step(&self.pullback)
    }

    fn value(&self, x: &Point, t: f64, x0: &Point) -> Result<f64> {
        if x0.iter().all(|&v| v == 0.0) {
            // zero solution
            return Ok(0.0);
        }
        self.eval_w(x, t, x0)
    }

    fn label(&self) -> &'static str {
        "W"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest forward difference `v[k+1] - v[k]`, floored at zero.
    pub max_increase: f64,
    pub stdev: f64,
}

impl MonotonicityReport {
    /// Running maximum of the forward differences, aligned with `values`.
    pub fn cumulative_max_increase(&self) -> Vec<f64> {
        let mut acc = 0.0f64;
        let mut out = Vec::with_capacity(self.values.len());
        for (k, v) in self.values.iter().enumerate() {
            if k > 0 {
                acc = acc.max(v - self.values[k - 1]);
            }
            out.push(acc);
        }
        out
    }
}

/// Integrates from `x0` on the form's grid and evaluates the form at
/// `time_samples` nodes spread evenly over it.
pub fn monotonicity_report<F: LyapunovForm + ?Sized>(form: &F, x0: &Point, time_samples: usize) -> Result<MonotonicityReport> {
    if time_samples == 0 {
        return Err(LyapunovError::NoSamples);
    }
    let traj = integrate_trajectory(form.model(), x0, form.step())?;
    let last = traj.times.len() - 1;
    let picks: Vec<usize> = if time_samples == 1 {
        vec![0]
    } else {
        let mut v: Vec<usize> = (0..time_samples)
            .map(|k| ((k as f64) * last as f64 / (time_samples - 1) as f64).round() as usize)
            .collect();
        v.dedup();
        v
    };
    let mut times = Vec::with_capacity(picks.len());
    let mut values = Vec::with_capacity(picks.len());
    for i in picks {
        times.push(traj.times[i]);
        values.push(form.value(&traj.states[i], traj.times[i], x0)?);
    }
    let max_increase = values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let stdev = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    Ok(MonotonicityReport { times, values, max_increase, stdev })
}
