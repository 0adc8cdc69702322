//! Fixed-step solvers for ODEs on manifolds.
//!
//! * `Ts` integrates the pulled-back field in the tangent space of one
//!   reference point.
//! * `Exp` re-centers at the current point every step and maps back with
//!   `exp`.
//! * `Dc` integrates in chart coordinates and hops charts when the
//!   coordinates leave the switch radius.
//!
//! `Ts` and `Exp` are generic over [`Real`] so rollouts can be recorded on
//! the tape. `Dc` is evaluation-only.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ManifoldKind;
use crate::real::{vec_ops as vo, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Ts,
    Exp,
    Dc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stepper {
    Euler,
    Rk4,
}

/// How a manifold tangent at `y` is carried back to the tangent space of
/// the reference point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pullback {
    /// Differential of `log_{x_r}` at `y`: the exact pulled-back ODE.
    Differential,
    /// Orthogonal projection onto `T_{x_r}M`; first-order accurate away
    /// from `x_r`.
    Projection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub method: Method,
    pub stepper: Stepper,
    pub steps: usize,
    pub horizon: f64,
    /// TS reference point; the caller's equilibrium when `None`.
    pub reference: Option<Vec<f64>>,
    pub chart_radius: f64,
    pub pullback: Pullback,
    /// Stepper applications per `Exp` window.
    pub substeps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            method: Method::Exp,
            stepper: Stepper::Euler,
            steps: 100,
            horizon: 1.0,
            reference: None,
            chart_radius: 2.0,
            pullback: Pullback::Differential,
            substeps: 1,
        }
    }
}

impl SolveConfig {
    pub fn new(method: Method, stepper: Stepper, steps: usize, horizon: f64) -> Self {
        Self { method, stepper, steps, horizon, ..Self::default() }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || !(self.horizon > 0.0) || self.substeps < 1 || !(self.chart_radius > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "need N ≥ 1, T > 0, substeps ≥ 1, chart radius > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Samples of a solution on a uniform time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub manifold: ManifoldKind,
    pub dt: f64,
    pub points: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &[f64] {
        &self.points[0]
    }

    pub fn last(&self) -> &[f64] {
        self.points.last().expect("non-empty trajectory")
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.points.len().saturating_sub(1)) as f64
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            self.manifold.validate(p)?;
        }
        Ok(())
    }
}

/// One step of an explicit Euclidean scheme.
pub fn euclid_step<S: Real>(
    stepper: Stepper,
    z: &[S],
    dt: f64,
    mut rhs: impl FnMut(&[S]) -> Result<Vec<S>>,
) -> Result<Vec<S>> {
    match stepper {
        Stepper::Euler => {
            let k = rhs(z)?;
            Ok(vo::axpy(z, dt, &k))
        }
        Stepper::Rk4 => {
            let k1 = rhs(z)?;
            let k2 = rhs(&vo::axpy(z, 0.5 * dt, &k1))?;
            let k3 = rhs(&vo::axpy(z, 0.5 * dt, &k2))?;
            let k4 = rhs(&vo::axpy(z, dt, &k3))?;
            Ok(z
                .iter()
                .enumerate()
                .map(|(i, &zi)| zi + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0))
                .collect())
        }
    }
}

/// Carry `v ∈ T_yM` to `T_{xr}M`.
fn pull<S: Real>(m: &ManifoldKind, pb: Pullback, xr: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
    match pb {
        Pullback::Differential => m.dlog(xr, y, v),
        Pullback::Projection => Ok(m.project(xr, v)),
    }
}

/// Tangent-space solver around `xr`.
pub fn solve_ts<S: Real>(
    m: &ManifoldKind,
    f: impl Fn(&[S]) -> Vec<S>,
    x0: &[S],
    xr: &[S],
    cfg: &SolveConfig,
) -> Result<Vec<Vec<S>>> {
    cfg.validate()?;
    let dt = cfg.dt();
    let mut z = m.log(xr, x0)?;
    let mut out = Vec::with_capacity(cfg.steps + 1);
    out.push(x0.to_vec());
    for _ in 0..cfg.steps {
        z = euclid_step(cfg.stepper, &z, dt, |zz| {
            let y = m.exp(xr, zz);
            pull(m, cfg.pullback, xr, &y, &f(&y))
        })?;
        let y = m.exp(xr, &z);
        // Leaving the log-mappable region shows up as a failed log.
        if !m.is_hadamard() {
            m.log(xr, &y)?;
        }
        out.push(y);
    }
    Ok(out)
}

/// One `Exp` window of length `dt` from `x`.
pub fn exp_step<S: Real>(
    m: &ManifoldKind,
    f: &impl Fn(&[S]) -> Vec<S>,
    x: &[S],
    dt: f64,
    stepper: Stepper,
    pullback: Pullback,
    substeps: usize,
) -> Result<Vec<S>> {
    let h = dt / substeps as f64;
    let mut z: Vec<S> = x.iter().map(|c| c.zero_like()).collect();
    let mut at_origin = true;
    for _ in 0..substeps {
        z = euclid_step(stepper, &z, h, |zz| {
            if at_origin && zz.iter().all(|c| c.value() == 0.0) {
                // exp_x(0) = x and the pullback is the identity on T_xM.
                return Ok(f(x));
            }
            let y = m.exp(x, zz);
            pull(m, pullback, x, &y, &f(&y))
        })?;
        at_origin = false;
    }
    Ok(m.exp(x, &z))
}

pub fn solve_exp<S: Real>(m: &ManifoldKind, f: impl Fn(&[S]) -> Vec<S>, x0: &[S], cfg: &SolveConfig) -> Result<Vec<Vec<S>>> {
    cfg.validate()?;
    let dt = cfg.dt();
    let mut out = Vec::with_capacity(cfg.steps + 1);
    out.push(x0.to_vec());
    for i in 0..cfg.steps {
        let next = exp_step(m, &f, &out[i], dt, cfg.stepper, cfg.pullback, cfg.substeps)?;
        out.push(next);
    }
    Ok(out)
}

/// A field given directly in chart coordinates, possibly time dependent.
pub trait ChartField {
    /// `dζ/dt` at time `t` in chart `chart`, where `x = φ⁻¹(ζ)`.
    fn chart_velocity(&self, t: f64, chart: &[u8], z: &[f64], x: &[f64]) -> Vec<f64>;
}

/// Adapter pushing an autonomous manifold field through the chart.
pub struct PushedField<'a, F> {
    pub manifold: &'a ManifoldKind,
    pub field: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> ChartField for PushedField<'_, F> {
    fn chart_velocity(&self, _t: f64, chart: &[u8], _z: &[f64], x: &[f64]) -> Vec<f64> {
        let v = (self.field)(x);
        self.manifold.chart_pushforward(chart, x, &v)
    }
}

/// Result of a dynamic-chart solve.
pub struct DcSolution {
    pub points: Vec<Vec<f64>>,
    pub charts: Vec<Vec<u8>>,
    pub switches: usize,
}

pub fn solve_dc_chart(m: &ManifoldKind, field: &impl ChartField, x0: &[f64], cfg: &SolveConfig) -> Result<DcSolution> {
    solve_dc_from(m, field, x0, m.best_chart(x0), cfg)
}

/// Dynamic-chart solve starting in a given chart.
pub fn solve_dc_from(
    m: &ManifoldKind,
    field: &impl ChartField,
    x0: &[f64],
    chart0: Vec<u8>,
    cfg: &SolveConfig,
) -> Result<DcSolution> {
    cfg.validate()?;
    let dt = cfg.dt();
    let mut chart = chart0;
    let mut z = m.to_chart(&chart, x0);
    let mut points = Vec::with_capacity(cfg.steps + 1);
    let mut charts = Vec::with_capacity(cfg.steps + 1);
    points.push(x0.to_vec());
    charts.push(chart.clone());
    let mut switches = 0;
    for i in 0..cfg.steps {
        let t0 = i as f64 * dt;
        // Stage times for a time-dependent field: Euler samples t0, RK4
        // samples t0, t0 + dt/2 (twice), t0 + dt.
        let mut stage = 0usize;
        z = euclid_step(cfg.stepper, &z, dt, |zz| {
            let t = match (cfg.stepper, stage) {
                (Stepper::Euler, _) | (_, 0) => t0,
                (_, 1) | (_, 2) => t0 + 0.5 * dt,
                _ => t0 + dt,
            };
            stage += 1;
            let x = m.from_chart(&chart, zz);
            Ok(field.chart_velocity(t, &chart, zz, &x))
        })?;
        let x = m.from_chart(&chart, &z);
        if m.check_chart(&chart, &z, cfg.chart_radius).is_err() {
            let next = m.best_chart(&x);
            if next != chart {
                switches += 1;
                chart = next;
                z = m.to_chart(&chart, &x);
            }
        }
        points.push(x);
        charts.push(chart.clone());
    }
    Ok(DcSolution { points, charts, switches })
}

pub fn solve_dc(m: &ManifoldKind, f: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], cfg: &SolveConfig) -> Result<Vec<Vec<f64>>> {
    Ok(solve_dc_chart(m, &PushedField { manifold: m, field: f }, x0, cfg)?.points)
}

/// Solve with any method on plain floats. `equilibrium` is the TS reference
/// when the config does not name one.
pub fn solve(
    m: &ManifoldKind,
    f: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    equilibrium: &[f64],
    cfg: &SolveConfig,
) -> Result<Trajectory> {
    m.validate_tol(x0, 1e-6)?;
    let points = match cfg.method {
        Method::Ts => {
            let xr = cfg.reference.clone().unwrap_or_else(|| equilibrium.to_vec());
            solve_ts(m, f, x0, &xr, cfg)?
        }
        Method::Exp => solve_exp(m, f, x0, cfg)?,
        Method::Dc => solve_dc(m, f, x0, cfg)?,
    };
    Ok(Trajectory { manifold: m.clone(), dt: cfg.dt(), points })
}

/// `log₂(e(N)/e(2N))` for consecutive refinements.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| crate::math::log2(w[0] / w[1])).collect()
}

/// Closed-form test field on S³: a rotation in two orthogonal planes with
/// different rates, `ẋ = A x` with `A` skew-symmetric. Its flow is
/// `x(t) = exp(tA) x₀` and, unlike a single great-circle field, its
/// integral curves are not geodesics.
#[derive(Clone, Copy, Debug)]
pub struct TwoPlaneRotation {
    pub w1: f64,
    pub w2: f64,
}

impl TwoPlaneRotation {
    pub fn field<S: Real>(&self, x: &[S]) -> Vec<S> {
        vec![-(x[1] * self.w1), x[0] * self.w1, -(x[3] * self.w2), x[2] * self.w2]
    }

    pub fn flow(&self, x0: &[f64], t: f64) -> Vec<f64> {
        let (c1, s1) = (libm::cos(self.w1 * t), libm::sin(self.w1 * t));
        let (c2, s2) = (libm::cos(self.w2 * t), libm::sin(self.w2 * t));
        vec![
            c1 * x0[0] - s1 * x0[1],
            s1 * x0[0] + c1 * x0[1],
            c2 * x0[2] - s2 * x0[3],
            s2 * x0[2] + c2 * x0[3],
        ]
    }
}
