//! Demonstration datasets: synthetic planar shapes, their transfer onto
//! curved manifolds, and validation.
//!
//! A planar demo is turned into a velocity sequence `vᵢ = xᵢ₊₁ − xᵢ`,
//! lifted to ℝ³, amplified and integrated backwards in time from the goal
//! with the dynamic-chart RK4 solver. The velocity is read in the
//! coordinate frame of the active chart. The result is reversed so every
//! demo ends exactly at the goal.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Factor, ManifoldKind};
use crate::math;
use crate::solve::{solve_dc_from, ChartField, Method, SolveConfig, Stepper, Trajectory};

/// Samples per synthetic demo.
pub const DEMO_SAMPLES: usize = 1001;
/// Goal coincidence tolerance (geodesic distance).
pub const GOAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarShape {
    pub name: String,
    pub demos: Vec<Vec<[f64; 2]>>,
}

impl PlanarShape {
    /// Largest pairwise distance over all samples of all demos.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<[f64; 2]> = self.demos.iter().flatten().copied().collect();
        let mut d2: f64 = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let dx = pts[i][0] - pts[j][0];
                let dy = pts[i][1] - pts[j][1];
                d2 = d2.max(dx * dx + dy * dy);
            }
        }
        math::sqrt(d2)
    }
}

/// Names accepted by [`synth_shape`].
pub const SHAPE_NAMES: [&str; 6] = ["s-curve", "w-curve", "bent-line", "spiral", "multi", "line"];

/// Time-to-path profile: fast start, exponential approach to the goal.
fn profile(tau: f64, k: f64) -> f64 {
    (1.0 - math::exp(-k * tau)) / (1.0 - math::exp(-k))
}

/// Base curve `p(u)`, `u ∈ [0, 1]`, ending at the origin. `branch` selects
/// the mirror image for the two-branch shape.
fn curve(name: &str, u: f64, branch: f64) -> Option<[f64; 2]> {
    use core::f64::consts::PI;
    let r = 1.0 - u;
    Some(match name {
        "s-curve" => [0.35 * math::sin(2.0 * PI * u), r],
        "w-curve" => [r, 0.2 * math::cos(4.0 * PI * u) - 0.2],
        "bent-line" => [r, 0.8 * r * r - 0.3 * math::sin(PI * u)],
        "spiral" => {
            let th = 3.0 * PI * u;
            [0.5 * r * math::cos(th), 0.5 * r * math::sin(th)]
        }
        "multi" => [branch * 0.35 * math::sin(2.0 * PI * u), r],
        "line" => [r, 0.0],
        _ => return None,
    })
}

/// A synthetic shape with four demos of [`DEMO_SAMPLES`] points,
/// normalized to unit diameter and sharing the final point `(0, 0)`.
pub fn synth_shape(name: &str, seed: u64) -> Option<PlanarShape> {
    curve(name, 0.0, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name.bytes().fold(0u64, |h, b| h.wrapping_mul(31) ^ b as u64));
    let n = DEMO_SAMPLES;
    let mut demos = Vec::with_capacity(4);
    for d in 0..4 {
        let branch = if d < 2 { 1.0 } else { -1.0 };
        // Perturbations vanish at u = 1 so the endpoint is shared exactly.
        let jitter = if name == "line" { 0.0 } else { 1.0 };
        let a = [jitter * 0.06 * (rng.random::<f64>() - 0.5), jitter * 0.06 * (rng.random::<f64>() - 0.5)];
        let b = jitter * 0.04 * (rng.random::<f64>() - 0.5);
        let k = 5.0 + 0.5 * (rng.random::<f64>() - 0.5);
        let demo = (0..n)
            .map(|i| {
                let tau = i as f64 / (n - 1) as f64;
                let u = if i + 1 == n { 1.0 } else { profile(tau, k) };
                let p = curve(name, u, branch).expect("known shape");
                let w = 1.0 - u;
                let bump = b * math::sin(core::f64::consts::PI * u);
                [p[0] + a[0] * w + bump, p[1] + a[1] * w - bump]
            })
            .collect();
        demos.push(demo);
    }
    let mut shape = PlanarShape { name: name.to_string(), demos };
    let s = 1.0 / shape.diameter();
    for demo in &mut shape.demos {
        for p in demo.iter_mut() {
            p[0] *= s;
            p[1] *= s;
        }
    }
    // The endpoint is (0, 0) up to the rounding of sin(2π), cos(4π)−1, ….
    for demo in &mut shape.demos {
        *demo.last_mut().expect("non-empty") = [0.0, 0.0];
    }
    Some(shape)
}

/// Every synthetic shape except the straight line used in tests.
pub fn synth_shapes(seed: u64) -> Vec<PlanarShape> {
    SHAPE_NAMES
        .iter()
        .filter(|&&n| n != "line")
        .map(|n| synth_shape(n, seed).expect("known shape"))
        .collect()
}

/// Piecewise-linear interpolation of `vᵢ = xᵢ₊₁ − xᵢ` on `[0, N−1]`,
/// clamped outside.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub v: Vec<[f64; 3]>,
}

impl VelocityField {
    pub fn from_demo(demo: &[[f64; 2]]) -> Self {
        assert!(demo.len() >= 2, "a demo needs at least two samples");
        let v = demo.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], 0.0]).collect();
        Self { v }
    }

    pub fn eval(&self, t: f64) -> [f64; 3] {
        let last = self.v.len() - 1;
        if !(t > 0.0) {
            return self.v[0];
        }
        if t >= last as f64 {
            return self.v[last];
        }
        let i = t as usize;
        let s = t - i as f64;
        let (a, b) = (self.v[i], self.v[i + 1]);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub amplification: f64,
    /// Manifold units per planar unit, applied before amplification.
    pub scale: f64,
    /// Time between samples of the generated demos.
    pub dt: f64,
    /// RK4 steps per sample interval.
    pub substeps: usize,
    pub chart_radius: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { amplification: 20.0, scale: 0.05, dt: 0.01, substeps: 1, chart_radius: 2.0 }
    }
}

/// `dζ/dτ = sign·a·s·v(τ₀ + sign·τ)` in every chart, embedded into the
/// chart coordinates of each factor.
struct ChartVelocity<'a> {
    manifold: &'a ManifoldKind,
    fields: Vec<VelocityField>,
    gain: f64,
    reverse_from: Option<f64>,
}

impl ChartField for ChartVelocity<'_> {
    fn chart_velocity(&self, t: f64, _chart: &[u8], z: &[f64], _x: &[f64]) -> Vec<f64> {
        let (tt, sign) = match self.reverse_from {
            Some(n) => (n - t, -1.0),
            None => (t, 1.0),
        };
        let mut out = vec![0.0; z.len()];
        let mut off = 0;
        for (f, vf) in self.manifold.factors().into_iter().zip(&self.fields) {
            let v = vf.eval(tt);
            let dim = f.intrinsic_dim();
            for j in 0..dim.min(3) {
                out[off + j] = sign * self.gain * v[j];
            }
            off += dim;
        }
        out
    }
}

fn factor_supported(f: Factor) -> bool {
    match f {
        Factor::Euclidean(n) => (1..=3).contains(&n),
        _ => true,
    }
}

/// Demonstrations on one manifold sharing a goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub manifold: ManifoldKind,
    pub goal: Vec<f64>,
    pub demos: Vec<Trajectory>,
}

impl Dataset {
    /// Shared manifold, shared length, valid points, common goal.
    pub fn validate(&self) -> Result<()> {
        if self.demos.is_empty() {
            return Err(Error::InvalidDataset("no demonstrations".into()));
        }
        self.manifold.validate_tol(&self.goal, 1e-6)?;
        let n = self.demos[0].len();
        for (k, d) in self.demos.iter().enumerate() {
            if d.manifold != self.manifold {
                return Err(Error::InvalidDataset(alloc::format!("demo {k} is on {}", d.manifold.name())));
            }
            if d.len() != n || n < 2 {
                return Err(Error::InvalidDataset(alloc::format!("demo {k} has {} samples, expected {n} ≥ 2", d.len())));
            }
            for p in &d.points {
                self.manifold.validate_tol(p, 1e-6)?;
            }
        }
        let dists: Vec<f64> = self.demos.iter().map(|d| self.manifold.distance(d.last(), &self.goal)).collect();
        if dists.iter().any(|&d| !(d <= GOAL_TOL)) {
            return Err(Error::GoalMismatch(dists));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.demos[0].dt
    }

    /// Keep every `stride`-th sample (the goal sample is always kept when
    /// `stride` divides the length minus one).
    pub fn downsample(&self, stride: usize) -> Self {
        let demos = self
            .demos
            .iter()
            .map(|d| Trajectory {
                manifold: d.manifold.clone(),
                dt: d.dt * stride as f64,
                points: d.points.iter().step_by(stride).cloned().collect(),
            })
            .collect();
        Self { demos, ..self.clone() }
    }

    /// Flip quaternion blocks so consecutive samples share a hemisphere.
    /// Returns the number of samples flipped.
    pub fn repair_hemispheres(&mut self) -> usize {
        let mut flips = 0;
        for d in &mut self.demos {
            for i in 1..d.points.len() {
                let (head, tail) = d.points.split_at_mut(i);
                if self.manifold.align_hemisphere(&head[i - 1], &mut tail[0]) {
                    flips += 1;
                }
            }
        }
        flips
    }

    /// Longest geodesic distance between two samples of the same demo.
    pub fn max_demo_diameter(&self) -> f64 {
        self.demos
            .iter()
            .map(|d| {
                let mut best: f64 = 0.0;
                for i in (0..d.len()).step_by(5) {
                    for j in (i..d.len()).step_by(5) {
                        best = best.max(self.manifold.distance(&d.points[i], &d.points[j]));
                    }
                }
                best
            })
            .fold(0.0, f64::max)
    }
}

fn transfer_config(cfg: &TransferConfig, steps: usize, reverse: bool) -> SolveConfig {
    let _ = reverse;
    SolveConfig {
        chart_radius: cfg.chart_radius,
        ..SolveConfig::new(Method::Dc, Stepper::Rk4, steps * cfg.substeps, steps as f64)
    }
}

/// Transfer per-factor planar shapes onto `manifold`. Factor `j` uses
/// `shapes[j % shapes.len()]`; demo `k` of the result combines demo `k` of
/// every shape.
pub fn transfer_shapes(shapes: &[&PlanarShape], manifold: &ManifoldKind, goal: &[f64], cfg: &TransferConfig) -> Result<Dataset> {
    manifold.validate(goal)?;
    let factors = manifold.factors();
    if let Some(f) = factors.iter().find(|f| !factor_supported(**f)) {
        return Err(Error::InvalidConfig(alloc::format!("cannot transfer planar shapes onto {f:?}")));
    }
    let n_demos = shapes.iter().map(|s| s.demos.len()).min().unwrap_or(0);
    let chart0 = manifold.best_chart(goal);
    let mut demos = Vec::with_capacity(n_demos);
    for k in 0..n_demos {
        let fields: Vec<VelocityField> = (0..factors.len())
            .map(|j| VelocityField::from_demo(&shapes[j % shapes.len()].demos[k]))
            .collect();
        let steps = fields[0].v.len();
        if fields.iter().any(|f| f.v.len() != steps) {
            return Err(Error::InvalidDataset("shapes differ in sample count".into()));
        }
        let field = ChartVelocity {
            manifold,
            fields,
            gain: cfg.amplification * cfg.scale,
            reverse_from: Some(steps as f64),
        };
        let sol = solve_dc_from(manifold, &field, goal, chart0.clone(), &transfer_config(cfg, steps, true))?;
        let mut points: Vec<Vec<f64>> = sol.points.into_iter().step_by(cfg.substeps).collect();
        points.reverse();
        demos.push(Trajectory { manifold: manifold.clone(), dt: cfg.dt, points });
    }
    let name = shapes.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join("+");
    let ds = Dataset { name, manifold: manifold.clone(), goal: goal.to_vec(), demos };
    ds.validate()?;
    Ok(ds)
}

pub fn transfer_to_manifold(shape: &PlanarShape, manifold: &ManifoldKind, goal: &[f64], cfg: &TransferConfig) -> Result<Dataset> {
    transfer_shapes(&[shape], manifold, goal, cfg)
}

/// Integrate the forward (non-reversed) field from the start of generated
/// demo `k`, in the chart the generator ended in, and return the distance
/// of the endpoint to the goal.
pub fn reintegration_error(shapes: &[&PlanarShape], ds: &Dataset, k: usize, cfg: &TransferConfig) -> Result<f64> {
    let m = &ds.manifold;
    let fields: Vec<VelocityField> = (0..m.factors().len())
        .map(|j| VelocityField::from_demo(&shapes[j % shapes.len()].demos[k]))
        .collect();
    let steps = fields[0].v.len();
    let field = ChartVelocity { manifold: m, fields, gain: cfg.amplification * cfg.scale, reverse_from: None };
    // Replay the generator to find its final chart.
    let back = ChartVelocity {
        manifold: m,
        fields: field.fields.clone(),
        gain: field.gain,
        reverse_from: Some(steps as f64),
    };
    let sol = solve_dc_from(m, &back, &ds.goal, m.best_chart(&ds.goal), &transfer_config(cfg, steps, true))?;
    let chart = sol.charts.last().expect("non-empty").clone();
    let fwd = solve_dc_from(m, &field, ds.demos[k].first(), chart, &transfer_config(cfg, steps, false))?;
    Ok(m.distance(fwd.points.last().expect("non-empty"), &ds.goal))
}

/// Default goal on each manifold: the identity quaternion, the identity
/// matrix, the origin.
pub fn default_goal(m: &ManifoldKind) -> Vec<f64> {
    m.origin()
}

/// Shape and manifold by name, with the default goal and transfer config.
pub fn generate(shape: &str, manifold: &ManifoldKind, seed: u64) -> Result<Dataset> {
    let s = synth_shape(shape, seed).ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown shape {shape:?}")))?;
    let cfg = TransferConfig::default();
    let factors = manifold.factors().len();
    if factors > 1 {
        // Give the factors different shapes so the tasks are distinct.
        let others: Vec<PlanarShape> = SHAPE_NAMES
            .iter()
            .filter(|&&n| n != shape && n != "line")
            .map(|n| synth_shape(n, seed).expect("known shape"))
            .collect();
        let mut all: Vec<&PlanarShape> = vec![&s];
        all.extend(others.iter());
        let use_: Vec<&PlanarShape> = (0..factors).map(|j| all[j % all.len()]).collect();
        return transfer_shapes(&use_, manifold, &default_goal(manifold), &cfg);
    }
    transfer_to_manifold(&s, manifold, &default_goal(manifold), &cfg)
}
