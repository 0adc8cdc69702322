//! Experiment drivers shared by the CLI and the acceptance harness.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snmode_core::data::Dataset;
use snmode_core::field::StableField;
use snmode_core::geometry::ManifoldKind;
use snmode_core::nets::Architecture;
use snmode_core::solve::{self, observed_orders, Method, SolveConfig, Stepper, TwoPlaneRotation};
use snmode_core::train::{init_field, objective_grad, Objective, TrainConfig, Which};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Equilibrium defect
// ---------------------------------------------------------------------------

/// Settings of the equilibrium-defect experiment on the plane.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DefectSetup {
    pub manifold: ManifoldKind,
    pub arch: Architecture,
    pub alpha: f64,
    pub dt: f64,
    pub steps: usize,
    /// Minimum `‖h(x_e)‖`; initializations below it are redrawn.
    pub min_h: f64,
    /// Radius of the ball around `x_e` a rollout must leave.
    pub radius: f64,
}

impl Default for DefectSetup {
    fn default() -> Self {
        Self { manifold: ManifoldKind::Euclidean(2), arch: defect_arch(), alpha: 0.1, dt: 0.01, steps: 100, min_h: 0.1, radius: 0.01 }
    }
}

fn defect_arch() -> Architecture {
    Architecture {
        h_hidden: vec![16, 16],
        feat_hidden: vec![16],
        feat_out: 4,
        icnn_hidden: vec![16],
        ..Architecture::default()
    }
}

/// A random field centered at the manifold's origin with `‖h(x_e)‖ ≥ min_h`,
/// correction disabled.
pub fn defect_field(seed: u64, setup: &DefectSetup) -> Result<StableField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let goal = setup.manifold.origin();
        let mut f = StableField::new(setup.manifold.clone(), goal, setup.arch.clone(), setup.alpha, 0.01, &mut rng)?;
        if norm(&f.h_goal()) >= setup.min_h {
            f.correction = false;
            return Ok(f);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Euler rollout with the `Exp` method.
pub fn euler_rollout(field: &StableField, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let cfg = SolveConfig::new(Method::Exp, Stepper::Euler, steps, dt * steps as f64);
    Ok(solve::solve(&field.manifold, |x| field.stable_field(x), x0, &field.goal, &cfg)?.points)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct DefectTrial {
    pub seed: u64,
    pub h_goal_norm: f64,
    pub f_goal_uncorrected: f64,
    pub f_goal_corrected: f64,
    /// First step at which the uncorrected rollout from `x_e` is farther
    /// than `radius` from `x_e`.
    pub exit_step: Option<usize>,
    /// Whether every corrected rollout point equals `x_e` bit for bit.
    pub corrected_stays: bool,
}

pub fn defect_trial(seed: u64, setup: &DefectSetup) -> Result<DefectTrial> {
    let mut f = defect_field(seed, setup)?;
    let xe = f.goal.clone();
    let f_unc = norm(&f.stable_field(&xe));
    let unc = euler_rollout(&f, &xe, setup.dt, setup.steps)?;
    let exit_step = unc.iter().position(|p| f.manifold.distance(p, &xe) > setup.radius);
    f.correction = true;
    f.refresh();
    let f_cor = norm(&f.stable_field(&xe));
    let cor = euler_rollout(&f, &xe, setup.dt, setup.steps)?;
    let corrected_stays = cor.iter().all(|p| p.iter().zip(&xe).all(|(a, b)| a.to_bits() == b.to_bits()));
    Ok(DefectTrial { seed, h_goal_norm: norm(&f.h_goal()), f_goal_uncorrected: f_unc, f_goal_corrected: f_cor, exit_step, corrected_stays })
}

// ---------------------------------------------------------------------------
// Solver benchmark
// ---------------------------------------------------------------------------

/// Test fields with closed-form flows.
#[derive(Clone, Debug)]
pub enum BenchField {
    /// Rotation of S³ in two orthogonal planes.
    Rotation(TwoPlaneRotation),
    /// `Ẋ = AX + XAᵀ` on SPD(2), flow `e^{tA} X₀ e^{tAᵀ}`.
    Congruence([f64; 4]),
    /// `ẋ = -rate·x` on ℝⁿ.
    Linear { n: usize, rate: f64 },
}

impl BenchField {
    /// Parse `manifold` and a field spec: `two-plane[:w1,w2]` or
    /// `geodesic` on S3, `congruence[:a,b,c,d]` on SPD2, `linear[:rate]` on
    /// R<n>. An empty spec picks the manifold's default.
    pub fn parse(manifold: &str, spec: &str) -> Result<Self> {
        let m = ManifoldKind::parse(manifold)?;
        let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
        let nums = |n: usize| -> Result<Option<Vec<f64>>> {
            if args.is_empty() {
                return Ok(None);
            }
            let v: Vec<f64> = args
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Usage(format!("field arguments {args:?}: {e}")))?;
            if v.len() != n {
                return Err(Error::Usage(format!("field {name:?} takes {n} numbers, got {}", v.len())));
            }
            Ok(Some(v))
        };
        match (&m, name) {
            (ManifoldKind::UnitQuaternion, "" | "two-plane") => {
                let w = nums(2)?.unwrap_or(vec![1.0, 2.3]);
                Ok(BenchField::Rotation(TwoPlaneRotation { w1: w[0], w2: w[1] }))
            }
            (ManifoldKind::UnitQuaternion, "geodesic") => Ok(BenchField::Rotation(TwoPlaneRotation { w1: 1.0, w2: 1.0 })),
            (ManifoldKind::Spd2, "" | "congruence") => {
                let a = nums(4)?.unwrap_or(vec![-0.3, 0.8, 0.2, 0.1]);
                Ok(BenchField::Congruence([a[0], a[1], a[2], a[3]]))
            }
            (ManifoldKind::Euclidean(n), "" | "linear") => Ok(BenchField::Linear { n: *n, rate: nums(1)?.map_or(1.0, |v| v[0]) }),
            _ => Err(Error::Usage(format!("no field {spec:?} on {manifold}; see `solver-bench --help`"))),
        }
    }

    pub fn manifold(&self) -> ManifoldKind {
        match self {
            BenchField::Rotation(_) => ManifoldKind::UnitQuaternion,
            BenchField::Congruence(_) => ManifoldKind::Spd2,
            BenchField::Linear { n, .. } => ManifoldKind::Euclidean(*n),
        }
    }

    pub fn start(&self) -> Vec<f64> {
        match self {
            BenchField::Rotation(_) => vec![0.6, 0.0, 0.8, 0.0],
            BenchField::Congruence(_) => vec![1.5, 0.3, 0.8],
            BenchField::Linear { n, .. } => (0..*n).map(|i| 1.0 - 0.25 * i as f64).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            BenchField::Rotation(r) => r.field(x),
            BenchField::Congruence(a) => {
                // A X + X Aᵀ with X = [[x0, x1], [x1, x2]].
                let ax = [a[0] * x[0] + a[1] * x[1], a[0] * x[1] + a[1] * x[2], a[2] * x[0] + a[3] * x[1], a[2] * x[1] + a[3] * x[2]];
                vec![2.0 * ax[0], ax[1] + ax[2], 2.0 * ax[3]]
            }
            BenchField::Linear { rate, .. } => x.iter().map(|c| -rate * c).collect(),
        }
    }

    pub fn flow(&self, x0: &[f64], t: f64) -> Vec<f64> {
        match self {
            BenchField::Rotation(r) => r.flow(x0, t),
            BenchField::Congruence(a) => {
                let e = expm2([a[0] * t, a[1] * t, a[2] * t, a[3] * t]);
                // E X Eᵀ.
                let ex = [e[0] * x0[0] + e[1] * x0[1], e[0] * x0[1] + e[1] * x0[2], e[2] * x0[0] + e[3] * x0[1], e[2] * x0[1] + e[3] * x0[2]];
                vec![ex[0] * e[0] + ex[1] * e[1], ex[0] * e[2] + ex[1] * e[3], ex[2] * e[2] + ex[3] * e[3]]
            }
            BenchField::Linear { rate, .. } => x0.iter().map(|c| c * (-rate * t).exp()).collect(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BenchField::Rotation(r) => format!("rotation({}, {})", r.w1, r.w2),
            BenchField::Congruence(a) => format!("congruence{a:?}"),
            BenchField::Linear { rate, .. } => format!("linear({rate})"),
        }
    }
}

/// Exponential of a general 2×2 matrix `[a, b; c, d]`, row-major.
pub fn expm2(m: [f64; 4]) -> [f64; 4] {
    let mu = 0.5 * (m[0] + m[3]);
    let disc = 0.25 * (m[0] - m[3]).powi(2) + m[1] * m[2];
    let (c, s) = if disc > 0.0 {
        let d = disc.sqrt();
        (d.cosh(), d.sinh() / d)
    } else if disc < 0.0 {
        let d = (-disc).sqrt();
        (d.cos(), d.sin() / d)
    } else {
        (1.0, 1.0)
    };
    let g = mu.exp();
    [g * (c + s * (m[0] - mu)), g * s * m[1], g * s * m[2], g * (c + s * (m[3] - mu))]
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub stepper: Stepper,
    pub steps: usize,
    pub error: f64,
    /// Observed order against the previous row of the same method and
    /// stepper.
    pub order: Option<f64>,
    pub seconds: f64,
}

/// Endpoint error against the closed-form flow for every method and
/// stepper at each step count. `TS` uses the start point as reference.
pub fn solver_bench(field: &BenchField, horizon: f64, steps: &[usize]) -> Result<Vec<BenchRow>> {
    let m = field.manifold();
    let x0 = field.start();
    let exact = field.flow(&x0, horizon);
    let mut rows = Vec::new();
    for method in [Method::Ts, Method::Exp, Method::Dc] {
        for stepper in [Stepper::Euler, Stepper::Rk4] {
            let mut errs = Vec::new();
            for &n in steps {
                let cfg = SolveConfig::new(method, stepper, n, horizon);
                let t0 = Instant::now();
                let tr = solve::solve(&m, |x| field.eval(x), &x0, &x0, &cfg)?;
                let seconds = t0.elapsed().as_secs_f64();
                let error = m.distance(tr.last(), &exact);
                errs.push(error);
                let order = (errs.len() > 1).then(|| observed_orders(&errs[errs.len() - 2..])[0]);
                rows.push(BenchRow { method, stepper, steps: n, error, order, seconds });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

/// Median and interquartile range of a sample.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let r = p * (v.len() - 1) as f64;
            let (i, fr) = (r.floor() as usize, r.fract());
            if i + 1 < v.len() {
                v[i] * (1.0 - fr) + v[i + 1] * fr
            } else {
                v[i]
            }
        };
        Self { median: q(0.5), q1: q(0.25), q3: q(0.75) }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Wall time of `reps` gradient evaluations of `obj` on the first `batch`
/// demos, after one warm-up call.
pub fn time_objective(field: &StableField, obj: Objective, ds: &Dataset, batch: usize, dt: f64, reps: usize) -> Result<Vec<f64>> {
    let demos: Vec<&[Vec<f64>]> = ds.demos.iter().take(batch.max(1)).map(|d| &d.points[..]).collect();
    objective_grad(field, obj, &demos, dt)?;
    (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            let (loss, _) = objective_grad(field, obj, &demos, dt)?;
            std::hint::black_box(loss);
            Ok(t0.elapsed().as_secs_f64())
        })
        .collect()
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct StageTiming {
    pub shot: usize,
    pub batch: usize,
    pub reps: usize,
    pub base: Summary,
    pub stable: Summary,
}

impl StageTiming {
    pub fn ratio(&self) -> f64 {
        self.base.median / self.stable.median
    }
}

/// Per-step cost of the stage-1 objective (multiple shooting through the
/// base field) against the stage-3 objective (the same through the stable
/// field) at equal shot length and batch.
pub fn stage_timing(ds: &Dataset, cfg: &TrainConfig, shot: usize, reps: usize) -> Result<StageTiming> {
    let field = init_field(ds, cfg)?;
    let dt = cfg.dt.unwrap_or(ds.dt());
    let ms = |which| Objective::MultiShoot { which, shot, lambda: cfg.lambda_ms, solver: cfg.solver };
    let base = time_objective(&field, ms(Which::Base), ds, cfg.batch, dt, reps)?;
    let stable = time_objective(&field, ms(Which::Stable), ds, cfg.batch, dt, reps)?;
    Ok(StageTiming { shot, batch: cfg.batch.min(ds.demos.len()), reps, base: Summary::of(&base), stable: Summary::of(&stable) })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ScalingRow {
    pub copies: usize,
    pub ambient_dim: usize,
    pub step: Summary,
    /// Median relative to the first row.
    pub growth: f64,
}

/// Stage-3 gradient cost on `(ℝ³×S³)^k` for each `k`.
pub fn product_scaling(copies: &[usize], cfg: &TrainConfig, downsample: usize, reps: usize) -> Result<Vec<ScalingRow>> {
    let mut rows: Vec<ScalingRow> = Vec::new();
    for &k in copies {
        let m = ManifoldKind::stacked_pose(k);
        let ds = snmode_core::data::generate("s-curve", &m, cfg.seed)?.downsample(downsample);
        let field = init_field(&ds, cfg)?;
        let obj = Objective::MultiShoot { which: Which::Stable, shot: cfg.shot_max, lambda: cfg.lambda_ms, solver: cfg.solver };
        let t = time_objective(&field, obj, &ds, cfg.batch, ds.dt(), reps)?;
        let step = Summary::of(&t);
        let growth = rows.first().map_or(1.0, |r| step.median / r.step.median);
        rows.push(ScalingRow { copies: k, ambient_dim: m.ambient_dim(), step, growth });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm2_matches_series() {
        let a = [-0.3, 0.8, 0.2, 0.1];
        let mut term = [1.0, 0.0, 0.0, 1.0];
        let mut sum = term;
        for k in 1..30 {
            term = [
                (term[0] * a[0] + term[1] * a[2]) / k as f64,
                (term[0] * a[1] + term[1] * a[3]) / k as f64,
                (term[2] * a[0] + term[3] * a[2]) / k as f64,
                (term[2] * a[1] + term[3] * a[3]) / k as f64,
            ];
            for j in 0..4 {
                sum[j] += term[j];
            }
        }
        for (b, e) in [a, [0.0, -1.0, 1.0, 0.0], [0.5, 1.0, 0.0, 0.5]].iter().zip([sum, [1.0f64.cos(), -1.0f64.sin(), 1.0f64.sin(), 1.0f64.cos()], [0.5f64.exp(), 0.5f64.exp(), 0.0, 0.5f64.exp()]]) {
            let got = expm2(*b);
            for j in 0..4 {
                assert!((got[j] - e[j]).abs() < 1e-12, "{b:?}: {got:?} vs {e:?}");
            }
        }
    }

    #[test]
    fn bench_flows_solve_their_fields() {
        for (m, spec) in [("S3", "two-plane"), ("S3", "geodesic"), ("SPD2", ""), ("R2", "linear:0.7")] {
            let f = BenchField::parse(m, spec).unwrap();
            let x0 = f.start();
            let h = 1e-6;
            let (a, b) = (f.flow(&x0, 0.3 + h), f.flow(&x0, 0.3 - h));
            let x = f.flow(&x0, 0.3);
            f.manifold().validate(&x).unwrap();
            let v = f.eval(&x);
            for j in 0..x.len() {
                assert!(((a[j] - b[j]) / (2.0 * h) - v[j]).abs() < 1e-7, "{m} {spec}");
            }
        }
        assert!(BenchField::parse("S3", "congruence").is_err());
        assert!(BenchField::parse("S3", "two-plane:1").is_err());
    }

    #[test]
    fn quartiles() {
        let s = Summary::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(Summary::of(&[1.0, 2.0]).median, 1.5);
    }
}
