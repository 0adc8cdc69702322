//! Staged training of a [`StableField`].
//!
//! 1. `g` alone: tangent pretraining, then multiple shooting with a
//!    linearly growing shot length.
//! 2. `V` alone: exponential decay along demonstrations and rollouts of `g`.
//! 3. Everything: multiple shooting on the assembled field `f`.
//!
//! The direct mode runs only the last objective from the initial
//! parameters. Wall-clock time comes from a [`Monitor`] so the core stays
//! free of `std`.

mod loss;

pub use loss::{
    eval_field, fragments, loss_lyapunov, loss_multishoot, loss_tangents, objective, objective_grad, objective_value,
    Objective, TrainSolver, Which, CONTINUITY_SMOOTHING,
};

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diff::AdamW;
use crate::error::{Error, Result};
use crate::field::StableField;
use crate::geometry::ManifoldKind;
use crate::math;
use crate::nets::{Architecture, Networks};
use crate::solve::{solve, Method, SolveConfig, Stepper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ThreeStage,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Tangents,
    MultiShoot,
    Lyapunov,
    FineTune,
    Direct,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Tangents => "tangents",
            Stage::MultiShoot => "multi-shoot",
            Stage::Lyapunov => "lyapunov",
            Stage::FineTune => "fine-tune",
            Stage::Direct => "direct",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub enabled: bool,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { enabled: true, epochs: 0, lr: 1e-3 }
    }
}

impl Schedule {
    pub fn new(epochs: usize, lr: f64) -> Self {
        Self { enabled: true, epochs, lr }
    }

    fn active_epochs(&self) -> usize {
        if self.enabled {
            self.epochs
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Decay rate of the certificate, 1/time.
    pub alpha: f64,
    /// Weight of the squared-distance floor in `V`.
    pub epsilon: f64,
    pub arch: Architecture,
    /// Keep every `downsample`-th demo sample.
    pub downsample: usize,
    /// Time per sample; the dataset's own spacing when `None`.
    pub dt: Option<f64>,
    /// Demonstrations per optimizer step (capped by the dataset).
    pub batch: usize,
    pub lambda_ms: f64,
    pub shot_min: usize,
    pub shot_max: usize,
    pub weight_decay: f64,
    pub solver: TrainSolver,
    pub tangents: Schedule,
    pub multishoot: Schedule,
    pub lyapunov: Schedule,
    /// Regenerate the stage-2 rollouts of `g` every this many epochs.
    pub rollout_refresh: usize,
    /// Geodesic radius of the random offsets of stage-2 rollout starts.
    pub rollout_jitter: f64,
    /// Stage-2 decay is enforced on windows of this many samples starting
    /// at every `lyapunov_stride`-th sample; 0 uses whole trajectories.
    pub lyapunov_window: usize,
    pub lyapunov_stride: usize,
    pub finetune: Schedule,
    pub direct: Schedule,
    /// Training points checked for the decay certificate each fine-tuning
    /// epoch.
    pub certificate_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::ThreeStage,
            alpha: 0.5,
            epsilon: 0.01,
            arch: Architecture {
                h_hidden: alloc::vec![32, 32],
                feat_hidden: alloc::vec![32],
                feat_out: 8,
                icnn_hidden: alloc::vec![32, 32],
                lipschitz: 2.0,
                smoothing: 0.1,
            },
            downsample: 1,
            dt: None,
            batch: 4,
            lambda_ms: 1.0,
            shot_min: 5,
            shot_max: 40,
            weight_decay: 1e-4,
            solver: TrainSolver::default(),
            tangents: Schedule::new(200, 1e-2),
            multishoot: Schedule::new(150, 3e-3),
            lyapunov: Schedule::new(150, 3e-3),
            rollout_refresh: 10,
            rollout_jitter: 0.05,
            lyapunov_window: 20,
            lyapunov_stride: 1,
            finetune: Schedule::new(60, 1e-3),
            direct: Schedule::new(300, 3e-3),
            certificate_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha >= 0.0) || !(self.epsilon > 0.0) {
            return bad(alloc::format!("need α ≥ 0 and ε > 0, got {} and {}", self.alpha, self.epsilon));
        }
        if !(self.lambda_ms >= 0.0) {
            return bad(alloc::format!("λ_MS must be ≥ 0, got {}", self.lambda_ms));
        }
        if self.shot_min < 2 || self.shot_min > self.shot_max {
            return bad(alloc::format!("need 2 ≤ shot_min ≤ shot_max, got {}..{}", self.shot_min, self.shot_max));
        }
        if self.batch == 0 || self.downsample == 0 || self.rollout_refresh == 0 || self.lyapunov_stride == 0 {
            return bad("batch, downsample, rollout_refresh and lyapunov_stride must be ≥ 1".into());
        }
        if matches!(self.dt, Some(dt) if !(dt > 0.0)) {
            return bad("dt must be positive".into());
        }
        for s in [&self.tangents, &self.multishoot, &self.lyapunov, &self.finetune, &self.direct] {
            if !(s.lr >= 0.0) {
                return bad(alloc::format!("learning rates must be ≥ 0, got {}", s.lr));
            }
        }
        self.solver.validate()
    }

    /// Check against a (downsampled) dataset.
    pub fn validate_for(&self, ds: &Dataset) -> Result<()> {
        self.validate()?;
        let n = ds.demos[0].len() - 1;
        if self.shot_min > n {
            return Err(Error::InvalidConfig(alloc::format!("shot_min {} exceeds the {n} demo intervals", self.shot_min)));
        }
        Ok(())
    }

    /// Shot length at epoch `e` of `epochs`.
    pub fn shot_at(&self, e: usize, epochs: usize) -> usize {
        let p = if epochs > 1 { e as f64 / (epochs - 1) as f64 } else { 0.0 };
        math::round(self.shot_min as f64 + p * (self.shot_max - self.shot_min) as f64) as usize
    }

    fn optimizer(&self, lr: f64) -> AdamW {
        AdamW { lr, weight_decay: self.weight_decay, ..AdamW::default() }
    }
}

/// One row of the per-epoch metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    /// Seconds since the stage started.
    pub wall: f64,
    /// Shot length, 0 when the stage does not shoot.
    pub shot: usize,
    pub certificate_violations: usize,
    /// Mean fraction of demo steps along which `V` does not increase.
    pub decay_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub stage_seconds: Vec<(Stage, f64)>,
    pub steps: usize,
}

/// Time source and progress sink.
pub trait Monitor {
    /// Seconds since an arbitrary origin.
    fn now(&self) -> f64 {
        0.0
    }
    fn epoch(&mut self, _m: &EpochMetrics) {}
}

/// A monitor without a clock.
pub struct Silent;

impl Monitor for Silent {}

/// Fresh field for a dataset, seeded from the config.
pub fn init_field(ds: &Dataset, cfg: &TrainConfig) -> Result<StableField> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    StableField::new(ds.manifold.clone(), ds.goal.clone(), cfg.arch.clone(), cfg.alpha, cfg.epsilon, &mut rng)
}

/// Parameters a stage may change.
#[derive(Clone, Copy)]
enum Group {
    H,
    Potential,
    All,
}

impl Group {
    fn contains(self, name: &str) -> bool {
        match self {
            Group::H => Networks::is_h_param(name),
            Group::Potential => !Networks::is_h_param(name),
            Group::All => true,
        }
    }
}

fn points(ds: &Dataset) -> Vec<&[Vec<f64>]> {
    ds.demos.iter().map(|d| &d.points[..]).collect()
}

struct Runner<'a, M: Monitor> {
    field: &'a mut StableField,
    cfg: &'a TrainConfig,
    monitor: &'a mut M,
    report: TrainReport,
    dt: f64,
}

impl<M: Monitor> Runner<'_, M> {
    /// One optimizer step on `batch`; returns the loss before the update.
    fn step(&mut self, stage: Stage, epoch: usize, obj: Objective, batch: &[&[Vec<f64>]], group: Group, lr: f64) -> Result<f64> {
        let (loss, grads) = objective_grad(self.field, obj, batch, self.dt)?;
        let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
        if !finite {
            return Err(Error::NonFinite(alloc::format!(
                "{stage} epoch {epoch}: loss {loss}, batch of {} trajectories starting at {:?}",
                batch.len(),
                batch.iter().map(|t| t[0].clone()).collect::<Vec<_>>()
            )));
        }
        let store = &self.field.nets.store;
        let masked: Vec<Option<Vec<f64>>> =
            store.iter().zip(grads).map(|(p, g)| group.contains(&p.name).then_some(g)).collect();
        self.field.nets.store.adamw_step(&masked, &self.cfg.optimizer(lr));
        self.field.nets.project_lipschitz();
        self.field.refresh();
        self.report.steps += 1;
        Ok(loss)
    }

    fn batches(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let b = self.cfg.batch.min(n).max(1);
        idx.chunks(b).map(|c| c.to_vec()).collect()
    }

    fn record(&mut self, m: EpochMetrics) {
        self.monitor.epoch(&m);
        self.report.metrics.push(m);
    }

    /// Shared loop for the stages that fit the demonstrations.
    fn fit(&mut self, ds: &Dataset, stage: Stage, sched: Schedule, group: Group, which: Option<Which>, ramp: bool) -> Result<()> {
        let epochs = sched.active_epochs();
        let t0 = self.monitor.now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (0x5eed_0000 + stage as u64));
        let demos = points(ds);
        let n = demos[0].len() - 1;
        for e in 0..epochs {
            let shot = match which {
                Some(_) if ramp => self.cfg.shot_at(e, epochs).min(n),
                Some(_) => self.cfg.shot_max.min(n),
                None => 0,
            };
            let obj = match which {
                Some(which) => {
                    Objective::MultiShoot { which, shot, lambda: self.cfg.lambda_ms, solver: self.cfg.solver }
                }
                None => Objective::Tangents,
            };
            let mut total = 0.0;
            let batches = self.batches(demos.len(), &mut rng);
            for b in &batches {
                let batch: Vec<&[Vec<f64>]> = b.iter().map(|&i| demos[i]).collect();
                total += self.step(stage, e, obj, &batch, group, sched.lr)?;
            }
            let certificate_violations = if which == Some(Which::Stable) {
                certificate_violations(self.field, &sample_points(ds, self.cfg.certificate_samples, &mut rng))
            } else {
                0
            };
            let m = EpochMetrics {
                stage,
                epoch: e,
                loss: total / batches.len() as f64,
                wall: self.monitor.now() - t0,
                shot,
                certificate_violations,
                decay_fraction: None,
            };
            self.record(m);
        }
        self.report.stage_seconds.push((stage, self.monitor.now() - t0));
        Ok(())
    }

    fn lyapunov(&mut self, ds: &Dataset) -> Result<()> {
        let sched = self.cfg.lyapunov;
        let epochs = sched.active_epochs();
        let t0 = self.monitor.now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x1a9_0000);
        let demos = points(ds);
        let mut rollouts = Vec::new();
        for e in 0..epochs {
            if e % self.cfg.rollout_refresh == 0 {
                rollouts = base_rollouts(self.field, ds, self.cfg, self.dt, &mut rng)?;
            }
            let mut total = 0.0;
            let batches = self.batches(demos.len(), &mut rng);
            for b in &batches {
                let mut batch: Vec<&[Vec<f64>]> = b.iter().map(|&i| demos[i]).collect();
                batch.extend(b.iter().map(|&i| &rollouts[i][..]));
                let obj = Objective::LyapunovWindows { len: self.cfg.lyapunov_window, stride: self.cfg.lyapunov_stride };
                total += self.step(Stage::Lyapunov, e, obj, &batch, Group::Potential, sched.lr)?;
            }
            let fr = decay_fractions(self.field, &demos);
            let m = EpochMetrics {
                stage: Stage::Lyapunov,
                epoch: e,
                loss: total / batches.len() as f64,
                wall: self.monitor.now() - t0,
                shot: 0,
                certificate_violations: 0,
                decay_fraction: Some(fr.iter().sum::<f64>() / fr.len() as f64),
            };
            self.record(m);
        }
        self.report.stage_seconds.push((Stage::Lyapunov, self.monitor.now() - t0));
        Ok(())
    }
}

/// Rollouts of `g` from jittered demo starts, one per demo, spanning the
/// demo duration.
fn base_rollouts(field: &StableField, ds: &Dataset, cfg: &TrainConfig, dt: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Vec<f64>>>> {
    let m = &field.manifold;
    let steps = ds.demos[0].len() - 1;
    let scfg = SolveConfig::new(cfg.solver.method, cfg.solver.stepper, steps, steps as f64 * dt);
    ds.demos
        .iter()
        .map(|d| {
            let x0 = if cfg.rollout_jitter > 0.0 { m.random_near(d.first(), rng, cfg.rollout_jitter) } else { d.first().to_vec() };
            Ok(solve(m, |x| field.base_field(x), &x0, &field.goal, &scfg)?.points)
        })
        .collect()
}

/// Fraction of steps along each trajectory where `V` does not increase.
pub fn decay_fractions(field: &StableField, trajs: &[&[Vec<f64>]]) -> Vec<f64> {
    trajs
        .iter()
        .map(|t| {
            let v: Vec<f64> = t.iter().map(|x| field.lyapunov_total(x)).collect();
            let ok = v.windows(2).filter(|w| w[1] <= w[0]).count();
            ok as f64 / (v.len() - 1).max(1) as f64
        })
        .collect()
}

/// Random demo samples (with replacement).
pub fn sample_points(ds: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    use rand::Rng;
    (0..n)
        .map(|_| {
            let d = &ds.demos[rng.random_range(0..ds.demos.len())];
            d.points[rng.random_range(0..d.len())].clone()
        })
        .collect()
}

/// Points where `L_f V + αV > 1e−9·max(1, V)`. Points on the exclusion set
/// are skipped.
pub fn certificate_violations(field: &StableField, pts: &[Vec<f64>]) -> usize {
    pts.iter()
        .filter(|x| {
            let Ok(v) = field.lyapunov(x) else { return false };
            let f = field.stable_field(x);
            match field.lie_derivative(x, &f) {
                Ok(l) => l + field.alpha * v > 1e-9 * v.max(1.0),
                Err(_) => false,
            }
        })
        .count()
}

/// Train `field` on `ds` (already downsampled) according to `cfg.mode`.
pub fn train(field: &mut StableField, ds: &Dataset, cfg: &TrainConfig, monitor: &mut impl Monitor) -> Result<TrainReport> {
    ds.validate()?;
    cfg.validate_for(ds)?;
    if field.manifold != ds.manifold {
        return Err(Error::InvalidConfig(alloc::format!(
            "field lives on {} but the dataset on {}",
            field.manifold.name(),
            ds.manifold.name()
        )));
    }
    let dt = cfg.dt.unwrap_or_else(|| ds.dt());
    let mut r = Runner { field, cfg, monitor, report: TrainReport::default(), dt };
    match cfg.mode {
        Mode::ThreeStage => {
            r.fit(ds, Stage::Tangents, cfg.tangents, Group::H, None, false)?;
            r.fit(ds, Stage::MultiShoot, cfg.multishoot, Group::H, Some(Which::Base), true)?;
            r.lyapunov(ds)?;
            r.fit(ds, Stage::FineTune, cfg.finetune, Group::All, Some(Which::Stable), false)?;
        }
        Mode::Direct => r.fit(ds, Stage::Direct, cfg.direct, Group::All, Some(Which::Stable), true)?,
    }
    Ok(r.report)
}

/// Stage 1 only: tangent pretraining and multiple shooting of `g`.
pub fn run_stage1(field: &mut StableField, ds: &Dataset, cfg: &TrainConfig, monitor: &mut impl Monitor) -> Result<TrainReport> {
    let c = TrainConfig { lyapunov: Schedule { enabled: false, ..cfg.lyapunov }, finetune: Schedule { enabled: false, ..cfg.finetune }, mode: Mode::ThreeStage, ..cfg.clone() };
    train(field, ds, &c, monitor)
}

/// Stage 2 only: fit `V` with `g` frozen.
pub fn run_stage2(field: &mut StableField, ds: &Dataset, cfg: &TrainConfig, monitor: &mut impl Monitor) -> Result<TrainReport> {
    let off = |s: Schedule| Schedule { enabled: false, ..s };
    let c = TrainConfig {
        tangents: off(cfg.tangents),
        multishoot: off(cfg.multishoot),
        finetune: off(cfg.finetune),
        mode: Mode::ThreeStage,
        ..cfg.clone()
    };
    train(field, ds, &c, monitor)
}

/// Stage 3 only: fine-tune the assembled field.
pub fn run_stage3(field: &mut StableField, ds: &Dataset, cfg: &TrainConfig, monitor: &mut impl Monitor) -> Result<TrainReport> {
    let off = |s: Schedule| Schedule { enabled: false, ..s };
    let c = TrainConfig {
        tangents: off(cfg.tangents),
        multishoot: off(cfg.multishoot),
        lyapunov: off(cfg.lyapunov),
        mode: Mode::ThreeStage,
        ..cfg.clone()
    };
    train(field, ds, &c, monitor)
}

pub fn run_direct(field: &mut StableField, ds: &Dataset, cfg: &TrainConfig, monitor: &mut impl Monitor) -> Result<TrainReport> {
    train(field, ds, &TrainConfig { mode: Mode::Direct, ..cfg.clone() }, monitor)
}

/// Root mean squared geodesic distance between each demo and the rollout
/// of the stable field from its first sample over its duration.
pub fn evaluate(field: &StableField, ds: &Dataset, method: Method, stepper: Stepper) -> Result<Vec<f64>> {
    evaluate_field(field, Which::Stable, ds, method, stepper)
}

/// [`evaluate`] for either field.
pub fn evaluate_field(field: &StableField, which: Which, ds: &Dataset, method: Method, stepper: Stepper) -> Result<Vec<f64>> {
    let m = &field.manifold;
    ds.demos
        .iter()
        .map(|d| {
            let steps = d.len() - 1;
            let cfg = SolveConfig::new(method, stepper, steps, d.duration());
            let f = |x: &[f64]| match which {
                Which::Base => field.base_field(x),
                Which::Stable => field.stable_field(x),
            };
            let tr = solve(m, f, d.first(), &field.goal, &cfg)?;
            Ok(trajectory_rmse(m, &d.points, &tr.points))
        })
        .collect()
}

/// Root mean squared pointwise geodesic distance over the common prefix.
pub fn trajectory_rmse(m: &ManifoldKind, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| math::powi(m.distance(x, y), 2)).sum();
    math::sqrt(s / n as f64)
}
