//! Training objectives, generic over the scalar type so the same code gives
//! plain values and tape gradients.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::field::{NetEval, StableField};
use crate::math;
use crate::real::Real;
use crate::solve::{solve_exp, solve_ts, Method, Pullback, SolveConfig, Stepper};

/// Which vector field a rollout follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    /// The equilibrium-corrected base field `g`.
    Base,
    /// The stable field `f`.
    Stable,
}

/// Solver used for differentiable rollouts. The dynamic-chart method is
/// evaluation-only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSolver {
    pub method: Method,
    pub stepper: Stepper,
}

impl Default for TrainSolver {
    fn default() -> Self {
        Self { method: Method::Exp, stepper: Stepper::Euler }
    }
}

impl TrainSolver {
    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Dc {
            return Err(Error::InvalidConfig("training rollouts need the Ts or Exp solver".into()));
        }
        Ok(())
    }
}

/// Smoothing of the continuity distance `√(d² + η²) − η`, which keeps
/// its gradient finite when a fragment lands exactly on the next node.
pub const CONTINUITY_SMOOTHING: f64 = 1e-6;

pub fn eval_field<S: Real>(field: &StableField, net: &impl NetEval<S>, which: Which, x: &[S]) -> Vec<S> {
    match which {
        Which::Base => field.base_field_with(net, x),
        Which::Stable => field.stable_field_with(net, x),
    }
}

fn sum<S: Real>(terms: impl IntoIterator<Item = S>) -> Option<S> {
    terms.into_iter().fold(None, |acc, t| Some(match acc {
        None => t,
        Some(a) => a + t,
    }))
}

fn zero<S: Real>(net: &impl NetEval<S>) -> S {
    net.constant(&[0.0])[0]
}

/// `(1/N) Σᵢ ‖g(xᵢ)·Δt − log_{xᵢ}(xᵢ₊₁)‖²`
pub fn loss_tangents<S: Real>(field: &StableField, net: &impl NetEval<S>, demo: &[Vec<f64>], dt: f64) -> Result<S> {
    if demo.len() < 2 {
        return Err(Error::InvalidDataset("tangent loss needs at least two samples".into()));
    }
    let m = &field.manifold;
    let n = demo.len() - 1;
    let mut terms = Vec::with_capacity(n);
    for w in demo.windows(2) {
        let u = m.log(&w[0], &w[1])?;
        let x = net.constant(&w[0]);
        let g = field.base_field_with(net, &x);
        let r = sum(g.iter().zip(&u).map(|(&gi, &ui)| (gi * dt - ui).square())).expect("non-empty point");
        terms.push(r);
    }
    Ok(sum(terms).expect("n ≥ 1") / n as f64)
}

/// Fragment start indices for shot length `shot` on a demo with `n`
/// intervals. The last fragment may be shorter.
pub fn fragments(n: usize, shot: usize) -> Vec<(usize, usize)> {
    let shot = shot.max(1);
    (0..n).step_by(shot).map(|s| (s, shot.min(n - s))).collect()
}

fn rollout<S: Real>(
    field: &StableField,
    net: &impl NetEval<S>,
    which: Which,
    x0: &[S],
    steps: usize,
    dt: f64,
    solver: TrainSolver,
) -> Result<Vec<Vec<S>>> {
    let cfg = SolveConfig {
        pullback: Pullback::Differential,
        ..SolveConfig::new(solver.method, solver.stepper, steps, steps as f64 * dt)
    };
    let f = |x: &[S]| eval_field(field, net, which, x);
    match solver.method {
        Method::Ts => solve_ts(&field.manifold, f, x0, &net.constant(&field.goal), &cfg),
        Method::Exp => solve_exp(&field.manifold, f, x0, &cfg),
        Method::Dc => Err(Error::InvalidConfig("training rollouts need the Ts or Exp solver".into())),
    }
}

/// Multiple-shooting loss
///
/// ```text
/// (1/N) Σₖ Σᵢ d(ξ̃ᵢ⁽ᵏ⁾, xᵢ⁽ᵏ⁾)² + λ/(K−1) Σₖ d(ξ̃_end⁽ᵏ⁾, x_start⁽ᵏ⁺¹⁾)
/// ```
///
/// Each fragment starts at the demo sample heading it; `N` counts all
/// compared samples, so a ragged last fragment carries its own length.
#[allow(clippy::too_many_arguments)]
pub fn loss_multishoot<S: Real>(
    field: &StableField,
    net: &impl NetEval<S>,
    which: Which,
    demo: &[Vec<f64>],
    shot: usize,
    lambda: f64,
    dt: f64,
    solver: TrainSolver,
) -> Result<S> {
    if demo.len() < 2 {
        return Err(Error::InvalidDataset("multiple shooting needs at least two samples".into()));
    }
    let m = &field.manifold;
    let frags = fragments(demo.len() - 1, shot);
    let k = frags.len();
    let mut data = Vec::new();
    let mut gaps = Vec::new();
    for (fi, &(start, len)) in frags.iter().enumerate() {
        let x0 = net.constant(&demo[start]);
        let xs = rollout(field, net, which, &x0, len, dt, solver)?;
        for (i, xi) in xs.iter().enumerate().skip(1) {
            data.push(m.dist_sq(xi, &net.constant(&demo[start + i]))?);
        }
        if fi + 1 < k && lambda != 0.0 {
            let d2 = m.dist_sq(&xs[len], &net.constant(&demo[start + len]))?;
            let eta = CONTINUITY_SMOOTHING;
            gaps.push((d2 + eta * eta).sqrt() - eta);
        }
    }
    let n = data.len() as f64;
    let mut loss = sum(data).expect("at least one sample") / n;
    if let Some(p) = sum(gaps) {
        loss = loss + p * (lambda / (k - 1) as f64);
    }
    Ok(loss)
}

/// `(1/N) Σᵢ ReLU(V(x̂ᵢ) − e^{−α i Δt} V(x̂₀))` over a fixed trajectory.
/// Samples on the cut locus of the goal are skipped.
pub fn loss_lyapunov<S: Real>(field: &StableField, net: &impl NetEval<S>, traj: &[Vec<f64>], dt: f64) -> Result<S> {
    if traj.len() < 2 {
        return Ok(zero(net));
    }
    let v0 = match field.lyapunov_with(net, &net.constant(&traj[0])) {
        Ok(v) => v,
        Err(Error::CutLocus) => return Ok(zero(net)),
        Err(e) => return Err(e),
    };
    let n = traj.len() - 1;
    let mut terms = Vec::with_capacity(n);
    for (i, x) in traj.iter().enumerate().skip(1) {
        let vi = match field.lyapunov_with(net, &net.constant(x)) {
            Ok(v) => v,
            Err(Error::CutLocus) => continue,
            Err(e) => return Err(e),
        };
        let decay = math::exp(-field.alpha * i as f64 * dt);
        terms.push((vi - v0 * decay).relu());
    }
    Ok(sum(terms).map_or_else(|| zero(net), |s| s / n as f64))
}

/// [`loss_lyapunov`] averaged over the windows of `len` samples starting
/// every `stride` samples (the last window ends at the final sample).
/// `V` is evaluated once per sample.
pub fn loss_lyapunov_windows<S: Real>(
    field: &StableField,
    net: &impl NetEval<S>,
    traj: &[Vec<f64>],
    dt: f64,
    len: usize,
    stride: usize,
) -> Result<S> {
    if len < 2 || len >= traj.len() {
        return loss_lyapunov(field, net, traj, dt);
    }
    let mut v = Vec::with_capacity(traj.len());
    for x in traj {
        v.push(match field.lyapunov_with(net, &net.constant(x)) {
            Ok(v) => Some(v),
            Err(Error::CutLocus) => None,
            Err(e) => return Err(e),
        });
    }
    let decay: Vec<f64> = (0..len).map(|i| math::exp(-field.alpha * i as f64 * dt)).collect();
    let stride = stride.max(1);
    let mut starts: Vec<usize> = (0..=traj.len() - len).step_by(stride).collect();
    if !(traj.len() - len).is_multiple_of(stride) {
        starts.push(traj.len() - len);
    }
    let mut windows = Vec::with_capacity(starts.len());
    for s in starts {
        let Some(v0) = v[s] else { continue };
        let terms = (1..len).filter_map(|i| v[s + i].map(|vi| (vi - v0 * decay[i]).relu()));
        if let Some(t) = sum(terms) {
            windows.push(t / (len - 1) as f64);
        }
    }
    let n = windows.len();
    Ok(sum(windows).map_or_else(|| zero(net), |s| s / n as f64))
}

/// A per-step training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Tangents,
    MultiShoot { which: Which, shot: usize, lambda: f64, solver: TrainSolver },
    Lyapunov,
    /// The decay loss over sliding windows, see [`loss_lyapunov_windows`].
    LyapunovWindows { len: usize, stride: usize },
}

/// Mean of the objective over a batch of trajectories sharing `dt`.
pub fn objective<S: Real>(
    field: &StableField,
    net: &impl NetEval<S>,
    obj: Objective,
    batch: &[&[Vec<f64>]],
    dt: f64,
) -> Result<S> {
    let mut terms = Vec::with_capacity(batch.len());
    for traj in batch {
        terms.push(match obj {
            Objective::Tangents => loss_tangents(field, net, traj, dt)?,
            Objective::MultiShoot { which, shot, lambda, solver } => {
                loss_multishoot(field, net, which, traj, shot, lambda, dt, solver)?
            }
            Objective::Lyapunov => loss_lyapunov(field, net, traj, dt)?,
            Objective::LyapunovWindows { len, stride } => loss_lyapunov_windows(field, net, traj, dt, len, stride)?,
        });
    }
    let n = terms.len();
    Ok(sum(terms).map_or_else(|| zero(net), |s| s / n as f64))
}

pub fn objective_value(field: &StableField, obj: Objective, batch: &[&[Vec<f64>]], dt: f64) -> Result<f64> {
    objective(field, &field.f64_nets(), obj, batch, dt)
}

/// Objective value and its gradient with respect to every parameter, in
/// store order.
pub fn objective_grad(field: &StableField, obj: Objective, batch: &[&[Vec<f64>]], dt: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let net = field.tape_nets(&tape);
    let loss: Var<'_> = objective(field, &net, obj, batch, dt)?;
    let grads = tape.backward(loss)?;
    Ok((loss.value(), field.nets.store.collect_grads(net.params(), &grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::tests::tiny_arch;
    use crate::geometry::ManifoldKind;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(m: ManifoldKind, seed: u64) -> StableField {
        let goal = m.origin();
        StableField::new(m, goal, tiny_arch(), 0.5, 0.1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    /// Zero every parameter of `h` so `g ≡ 0`.
    fn zero_h(f: &mut StableField) {
        let ids: Vec<_> = (0..f.nets.store.len())
            .map(crate::diff::ParamId)
            .filter(|&id| crate::nets::Networks::is_h_param(&f.nets.store.param(id).name))
            .collect();
        for id in ids {
            f.nets.store.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        f.refresh();
    }

    #[test]
    fn fragments_cover_the_demo() {
        assert_eq!(fragments(10, 4), vec![(0, 4), (4, 4), (8, 2)]);
        assert_eq!(fragments(10, 10), vec![(0, 10)]);
        assert_eq!(fragments(10, 20), vec![(0, 10)]);
    }

    #[test]
    fn tangent_loss_of_zero_field_is_mean_squared_step() {
        let mut f = field(ManifoldKind::UnitQuaternion, 0);
        zero_h(&mut f);
        let m = ManifoldKind::UnitQuaternion;
        let demo: Vec<Vec<f64>> = (0..6).map(|i| m.exp(&m.origin(), &[0.0, 0.1 * i as f64, 0.02 * (i * i) as f64, 0.0])).collect();
        let expected = demo.windows(2).map(|w| m.norm_sq(&w[0], &m.log(&w[0], &w[1]).unwrap())).sum::<f64>() / 5.0;
        let l: f64 = loss_tangents(&f, &f.f64_nets(), &demo, 0.1).unwrap();
        assert!((l - expected).abs() < 1e-15);
    }

    #[test]
    fn single_pair_tangent_loss() {
        let f = field(ManifoldKind::Euclidean(2), 1);
        let demo = vec![vec![1.0, 0.5], vec![0.8, 0.3]];
        let g = f.base_field(&demo[0]);
        let e = math::powi(g[0] * 0.2 + 0.2, 2) + math::powi(g[1] * 0.2 + 0.2, 2);
        let l: f64 = loss_tangents(&f, &f.f64_nets(), &demo, 0.2).unwrap();
        assert!((l - e).abs() < 1e-15);
    }

    #[test]
    fn two_fragment_linear_case_on_the_line() {
        // g ≡ 0 leaves every fragment at its start, so with x = [0, 1, 2, 3]
        // and shots of 2: fragment errors 1, 4 and 1; gap d(x₀, x₂) = 2.
        let mut f = field(ManifoldKind::Euclidean(1), 2);
        zero_h(&mut f);
        let demo: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let solver = TrainSolver::default();
        let l: f64 = loss_multishoot(&f, &f.f64_nets(), Which::Base, &demo, 2, 0.5, 1.0, solver).unwrap();
        let eta = CONTINUITY_SMOOTHING;
        let expected = (1.0 + 4.0 + 1.0) / 3.0 + 0.5 * ((4.0 + eta * eta).sqrt() - eta);
        assert!((l - expected).abs() < 1e-15, "{l} vs {expected}");
        let single: f64 = loss_multishoot(&f, &f.f64_nets(), Which::Base, &demo, 3, 7.0, 1.0, solver).unwrap();
        assert!((single - (1.0 + 4.0 + 9.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn replayed_rollout_has_zero_loss() {
        let f = field(ManifoldKind::UnitQuaternion, 3);
        let m = &f.manifold;
        let x0 = m.exp(&f.goal, &[0.0, 0.4, -0.3, 0.2]);
        let solver = TrainSolver { method: Method::Exp, stepper: Stepper::Rk4 };
        let cfg = SolveConfig::new(Method::Exp, Stepper::Rk4, 12, 12.0 * 0.05);
        let demo = solve_exp(m, |x: &[f64]| f.stable_field(x), &x0, &cfg).unwrap();
        let l: f64 = loss_multishoot(&f, &f.f64_nets(), Which::Stable, &demo, 4, 1.0, 0.05, solver).unwrap();
        assert!(l < 1e-20, "{l}");
    }

    #[test]
    fn lyapunov_loss_on_constant_trajectory() {
        let f = field(ManifoldKind::Spd2, 4);
        let x = vec![2.0, 0.3, 1.0];
        let traj = vec![x.clone(); 6];
        let v = f.lyapunov(&x).unwrap();
        let dt = 0.1;
        let expected = (1..6).map(|i| v * (1.0 - math::exp(-0.5 * i as f64 * dt))).sum::<f64>() / 5.0;
        let l: f64 = loss_lyapunov(&f, &f.f64_nets(), &traj, dt).unwrap();
        assert!((l - expected).abs() < 1e-14);
        let mut f0 = f.clone();
        f0.alpha = 0.0;
        assert_eq!(loss_lyapunov::<f64>(&f0, &f0.f64_nets(), &traj, dt).unwrap(), 0.0);
    }

    #[test]
    fn windowed_lyapunov_loss_matches_explicit_windows() {
        let m = ManifoldKind::UnitQuaternion;
        let f = field(m.clone(), 6);
        let traj: Vec<Vec<f64>> = (0..9).map(|i| m.exp(&m.origin(), &[0.0, 0.3 * math::sin(i as f64), 0.1 * i as f64, 0.0])).collect();
        let dt = 0.2;
        let l = |t: &[Vec<f64>]| -> f64 { loss_lyapunov(&f, &f.f64_nets(), t, dt).unwrap() };
        let expected = (l(&traj[0..4]) + l(&traj[3..7]) + l(&traj[5..9])) / 3.0;
        let w: f64 = loss_lyapunov_windows(&f, &f.f64_nets(), &traj, dt, 4, 3).unwrap();
        assert!((w - expected).abs() < 1e-15);
        let whole: f64 = loss_lyapunov_windows(&f, &f.f64_nets(), &traj, dt, 0, 1).unwrap();
        assert_eq!(whole, l(&traj));
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let m = ManifoldKind::UnitQuaternion;
        let mut f = field(m.clone(), 5);
        let demo: Vec<Vec<f64>> = (0..7).map(|i| m.exp(&m.origin(), &[0.0, 0.5 - 0.07 * i as f64, 0.1, -0.05 * i as f64])).collect();
        let batch = [&demo[..]];
        let solver = TrainSolver { method: Method::Exp, stepper: Stepper::Rk4 };
        for obj in [
            Objective::Tangents,
            Objective::MultiShoot { which: Which::Stable, shot: 3, lambda: 0.7, solver },
            Objective::Lyapunov,
            Objective::LyapunovWindows { len: 3, stride: 1 },
        ] {
            let (v, g) = objective_grad(&f, obj, &batch, 0.1).unwrap();
            assert!((v - objective_value(&f, obj, &batch, 0.1).unwrap()).abs() < 1e-12);
            let flat_g: Vec<f64> = g.concat();
            let p0 = f.nets.store.flatten();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let dir: Vec<f64> = (0..p0.len()).map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5).collect();
            let h = 1e-5;
            let mut eval = |s: f64| {
                let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                f.nets.store.unflatten(&p);
                f.refresh();
                objective_value(&f, obj, &batch, 0.1).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            eval(0.0);
            let ad: f64 = flat_g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - ad).abs() <= 1e-6 * ad.abs().max(1e-3), "{obj:?}: {fd} vs {ad}");
        }
    }
}
