//! The stable vector field: an equilibrium-corrected base field `g`, a
//! Lyapunov function `V` and the projection that makes `V` decay at rate α
//! along the resulting field `f`.
//!
//! ```text
//! g(x) = P_x(h(x) − h(x_e))
//! V(x) = σ(C(F(x)) − C(F(x_e))) + ε·d(x, x_e)²
//! f(x) = g(x) − grad V(x) · ReLU(⟨grad V, g⟩ + αV) / ‖grad V‖²
//! ```
//!
//! Everything is generic over the scalar type through [`NetEval`], so the
//! same code runs on plain floats and on the tape.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::ManifoldKind;
use crate::nets::{Architecture, BoundNets, Networks};
use crate::real::{vec_ops as vo, Real};

static DEGENERATE_GRADIENTS: AtomicU64 = AtomicU64::new(0);

/// How many times the `‖grad V‖² < 1e−18` guard fired away from `x_e`.
pub fn degenerate_gradient_count() -> u64 {
    DEGENERATE_GRADIENTS.load(Ordering::Relaxed)
}

/// Denominator below which the projection is skipped.
pub const GRAD_FLOOR: f64 = 1e-18;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StableField {
    pub manifold: ManifoldKind,
    pub goal: Vec<f64>,
    pub alpha: f64,
    pub epsilon: f64,
    /// Subtract `h(x_e)` in the base field. Disabling it reproduces the
    /// equilibrium defect of uncorrected constructions.
    pub correction: bool,
    pub nets: Networks,
    #[serde(skip)]
    cache: Option<GoalCache>,
}

#[derive(Clone, Debug)]
struct GoalCache {
    version: u64,
    h_goal: Vec<f64>,
    c_goal: f64,
}

/// Network evaluations the field needs, for one scalar type.
pub trait NetEval<S: Real> {
    fn h(&self, x: &[S]) -> Vec<S>;
    fn h_goal(&self) -> Vec<S>;
    /// `C(F(x))`
    fn potential(&self, x: &[S]) -> S;
    /// `C(F(x))` and its ambient gradient.
    fn potential_grad(&self, x: &[S]) -> (S, Vec<S>);
    fn potential_goal(&self) -> S;
    fn constant(&self, v: &[f64]) -> Vec<S>;
}

/// Plain-float evaluator with `h(x_e)` and `C(F(x_e))` precomputed.
pub struct F64Nets<'a> {
    nets: &'a Networks,
    h_goal: Vec<f64>,
    c_goal: f64,
}

impl NetEval<f64> for F64Nets<'_> {
    fn h(&self, x: &[f64]) -> Vec<f64> {
        self.nets.h(x)
    }
    fn h_goal(&self) -> Vec<f64> {
        self.h_goal.clone()
    }
    fn potential(&self, x: &[f64]) -> f64 {
        self.nets.potential(x)
    }
    fn potential_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.nets.potential_grad(x)
    }
    fn potential_goal(&self) -> f64 {
        self.c_goal
    }
    fn constant(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// Tape evaluator; goal quantities are recorded once per tape so their
/// parameter dependence is differentiated too.
pub struct TapeNets<'n, 't> {
    pub bound: BoundNets<'n, 't>,
    tape: &'t Tape,
    h_goal: Vec<Var<'t>>,
    c_goal: Var<'t>,
}

impl<'n, 't> TapeNets<'n, 't> {
    pub fn new(field: &'n StableField, tape: &'t Tape) -> Self {
        let bound = field.nets.bind(tape);
        let xe = tape.leaf(&field.goal);
        let h_goal = bound.h(xe).split();
        let c_goal = bound.potential(xe);
        Self { bound, tape, h_goal, c_goal }
    }

    pub fn params(&self) -> &[Var<'t>] {
        &self.bound.params
    }

    fn pack(&self, x: &[Var<'t>]) -> Var<'t> {
        self.tape.concat(x)
    }
}

impl<'t> NetEval<Var<'t>> for TapeNets<'_, 't> {
    fn h(&self, x: &[Var<'t>]) -> Vec<Var<'t>> {
        self.bound.h(self.pack(x)).split()
    }
    fn h_goal(&self) -> Vec<Var<'t>> {
        self.h_goal.clone()
    }
    fn potential(&self, x: &[Var<'t>]) -> Var<'t> {
        self.bound.potential(self.pack(x))
    }
    fn potential_grad(&self, x: &[Var<'t>]) -> (Var<'t>, Vec<Var<'t>>) {
        let (c, g) = self.bound.potential_grad(self.pack(x));
        (c, g.split())
    }
    fn potential_goal(&self) -> Var<'t> {
        self.c_goal
    }
    fn constant(&self, v: &[f64]) -> Vec<Var<'t>> {
        v.iter().map(|&c| self.tape.scalar(c)).collect()
    }
}

/// `σ_d(z)` written with ReLUs so it is available on every scalar type.
fn smooth_relu<S: Real>(z: S, d: f64) -> S {
    let a = z.relu();
    let b = (z - d).relu();
    (a * a - b * b) / (2.0 * d)
}

fn smooth_relu_grad<S: Real>(z: S, d: f64) -> S {
    (z.relu() - (z - d).relu()) / d
}

impl StableField {
    pub fn new<R: Rng + ?Sized>(
        manifold: ManifoldKind,
        goal: Vec<f64>,
        arch: Architecture,
        alpha: f64,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        manifold.validate(&goal)?;
        if !(alpha >= 0.0) || !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("need α ≥ 0 and ε > 0, got α = {alpha}, ε = {epsilon}")));
        }
        let nets = Networks::new(manifold.ambient_dim(), arch, rng);
        let mut f = Self { manifold, goal, alpha, epsilon, correction: true, nets, cache: None };
        f.refresh();
        Ok(f)
    }

    /// Recompute the cached goal quantities after a parameter change.
    pub fn refresh(&mut self) {
        self.nets.refresh();
        self.cache = Some(GoalCache {
            version: self.nets.store.version(),
            h_goal: self.nets.h(&self.goal),
            c_goal: self.nets.potential(&self.goal),
        });
    }

    pub fn smoothing(&self) -> f64 {
        self.nets.arch.smoothing
    }

    /// Plain-float evaluator. Uses the goal cache if it is current.
    pub fn f64_nets(&self) -> F64Nets<'_> {
        match &self.cache {
            Some(c) if c.version == self.nets.store.version() => {
                F64Nets { nets: &self.nets, h_goal: c.h_goal.clone(), c_goal: c.c_goal }
            }
            _ => F64Nets { nets: &self.nets, h_goal: self.nets.h(&self.goal), c_goal: self.nets.potential(&self.goal) },
        }
    }

    pub fn tape_nets<'t>(&self, tape: &'t Tape) -> TapeNets<'_, 't> {
        TapeNets::new(self, tape)
    }

    /// `g(x) = P_x(h(x) − h(x_e))`, or `P_x(h(x))` with the correction off.
    pub fn base_field_with<S: Real>(&self, net: &impl NetEval<S>, x: &[S]) -> Vec<S> {
        let hx = net.h(x);
        let v = if self.correction { vo::sub(&hx, &net.h_goal()) } else { hx };
        self.manifold.project(x, &v)
    }

    /// `V(x)`. Fails only at the cut locus of `x_e`.
    pub fn lyapunov_with<S: Real>(&self, net: &impl NetEval<S>, x: &[S]) -> Result<S> {
        let z = net.potential(x) - net.potential_goal();
        let xe = net.constant(&self.goal);
        let d2 = self.manifold.dist_sq(x, &xe)?;
        Ok(smooth_relu(z, self.smoothing()) + d2 * self.epsilon)
    }

    /// `V(x)` together with `grad V(x)`.
    pub fn lyapunov_and_grad_with<S: Real>(&self, net: &impl NetEval<S>, x: &[S]) -> Result<(S, Vec<S>)> {
        let xe = net.constant(&self.goal);
        let log_e = self.manifold.log(x, &xe).map_err(|e| match e {
            Error::CutLocus => Error::DegeneratePoint,
            other => other,
        })?;
        let (c, gc) = net.potential_grad(x);
        let z = c - net.potential_goal();
        let d = self.smoothing();
        let s = smooth_relu_grad(z, d);
        let ambient = vo::scale(&gc, s);
        let rg = self.manifold.riemannian_grad(x, &ambient);
        let grad = vo::axpy(&rg, -2.0 * self.epsilon, &log_e);
        // d(x, x_e)² = ‖log_x(x_e)‖²_x, pinned to zero at the goal itself.
        let at_goal = x.iter().zip(&self.goal).all(|(a, b)| a.value() == *b);
        let d2 = if at_goal { z.zero_like() } else { self.manifold.norm_sq(x, &log_e) };
        Ok((smooth_relu(z, d) + d2 * self.epsilon, grad))
    }

    pub fn lyapunov_grad_with<S: Real>(&self, net: &impl NetEval<S>, x: &[S]) -> Result<Vec<S>> {
        Ok(self.lyapunov_and_grad_with(net, x)?.1)
    }

    /// The stable field `f(x)`. Zero on the exclusion set.
    pub fn stable_field_with<S: Real>(&self, net: &impl NetEval<S>, x: &[S]) -> Vec<S> {
        let g = self.base_field_with(net, x);
        let (v, grad) = match self.lyapunov_and_grad_with(net, x) {
            Ok(p) => p,
            Err(_) => return g.iter().map(|c| c.zero_like()).collect(),
        };
        let lie = self.manifold.inner(x, &grad, &g);
        let arg = lie + v * self.alpha;
        if arg.value() <= 0.0 {
            return g;
        }
        let n2 = self.manifold.norm_sq(x, &grad);
        if n2.value() < GRAD_FLOOR {
            if x.iter().zip(&self.goal).any(|(a, b)| a.value() != *b) {
                DEGENERATE_GRADIENTS.fetch_add(1, Ordering::Relaxed);
            }
            return g;
        }
        let k = arg.relu() / n2;
        g.iter().zip(&grad).map(|(&gi, &vi)| gi - vi * k).collect()
    }

    pub fn base_field(&self, x: &[f64]) -> Vec<f64> {
        self.base_field_with(&self.f64_nets(), x)
    }

    pub fn lyapunov(&self, x: &[f64]) -> Result<f64> {
        self.lyapunov_with(&self.f64_nets(), x)
    }

    /// `V(x)` defined everywhere, using the total geodesic distance (so the
    /// S³ antipode gets `d = π`).
    pub fn lyapunov_total(&self, x: &[f64]) -> f64 {
        let net = self.f64_nets();
        let z = net.potential(x) - net.potential_goal();
        let d = self.manifold.distance(x, &self.goal);
        smooth_relu(z, self.smoothing()) + self.epsilon * d * d
    }

    pub fn lyapunov_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.lyapunov_grad_with(&self.f64_nets(), x)
    }

    pub fn stable_field(&self, x: &[f64]) -> Vec<f64> {
        self.stable_field_with(&self.f64_nets(), x)
    }

    /// `L_w V(x) = ⟨grad V(x), w⟩_x`
    pub fn lie_derivative(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        let g = self.lyapunov_grad(x)?;
        Ok(self.manifold.inner(x, &g, w))
    }

    /// `h(x_e)`, whose norm measures the equilibrium defect when the
    /// correction is disabled.
    pub fn h_goal(&self) -> Vec<f64> {
        self.f64_nets().h_goal
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diff::ParamStore;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            h_hidden: vec![8],
            feat_hidden: vec![6],
            feat_out: 3,
            icnn_hidden: vec![6],
            lipschitz: 2.0,
            smoothing: 0.1,
        }
    }

    fn zero_params(store: &mut ParamStore) {
        let n = store.num_scalars();
        store.unflatten(&vec![0.0; n]);
    }

    /// Scalar network stand-in for the hand-computed 1-D examples.
    struct Scalar {
        h_gain: f64,
    }

    impl NetEval<f64> for Scalar {
        fn h(&self, x: &[f64]) -> Vec<f64> {
            vec![self.h_gain * x[0]]
        }
        fn h_goal(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn potential(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn potential_grad(&self, _: &[f64]) -> (f64, Vec<f64>) {
            (0.0, vec![0.0])
        }
        fn potential_goal(&self) -> f64 {
            0.0
        }
        fn constant(&self, v: &[f64]) -> Vec<f64> {
            v.to_vec()
        }
    }

    fn scalar_field(alpha: f64) -> StableField {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        StableField::new(ManifoldKind::Euclidean(1), vec![0.0], tiny_arch(), alpha, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn scalar_example_alpha_one() {
        // g(x) = x, V = x², α = 1 ⇒ f(x) = −x/2 and L_f V = −V.
        let sf = scalar_field(1.0);
        let net = Scalar { h_gain: 1.0 };
        for x in [-2.0, 0.3, 1.5] {
            let f = sf.stable_field_with(&net, &[x]);
            assert!((f[0] + 0.5 * x).abs() < 1e-15);
            let grad = sf.lyapunov_grad_with(&net, &[x]).unwrap();
            assert!((grad[0] * f[0] + x * x).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_example_alpha_zero_cancels() {
        let sf = scalar_field(0.0);
        let net = Scalar { h_gain: 1.0 };
        for x in [-2.0, 0.3, 1.5] {
            assert!(sf.stable_field_with(&net, &[x])[0].abs() < 1e-15);
        }
    }

    #[test]
    fn decaying_base_field_is_left_alone() {
        let sf = scalar_field(0.5);
        let net = Scalar { h_gain: -3.0 };
        assert_eq!(sf.stable_field_with(&net, &[0.7]), sf.base_field_with(&net, &[0.7]));
    }

    #[test]
    fn zero_potential_gives_pure_distance_lyapunov() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let goal = vec![0.0, 0.6, 0.0, 0.8];
        let mut sf = StableField::new(ManifoldKind::UnitQuaternion, goal.clone(), tiny_arch(), 0.5, 0.3, &mut rng).unwrap();
        zero_params(&mut sf.nets.store);
        let x = [0.5, 0.5, 0.5, 0.5];
        let d = sf.manifold.distance(&x, &goal);
        assert!((sf.lyapunov(&x).unwrap() - 0.3 * d * d).abs() < 1e-15);
        let g = sf.lyapunov_grad(&x).unwrap();
        let l = sf.manifold.log(&x, &goal).unwrap();
        for i in 0..4 {
            assert!((g[i] + 0.6 * l[i]).abs() < 1e-15);
        }
        assert_eq!(sf.lyapunov(&goal).unwrap(), 0.0);
    }

    #[test]
    fn euclidean_constant_potential_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sf = StableField::new(ManifoldKind::Euclidean(3), vec![1.0, 2.0, 3.0], tiny_arch(), 0.5, 0.2, &mut rng).unwrap();
        zero_params(&mut sf.nets.store);
        let x = [0.0, 0.5, -1.0];
        let g = sf.lyapunov_grad(&x).unwrap();
        for i in 0..3 {
            assert!((g[i] - 0.4 * (x[i] - sf.goal[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn antipode_is_degenerate_and_field_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sf = StableField::new(ManifoldKind::UnitQuaternion, vec![1.0, 0.0, 0.0, 0.0], tiny_arch(), 0.5, 0.1, &mut rng).unwrap();
        let e = [-1.0, 0.0, 0.0, 0.0];
        assert_eq!(sf.lyapunov_grad(&e), Err(Error::DegeneratePoint));
        assert_eq!(sf.stable_field(&e), vec![0.0; 4]);
    }

    #[test]
    fn base_field_on_sphere_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let goal = vec![1.0, 0.0, 0.0, 0.0];
        let sf = StableField::new(ManifoldKind::UnitQuaternion, goal.clone(), tiny_arch(), 0.5, 0.1, &mut rng).unwrap();
        let x = [0.0, 0.6, 0.8, 0.0];
        let v = vo::sub(&sf.nets.h(&x), &sf.nets.h(&goal));
        let c: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
        let expected: Vec<f64> = v.iter().zip(&x).map(|(vi, xi)| vi - xi * c).collect();
        assert_eq!(sf.base_field(&x), expected);
    }

    #[test]
    fn tape_and_f64_fields_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = ManifoldKind::stacked_pose(1);
        let goal = m.random_point(&mut rng, 1.0);
        let sf = StableField::new(m.clone(), goal, tiny_arch(), 0.5, 0.1, &mut rng).unwrap();
        let x = m.random_point(&mut rng, 1.0);
        let tape = Tape::new();
        let net = sf.tape_nets(&tape);
        let xv: Vec<Var<'_>> = x.iter().map(|&c| tape.scalar(c)).collect();
        let ft = vo::values(&sf.stable_field_with(&net, &xv));
        let ff = sf.stable_field(&x);
        for (a, b) in ft.iter().zip(&ff) {
            assert!((a - b).abs() < 1e-13, "{ft:?} vs {ff:?}");
        }
    }
}
