//! Smooth MLPs, the invertible feature map `F(x) = [H(x), x]` and the input
//! convex network `C`.
//!
//! Every network has two evaluators: a plain `f64` path used for rollouts
//! and evaluation, and a tape path used for training. They share parameter
//! layout and are checked against each other in tests.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{smooth_relu, smooth_relu_grad, ParamId, ParamStore, Tape, Unary, Var};
use crate::math;

/// Layer sizes and smoothing constants. Input/output sizes follow from the
/// manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub h_hidden: Vec<usize>,
    pub feat_hidden: Vec<usize>,
    pub feat_out: usize,
    pub icnn_hidden: Vec<usize>,
    /// Lipschitz bound enforced on `H`.
    pub lipschitz: f64,
    /// Width of the smoothed ReLU.
    pub smoothing: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            h_hidden: vec![128, 128],
            feat_hidden: vec![64, 64],
            feat_out: 16,
            icnn_hidden: vec![64, 64],
            lipschitz: 2.0,
            smoothing: 0.1,
        }
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Vec<f64> {
    (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn matvec(w: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(w.chunks_exact(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()));
}

fn matvec_t_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &yr) in w.chunks_exact(cols).zip(y) {
        if yr != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
    }
}

/// Fully connected network with softplus hidden activations and a linear
/// output layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (i, o) = (w[0], w[1]);
                let std = 1.0 / math::sqrt(i as f64);
                let wid = store.add(alloc::format!("{prefix}.w{l}"), o, i, gaussian_matrix(rng, o, i, std));
                let bid = store.add(alloc::format!("{prefix}.b{l}"), o, 1, vec![0.0; o]);
                (wid, bid)
            })
            .collect();
        Self { widths: widths.to_vec(), layers }
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().map(|l| l.0)
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        let mut a = Vec::new();
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            matvec(store.get(w), &z, &mut a);
            for (ai, bi) in a.iter_mut().zip(store.get(b)) {
                *ai += bi;
            }
            if l < last {
                a.iter_mut().for_each(|v| *v = math::softplus(*v));
            }
            core::mem::swap(&mut z, &mut a);
        }
        z
    }

    /// Output and the vector-Jacobian product `J(x)ᵀ·v` supplied lazily by
    /// `cot`, which receives the output.
    pub fn eval_vjp(&self, store: &ParamStore, x: &[f64], cot: impl FnOnce(&[f64]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let last = self.layers.len() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut z = x.to_vec();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let mut a = Vec::new();
            matvec(store.get(w), &z, &mut a);
            for (ai, bi) in a.iter_mut().zip(store.get(b)) {
                *ai += bi;
            }
            z = if l < last { a.iter().map(|&v| math::softplus(v)).collect() } else { a.clone() };
            pre.push(a);
        }
        let mut delta = cot(&z);
        for l in (0..self.layers.len()).rev() {
            if l < last {
                for (d, &a) in delta.iter_mut().zip(&pre[l]) {
                    *d *= math::sigmoid(a);
                }
            }
            let mut prev = vec![0.0; self.widths[l]];
            matvec_t_acc(store.get(self.layers[l].0), &delta, &mut prev);
            delta = prev;
        }
        (z, delta)
    }

    pub fn eval_tape<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        let mut z = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let a = p[w.0].matvec(z) + p[b.0];
            z = if l < last { a.map(Unary::Softplus) } else { a };
        }
        z
    }

    /// Tape version of [`Mlp::eval_vjp`] for a fixed cotangent.
    pub fn eval_vjp_tape<'t>(&self, p: &[Var<'t>], x: Var<'t>, cot: impl FnOnce(Var<'t>) -> Var<'t>) -> (Var<'t>, Var<'t>) {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut z = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let a = p[w.0].matvec(z) + p[b.0];
            z = if l < last { a.map(Unary::Softplus) } else { a };
            pre.push(a);
        }
        let mut delta = cot(z);
        for l in (0..self.layers.len()).rev() {
            if l < last {
                delta = delta * pre[l].map(Unary::Sigmoid);
            }
            delta = p[self.layers[l].0 .0].matvec_t(delta);
        }
        (z, delta)
    }
}

/// Convex network `C(y)` with nonnegative (softplus-reparameterized)
/// hidden-to-hidden weights and smoothed-ReLU activations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Icnn {
    pub widths: Vec<usize>,
    /// Input skip weights, one per layer.
    wx: Vec<ParamId>,
    /// Raw hidden-to-hidden weights for layers `1..`.
    u: Vec<ParamId>,
    b: Vec<ParamId>,
    pub smoothing: f64,
}

/// Raw ICNN weights start here so the effective weights are about 0.13.
pub const ICNN_RAW_INIT: f64 = -2.0;

impl Icnn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, widths: &[usize], smoothing: f64, rng: &mut R) -> Self {
        assert!(widths.len() >= 2 && *widths.last().unwrap() == 1, "ICNN must end in a scalar");
        let m = widths[0];
        let (mut wx, mut u, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for l in 0..widths.len() - 1 {
            let o = widths[l + 1];
            let std = 1.0 / math::sqrt(m as f64);
            wx.push(store.add(alloc::format!("{prefix}.wx{l}"), o, m, gaussian_matrix(rng, o, m, std)));
            if l > 0 {
                let i = widths[l];
                let raw: Vec<f64> = gaussian_matrix(rng, o, i, 0.1).into_iter().map(|v| v + ICNN_RAW_INIT).collect();
                u.push(store.add(alloc::format!("{prefix}.u{l}"), o, i, raw));
            }
            b.push(store.add(alloc::format!("{prefix}.b{l}"), o, 1, vec![0.0; o]));
        }
        Self { widths: widths.to_vec(), wx, u, b, smoothing }
    }

    pub fn raw_z_ids(&self) -> &[ParamId] {
        &self.u
    }

    /// Nonnegative hidden-to-hidden weights `softplus(u)`.
    pub fn effective(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        self.u.iter().map(|&id| store.get(id).iter().map(|&v| math::softplus(v)).collect()).collect()
    }

    pub fn eval(&self, store: &ParamStore, y: &[f64]) -> f64 {
        self.eval_grad(store, y, false).0
    }

    /// Value and, if requested, gradient with respect to the input.
    pub fn eval_grad(&self, store: &ParamStore, y: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        self.eval_grad_with(store, &self.effective(store), y, want_grad)
    }

    /// [`Icnn::eval_grad`] with precomputed effective weights.
    pub fn eval_grad_with(&self, store: &ParamStore, eff: &[Vec<f64>], y: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let d = self.smoothing;
        let n = self.wx.len();
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut z: Vec<f64> = Vec::new();
        let mut a = Vec::new();
        for l in 0..n {
            matvec(store.get(self.wx[l]), y, &mut a);
            for (ai, bi) in a.iter_mut().zip(store.get(self.b[l])) {
                *ai += bi;
            }
            if l > 0 {
                let mut t = Vec::new();
                matvec(&eff[l - 1], &z, &mut t);
                a.iter_mut().zip(&t).for_each(|(ai, ti)| *ai += ti);
            }
            if l + 1 < n {
                z = a.iter().map(|&v| smooth_relu(v, d)).collect();
                pre.push(a.clone());
            }
        }
        let value = a[0];
        if !want_grad {
            return (value, Vec::new());
        }
        let mut gy = vec![0.0; y.len()];
        let mut delta = vec![1.0];
        for l in (0..n).rev() {
            if l + 1 < n {
                delta.iter_mut().zip(&pre[l]).for_each(|(g, &p)| *g *= smooth_relu_grad(p, d));
            }
            matvec_t_acc(store.get(self.wx[l]), &delta, &mut gy);
            if l > 0 {
                let mut prev = vec![0.0; self.widths[l]];
                matvec_t_acc(&eff[l - 1], &delta, &mut prev);
                delta = prev;
            }
        }
        (value, gy)
    }

    /// Effective (nonnegative) weights bound on a tape; compute once per
    /// tape and pass to the tape evaluators.
    pub fn effective_tape<'t>(&self, p: &[Var<'t>]) -> Vec<Var<'t>> {
        self.u.iter().map(|id| p[id.0].map(Unary::Softplus)).collect()
    }

    pub fn eval_grad_tape<'t>(&self, p: &[Var<'t>], eff: &[Var<'t>], y: Var<'t>, want_grad: bool) -> (Var<'t>, Option<Var<'t>>) {
        let d = self.smoothing;
        let n = self.wx.len();
        let mut pre = Vec::with_capacity(n);
        let mut z: Option<Var<'t>> = None;
        let mut a = y;
        for l in 0..n {
            a = p[self.wx[l].0].matvec(y) + p[self.b[l].0];
            if let Some(zz) = z {
                a = a + eff[l - 1].matvec(zz);
            }
            if l + 1 < n {
                z = Some(a.map(Unary::SmoothRelu(d)));
                pre.push(a);
            }
        }
        let value = a.index(0);
        if !want_grad {
            return (value, None);
        }
        let mut delta = y.tape().scalar(1.0);
        let mut gy: Option<Var<'t>> = None;
        for l in (0..n).rev() {
            if l + 1 < n {
                delta = delta * pre[l].map(Unary::SmoothReluGrad(d));
            }
            let g = p[self.wx[l].0].matvec_t(delta);
            gy = Some(match gy {
                None => g,
                Some(acc) => acc + g,
            });
            if l > 0 {
                delta = eff[l - 1].matvec_t(delta);
            }
        }
        (value, gy)
    }
}

/// The three networks of a stable field and their shared parameter store.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Networks {
    pub arch: Architecture,
    pub store: ParamStore,
    pub h: Mlp,
    pub feat: Mlp,
    pub icnn: Icnn,
    /// Warm-started power-iteration vectors for the Lipschitz projection.
    #[serde(skip)]
    power: Vec<Vec<f64>>,
    /// ICNN effective weights and the store version they were computed at.
    #[serde(skip)]
    eff: Option<(u64, Vec<Vec<f64>>)>,
}

impl Networks {
    /// Fresh networks for an ambient dimension `m`.
    pub fn new<R: Rng + ?Sized>(m: usize, arch: Architecture, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mut hw = vec![m];
        hw.extend(&arch.h_hidden);
        hw.push(m);
        let h = Mlp::new(&mut store, "h", &hw, rng);
        let mut fw = vec![m];
        fw.extend(&arch.feat_hidden);
        fw.push(arch.feat_out);
        let feat = Mlp::new(&mut store, "H", &fw, rng);
        let mut cw = vec![arch.feat_out + m];
        cw.extend(&arch.icnn_hidden);
        cw.push(1);
        let icnn = Icnn::new(&mut store, "C", &cw, arch.smoothing, rng);
        let mut nets = Self { arch, store, h, feat, icnn, power: Vec::new(), eff: None };
        nets.project_lipschitz_iters(50);
        nets.refresh();
        nets
    }

    /// Recompute cached derived weights after a parameter change.
    pub fn refresh(&mut self) {
        self.eff = Some((self.store.version(), self.icnn.effective(&self.store)));
    }

    fn icnn_eval(&self, y: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        match &self.eff {
            Some((v, eff)) if *v == self.store.version() => self.icnn.eval_grad_with(&self.store, eff, y, want_grad),
            _ => self.icnn.eval_grad(&self.store, y, want_grad),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.h.widths[0]
    }

    /// Names of the parameters that belong to `h`.
    pub fn is_h_param(name: &str) -> bool {
        name.starts_with("h.")
    }

    pub fn h(&self, x: &[f64]) -> Vec<f64> {
        self.h.eval(&self.store, x)
    }

    /// `F(x) = [H(x), x]`
    pub fn feature(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.feat.eval(&self.store, x);
        y.extend_from_slice(x);
        y
    }

    /// `C(F(x))`
    pub fn potential(&self, x: &[f64]) -> f64 {
        self.icnn_eval(&self.feature(x), false).0
    }

    /// `C(F(x))` and its gradient with respect to `x`.
    pub fn potential_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let k = self.arch.feat_out;
        let mut c = 0.0;
        let mut gy_tail = Vec::new();
        let (_, mut g) = self.feat.eval_vjp(&self.store, x, |hx| {
            let mut y = hx.to_vec();
            y.extend_from_slice(x);
            let (v, gy) = self.icnn_eval(&y, true);
            c = v;
            gy_tail = gy[k..].to_vec();
            gy[..k].to_vec()
        });
        g.iter_mut().zip(&gy_tail).for_each(|(a, b)| *a += b);
        (c, g)
    }

    /// Bind parameters to a tape.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundNets<'_, 't> {
        let params = self.store.bind(tape);
        let eff = self.icnn.effective_tape(&params);
        BoundNets { nets: self, params, eff }
    }

    /// Scale each layer of `H` so its spectral norm is at most
    /// `L^(1/layers)`. Softplus is 1-Lipschitz, so `H` is then `L`-Lipschitz.
    pub fn project_lipschitz(&mut self) {
        self.project_lipschitz_iters(5);
    }

    fn project_lipschitz_iters(&mut self, iters: usize) {
        let ids: Vec<ParamId> = self.feat.weight_ids().collect();
        let per_layer = math::exp(math::ln(self.arch.lipschitz) / ids.len() as f64);
        if self.power.len() != ids.len() {
            self.power = ids
                .iter()
                .map(|&id| {
                    let cols = self.store.param(id).cols;
                    vec![1.0 / math::sqrt(cols as f64); cols]
                })
                .collect();
        }
        for (li, &id) in ids.iter().enumerate() {
            let (rows, cols) = (self.store.param(id).rows, self.store.param(id).cols);
            let w = self.store.get(id).to_vec();
            let sigma = power_iteration(&w, rows, cols, &mut self.power[li], iters);
            if sigma > per_layer {
                let s = per_layer / sigma;
                self.store.get_mut(id).iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

/// Estimate of the largest singular value; `v` is updated in place.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize, v: &mut [f64], iters: usize) -> f64 {
    debug_assert_eq!(w.len(), rows * cols);
    let mut u = Vec::with_capacity(rows);
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        matvec(w, v, &mut u);
        let nu = math::sqrt(u.iter().map(|c| c * c).sum::<f64>());
        if nu == 0.0 {
            return 0.0;
        }
        u.iter_mut().for_each(|c| *c /= nu);
        v.iter_mut().for_each(|c| *c = 0.0);
        matvec_t_acc(w, &u, v);
        let nv = math::sqrt(v.iter().map(|c| c * c).sum::<f64>());
        sigma = nv;
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|c| *c /= nv);
    }
    sigma
}

/// Parameters of [`Networks`] bound as tape leaves.
pub struct BoundNets<'n, 't> {
    pub nets: &'n Networks,
    pub params: Vec<Var<'t>>,
    eff: Vec<Var<'t>>,
}

impl<'n, 't> BoundNets<'n, 't> {
    pub fn h(&self, x: Var<'t>) -> Var<'t> {
        self.nets.h.eval_tape(&self.params, x)
    }

    pub fn feature(&self, x: Var<'t>) -> Var<'t> {
        let hx = self.nets.feat.eval_tape(&self.params, x);
        x.tape().concat(&[hx, x])
    }

    pub fn potential(&self, x: Var<'t>) -> Var<'t> {
        self.nets.icnn.eval_grad_tape(&self.params, &self.eff, self.feature(x), false).0
    }

    /// `C(F(x))` and its input gradient, both differentiable in the
    /// parameters.
    pub fn potential_grad(&self, x: Var<'t>) -> (Var<'t>, Var<'t>) {
        let k = self.nets.arch.feat_out;
        let m = self.nets.input_dim();
        let mut c = None;
        let mut tail = None;
        let (_, g) = self.nets.feat.eval_vjp_tape(&self.params, x, |hx| {
            let y = x.tape().concat(&[hx, x]);
            let (v, gy) = self.nets.icnn.eval_grad_tape(&self.params, &self.eff, y, true);
            let gy = gy.expect("gradient requested");
            c = Some(v);
            tail = Some(gy.slice(k, m));
            gy.slice(0, k)
        });
        (c.expect("potential evaluated"), g + tail.expect("potential evaluated"))
    }
}

/// Human-readable summary of parameter counts.
pub fn describe(nets: &Networks) -> String {
    alloc::format!(
        "h {:?}, H {:?}, C {:?}, {} parameters",
        nets.h.widths,
        nets.feat.widths,
        nets.icnn.widths,
        nets.store.num_scalars()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Real;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            h_hidden: vec![6, 5],
            feat_hidden: vec![5, 4],
            feat_out: 3,
            icnn_hidden: vec![6, 5],
            lipschitz: 2.0,
            smoothing: 0.1,
        }
    }

    #[test]
    fn zero_weight_mlp_returns_bias() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut s, "m", &[2, 3, 2], &mut rng);
        let n = s.num_scalars();
        s.unflatten(&vec![0.0; n]);
        s.get_mut(ParamId(3)).copy_from_slice(&[0.25, -1.5]);
        assert_eq!(mlp.eval(&s, &[7.0, 8.0]), vec![0.25, -1.5]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut s, "m", &[2, 2], &mut rng);
        s.unflatten(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
        assert_eq!(mlp.eval(&s, &[1.0, -1.0]), vec![-0.5, -1.5]);
    }

    #[test]
    fn two_layer_by_hand() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut s, "m", &[1, 2, 1], &mut rng);
        // w0 = [1, -1]ᵀ, b0 = [0, 1], w1 = [2, 3], b1 = 0.5
        s.unflatten(&[1.0, -1.0, 0.0, 1.0, 2.0, 3.0, 0.5]);
        let x = 0.3;
        let expected = 2.0 * math::softplus(x) + 3.0 * math::softplus(1.0 - x) + 0.5;
        assert!((mlp.eval(&s, &[x])[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn icnn_zero_weights_is_bias_and_one_layer_is_sigma() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Icnn::new(&mut s, "c", &[1, 1], 0.1, &mut rng);
        s.unflatten(&[0.0, 0.7]);
        assert_eq!(c.eval(&s, &[3.0]), 0.7);

        // Two layers: z = σ(y), C = softplus(raw)·z with raw chosen so the
        // effective weight is 1.
        let mut s = ParamStore::new();
        let c = Icnn::new(&mut s, "c", &[1, 1, 1], 0.1, &mut rng);
        let raw_one = math::ln(math::exp(1.0) - 1.0);
        // wx0, b0, wx1, u1, b1
        s.unflatten(&[1.0, 0.0, 0.0, raw_one, 0.0]);
        for y in [-1.0, 0.05, 0.2] {
            assert!((c.eval(&s, &[y]) - smooth_relu(y, 0.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn f64_and_tape_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nets = Networks::new(4, small_arch(), &mut rng);
        let x = [0.3, -0.2, 0.9, 0.1];
        let tape = Tape::new();
        let b = nets.bind(&tape);
        let xv = tape.leaf(&x);
        let h = b.h(xv).values();
        for (a, e) in h.iter().zip(nets.h(&x)) {
            assert!((a - e).abs() < 1e-14);
        }
        let (c, g) = b.potential_grad(xv);
        let (ce, ge) = nets.potential_grad(&x);
        assert!((c.value() - ce).abs() < 1e-14);
        for (a, e) in g.values().iter().zip(&ge) {
            assert!((a - e).abs() < 1e-13);
        }
        assert!((nets.potential(&x) - ce).abs() < 1e-15);
    }

    #[test]
    fn potential_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nets = Networks::new(3, small_arch(), &mut rng);
        let x = [0.2, -0.4, 0.7];
        let (_, g) = nets.potential_grad(&x);
        for i in 0..3 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (nets.potential(&xp) - nets.potential(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn input_gradient_is_differentiable_in_parameters() {
        // Second-order check: d/dθ of a scalar built from ∇ₓC(F(x)).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nets = Networks::new(2, small_arch(), &mut rng);
        let x = [0.4, -0.3];
        let w = [0.7, -1.1];
        let objective = |n: &Networks| {
            let (_, g) = n.potential_grad(&x);
            g[0] * w[0] + g[1] * w[1]
        };
        let tape = Tape::new();
        let b = nets.bind(&tape);
        let (_, g) = b.potential_grad(tape.leaf(&x));
        let root = g.dot(tape.leaf(&w));
        let grads = tape.backward(root).unwrap();
        let analytic: Vec<f64> = b.params.iter().flat_map(|p| grads.wrt(*p).to_vec()).collect();
        let theta = nets.store.flatten();
        for k in (0..theta.len()).step_by(7) {
            let h = 1e-5;
            let mut tp = theta.clone();
            tp[k] += h;
            nets.store.unflatten(&tp);
            let fp = objective(&nets);
            tp[k] -= 2.0 * h;
            nets.store.unflatten(&tp);
            let fm = objective(&nets);
            nets.store.unflatten(&theta);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn lipschitz_projection_bounds_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut arch = small_arch();
        arch.lipschitz = 0.5;
        let nets = Networks::new(3, arch, &mut rng);
        let per = math::exp(math::ln(0.5) / 3.0);
        for id in nets.feat.weight_ids() {
            let p = nets.store.param(id);
            let mut v = vec![1.0; p.cols];
            let s = power_iteration(&p.data, p.rows, p.cols, &mut v, 200);
            assert!(s <= per * (1.0 + 1e-6), "{s} > {per}");
        }
    }

    #[test]
    fn effective_icnn_weights_start_near_softplus_minus_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nets = Networks::new(3, Architecture::default(), &mut rng);
        for &id in nets.icnn.raw_z_ids() {
            let mean: f64 = nets.store.get(id).iter().map(|&v| math::softplus(v)).sum::<f64>()
                / nets.store.get(id).len() as f64;
            assert!((mean - math::softplus(-2.0)).abs() < 0.01);
        }
    }
}
