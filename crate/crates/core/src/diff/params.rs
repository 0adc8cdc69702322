use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use crate::math;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    #[serde(skip)]
    m: Vec<f64>,
    #[serde(skip)]
    v: Vec<f64>,
    #[serde(skip)]
    step: u64,
}

impl Param {
    fn ensure_state(&mut self) {
        if self.m.len() != self.data.len() {
            self.m = vec![0.0; self.data.len()];
            self.v = vec![0.0; self.data.len()];
            self.step = 0;
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameter tensors with AdamW moment state.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Bumped on every mutation so callers can invalidate caches.
    #[serde(skip)]
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert_eq!(rows * cols, data.len(), "parameter shape mismatch");
        self.version += 1;
        let n = data.len();
        self.params.push(Param {
            name: name.into(),
            rows,
            cols,
            data,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.version += 1;
        &mut self.params[id.0].data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// All parameters concatenated in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length mismatch");
        self.version += 1;
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// One tape leaf per parameter, in insertion order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.matrix(p.rows, p.cols, &p.data)).collect()
    }

    /// Read the adjoints of bound leaves. Parameters that did not influence
    /// the root get an all-zero gradient.
    pub fn collect_grads(&self, leaves: &[Var<'_>], grads: &Gradients) -> Vec<Vec<f64>> {
        leaves.iter().map(|&l| grads.wrt(l).to_vec()).collect()
    }

    pub fn reset_optimizer(&mut self) {
        for p in &mut self.params {
            p.m = vec![0.0; p.data.len()];
            p.v = vec![0.0; p.data.len()];
            p.step = 0;
        }
    }

    /// Decoupled-weight-decay Adam update. `None` entries are skipped
    /// entirely (no decay, no moment update).
    pub fn adamw_step(&mut self, grads: &[Option<Vec<f64>>], opt: &AdamW) {
        assert_eq!(grads.len(), self.params.len(), "gradient count mismatch");
        self.version += 1;
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            assert_eq!(g.len(), p.data.len(), "gradient shape mismatch for {}", p.name);
            p.ensure_state();
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - math::powi(opt.beta1, t);
            let bc2 = 1.0 - math::powi(opt.beta2, t);
            let decay = 1.0 - opt.lr * opt.weight_decay;
            for k in 0..g.len() {
                p.m[k] = opt.beta1 * p.m[k] + (1.0 - opt.beta1) * g[k];
                p.v[k] = opt.beta2 * p.v[k] + (1.0 - opt.beta2) * g[k] * g[k];
                let mhat = p.m[k] / bc1;
                let vhat = p.v[k] / bc2;
                p.data[k] = p.data[k] * decay - opt.lr * mhat / (math::sqrt(vhat) + opt.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(lr: f64, wd: f64) -> AdamW {
        AdamW { lr, weight_decay: wd, ..AdamW::default() }
    }

    #[test]
    fn zero_gradient_no_decay_keeps_parameters() {
        let mut s = ParamStore::new();
        let id = s.add("w", 1, 3, vec![1.0, -2.0, 0.5]);
        s.adamw_step(&[Some(vec![0.0; 3])], &opt(0.1, 0.0));
        assert_eq!(s.get(id), &[1.0, -2.0, 0.5]);
        assert_eq!(s.param(id).step_count(), 1);
    }

    #[test]
    fn weight_decay_shrinks_geometrically() {
        let mut s = ParamStore::new();
        let id = s.add("w", 1, 1, vec![2.0]);
        let o = opt(0.1, 0.5);
        for k in 1..=5 {
            s.adamw_step(&[Some(vec![0.0])], &o);
            let expected = 2.0 * math::powi(1.0 - 0.05, k);
            assert!((s.get(id)[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_matches_scalar_recurrence() {
        // With constant g, m̂ = g and v̂ = g² at every step, so each step moves
        // by lr·g/(|g| + ϵ).
        let mut s = ParamStore::new();
        let id = s.add("w", 1, 1, vec![0.0]);
        let o = opt(0.01, 0.0);
        let g = 0.3;
        let mut x = 0.0;
        for _ in 0..10 {
            s.adamw_step(&[Some(vec![g])], &o);
            x -= o.lr * g / (g + o.eps);
            assert!((s.get(id)[0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn none_gradient_is_skipped() {
        let mut s = ParamStore::new();
        let a = s.add("a", 1, 1, vec![1.0]);
        let b = s.add("b", 1, 1, vec![1.0]);
        s.adamw_step(&[None, Some(vec![1.0])], &opt(0.1, 0.1));
        assert_eq!(s.get(a), &[1.0]);
        assert!(s.get(b)[0] < 1.0);
    }

    #[test]
    fn flatten_round_trip() {
        let mut s = ParamStore::new();
        s.add("a", 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        s.add("b", 1, 1, vec![5.0]);
        let mut f = s.flatten();
        f[4] = 7.0;
        s.unflatten(&f);
        assert_eq!(s.flatten(), vec![1.0, 2.0, 3.0, 4.0, 7.0]);
        assert_eq!(s.find("b"), Some(ParamId(1)));
    }

    #[test]
    fn bound_leaves_receive_gradients() {
        let mut s = ParamStore::new();
        s.add("w", 1, 2, vec![3.0, 4.0]);
        let tape = Tape::new();
        let leaves = s.bind(&tape);
        let root = leaves[0].dot(leaves[0]);
        let g = tape.backward(root).unwrap();
        assert_eq!(s.collect_grads(&leaves, &g), vec![vec![6.0, 8.0]]);
    }
}
