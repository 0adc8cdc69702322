//! Random points and tangents for tests, initial conditions and benchmarks.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{spd, Factor, ManifoldKind};

fn gauss<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl ManifoldKind {
    /// A random point: Gaussian with standard deviation `spread` on flat
    /// factors, uniform on spheres, `expm` of a Gaussian symmetric matrix
    /// with entry scale `spread` on SPD factors.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ambient_dim());
        for f in self.factors() {
            match f {
                Factor::Euclidean(n) => out.extend(gauss(rng, n).into_iter().map(|c| c * spread)),
                Factor::Sphere => {
                    let g = gauss(rng, 4);
                    let n = libm::sqrt(g.iter().map(|c| c * c).sum::<f64>());
                    out.extend(g.into_iter().map(|c| c / n));
                }
                Factor::Spd2 => {
                    let g = gauss(rng, 3);
                    let s = [g[0] * spread, g[1] * spread, g[2] * spread];
                    out.extend_from_slice(&spd::expm(&s));
                }
            }
        }
        out
    }

    /// A random tangent vector at `x` with Riemannian norm `norm`.
    pub fn random_tangent<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, norm: f64) -> Vec<f64> {
        loop {
            let v = self.project(x, &gauss(rng, self.ambient_dim()));
            let n2 = self.norm_sq(x, &v);
            if n2 > 1e-12 {
                let s = norm / libm::sqrt(n2);
                return v.into_iter().map(|c| c * s).collect();
            }
        }
    }

    /// A random point at geodesic distance at most `radius` from `x`.
    pub fn random_near<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, radius: f64) -> Vec<f64> {
        let r = radius * rng.random::<f64>();
        let u = self.random_tangent(x, rng, r);
        self.exp(x, &u)
    }
}
