//! 2×2 symmetric positive definite matrices under the affine-invariant
//! metric. A symmetric matrix `[[a, b], [b, c]]` is stored as `(a, b, c)`.
//!
//! Matrix functions use closed forms in the trace/discriminant pair
//! `t = (a + c)/2`, `q = ((a − c)/2)² + b²`, so the eigenvalues are `t ± √q`
//! and no eigendecomposition is needed.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Special;
use crate::real::Real;

pub type Sym<S> = [S; 3];

pub fn from_slice<S: Real>(v: &[S]) -> Sym<S> {
    [v[0], v[1], v[2]]
}

fn det<S: Real>(m: &Sym<S>) -> S {
    m[0] * m[2] - m[1] * m[1]
}

fn trace_disc<S: Real>(m: &Sym<S>) -> (S, S) {
    let t = (m[0] + m[2]) * 0.5;
    let h = (m[0] - m[2]) * 0.5;
    (t, h * h + m[1] * m[1])
}

pub fn inv<S: Real>(m: &Sym<S>) -> Sym<S> {
    let d = det(m);
    [m[2] / d, -m[1] / d, m[0] / d]
}

pub fn sqrtm<S: Real>(m: &Sym<S>) -> Sym<S> {
    let sd = det(m).sqrt();
    let n = (m[0] + m[2] + sd * 2.0).sqrt();
    [(m[0] + sd) / n, m[1] / n, (m[2] + sd) / n]
}

pub fn expm<S: Real>(m: &Sym<S>) -> Sym<S> {
    let (t, q) = trace_disc(m);
    let e = t.exp();
    let ch = q.special(Special::CoshSqrt, 0) * e;
    let sh = q.special(Special::SinhcSqrt, 0) * e;
    [ch + sh * (m[0] - t), sh * m[1], ch + sh * (m[2] - t)]
}

/// Principal logarithm of an SPD matrix.
pub fn logm<S: Real>(m: &Sym<S>) -> Sym<S> {
    let (t, q) = trace_disc(m);
    let half_ld = det(m).ln() * 0.5;
    let k = (q / (t * t)).special(Special::AtanhcSqrt, 0) / t;
    [half_ld + k * (m[0] - t), k * m[1], half_ld + k * (m[2] - t)]
}

/// `A·M·A` for symmetric `A` and `M`.
pub fn congruence<S: Real>(a: &Sym<S>, m: &Sym<S>) -> Sym<S> {
    // P = A·M (general), result = P·A.
    let p00 = a[0] * m[0] + a[1] * m[1];
    let p01 = a[0] * m[1] + a[1] * m[2];
    let p10 = a[1] * m[0] + a[2] * m[1];
    let p11 = a[1] * m[1] + a[2] * m[2];
    [p00 * a[0] + p01 * a[1], p00 * a[1] + p01 * a[2], p10 * a[1] + p11 * a[2]]
}

pub fn exp<S: Real>(x: &[S], u: &[S]) -> Vec<S> {
    let x = from_slice(x);
    let s = sqrtm(&x);
    let si = inv(&s);
    let inner = expm(&congruence(&si, &from_slice(u)));
    congruence(&s, &inner).to_vec()
}

pub fn log<S: Real>(x: &[S], y: &[S]) -> Vec<S> {
    let x = from_slice(x);
    let s = sqrtm(&x);
    let si = inv(&s);
    let inner = logm(&congruence(&si, &from_slice(y)));
    congruence(&s, &inner).to_vec()
}

pub fn dist_sq<S: Real>(x: &[S], y: &[S]) -> S {
    let si = inv(&sqrtm(&from_slice(x)));
    let l = logm(&congruence(&si, &from_slice(y)));
    l[0] * l[0] + l[1] * l[1] * 2.0 + l[2] * l[2]
}

/// `tr(X⁻¹ U X⁻¹ V)`
pub fn inner<S: Real>(x: &[S], u: &[S], v: &[S]) -> S {
    let xi = inv(&from_slice(x));
    let a = mul_general(&xi, &from_slice(u));
    let b = mul_general(&xi, &from_slice(v));
    a[0] * b[0] + a[1] * b[2] + a[2] * b[1] + a[3] * b[3]
}

/// Row-major product of two symmetric matrices.
fn mul_general<S: Real>(a: &Sym<S>, b: &Sym<S>) -> [S; 4] {
    [
        a[0] * b[0] + a[1] * b[1],
        a[0] * b[1] + a[1] * b[2],
        a[1] * b[0] + a[2] * b[1],
        a[1] * b[1] + a[2] * b[2],
    ]
}

/// `X·G·X`, where `G` is the coordinate gradient read as a symmetric matrix
/// (the off-diagonal entry is shared by two matrix slots, hence halved).
pub fn riemannian_grad<S: Real>(x: &[S], g: &[S]) -> Vec<S> {
    let gm = [g[0], g[1] * 0.5, g[2]];
    congruence(&from_slice(x), &gm).to_vec()
}

pub fn eigenvalues(m: &[f64]) -> (f64, f64) {
    let (t, q) = trace_disc(&from_slice(m));
    let s = libm::sqrt(q);
    (t - s, t + s)
}

pub fn validate(x: &[f64]) -> Result<()> {
    let (lo, _) = eigenvalues(x);
    if !(lo > 0.0) {
        return Err(Error::OffManifold(alloc::format!("SPD minimum eigenvalue {lo}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Eigendecomposition oracle: f applied to eigenvalues, rebuilt.
    fn eig_apply(m: &[f64; 3], f: impl Fn(f64) -> f64) -> [f64; 3] {
        let (l1, l2) = eigenvalues(m);
        // Eigenvector of l2: (b, l2 − a), or axis-aligned if b = 0.
        let (vx, vy) = if m[1].abs() > 1e-300 {
            (m[1], l2 - m[0])
        } else if m[0] >= m[2] {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n = libm::sqrt(vx * vx + vy * vy);
        let (vx, vy) = (vx / n, vy / n);
        let (f1, f2) = (f(l1), f(l2));
        // f2·vvᵀ + f1·(I − vvᵀ)
        [f1 + (f2 - f1) * vx * vx, (f2 - f1) * vx * vy, f1 + (f2 - f1) * vy * vy]
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn matrix_functions_match_eigen_oracle() {
        let samples = [[2.0, 0.3, 1.0], [1.0, 0.0, 1.0], [0.5, -0.2, 3.0], [4.0, 0.0, 1.0], [1.0, 1e-9, 1.0]];
        for m in samples {
            assert!(close(&expm(&m), &eig_apply(&m, libm::exp), 1e-13), "expm {m:?}");
            assert!(close(&logm(&m), &eig_apply(&m, libm::log), 1e-13), "logm {m:?}");
            assert!(close(&sqrtm(&m), &eig_apply(&m, libm::sqrt), 1e-13), "sqrtm {m:?}");
        }
    }

    #[test]
    fn identity_examples() {
        let i = [1.0, 0.0, 1.0];
        let y = exp(&i, &[0.7, 0.0, 0.7]);
        assert!(close(&y, &[libm::exp(0.7), 0.0, libm::exp(0.7)], 1e-15));
        let l = log(&i, &[4.0, 0.0, 1.0]);
        assert!(close(&l, &[libm::log(4.0), 0.0, 0.0], 1e-15));
        assert!((libm::sqrt(dist_sq(&i, &[4.0, 0.0, 1.0])) - libm::log(4.0)).abs() < 1e-15);
        assert_eq!(inner(&i, &i, &i), 2.0);
    }
}
