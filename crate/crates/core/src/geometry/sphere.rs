//! Unit quaternions as the round sphere S³ ⊂ ℝ⁴.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Special;
use crate::real::{vec_ops as vo, Real};

/// Antipode distance below which `log` refuses to pick a direction.
pub const CUT_LOCUS_TOL: f64 = 1e-6;

pub fn project<S: Real>(x: &[S], v: &[S]) -> Vec<S> {
    let c = vo::dot(x, v);
    v.iter().zip(x).map(|(&vi, &xi)| vi - xi * c).collect()
}

pub fn exp<S: Real>(x: &[S], u: &[S]) -> Vec<S> {
    let q = vo::dot(u, u);
    let a = q.special(Special::CosSqrt, 0);
    let b = q.special(Special::SincSqrt, 0);
    let y: Vec<S> = x.iter().zip(u).map(|(&xi, &ui)| xi * a + ui * b).collect();
    let n2 = vo::dot(&y, &y);
    if (n2.value() - 1.0).abs() > 1e-15 {
        let inv = n2.sqrt();
        y.into_iter().map(|c| c / inv).collect()
    } else {
        y
    }
}

/// Returns `(r, w)` with `log_x(y) = r·w` and `d(x, y)² = r²‖w‖²`.
fn log_parts<S: Real>(x: &[S], y: &[S]) -> Result<(S, Vec<S>, S)> {
    let gap: f64 = x.iter().zip(y).map(|(a, b)| (a.value() + b.value()).powi(2)).sum();
    if libm::sqrt(gap) < CUT_LOCUS_TOL {
        return Err(Error::CutLocus);
    }
    let c = vo::dot(x, y);
    let w: Vec<S> = y.iter().zip(x).map(|(&yi, &xi)| yi - xi * c).collect();
    let q = vo::dot(&w, &w);
    let r = if c.value() >= 0.5 {
        (q / (c * c)).special(Special::AtancSqrt, 0) / c
    } else {
        let s = q.sqrt();
        (c / (c * c + q).sqrt()).acos() / s
    };
    Ok((r, w, q))
}

pub fn log<S: Real>(x: &[S], y: &[S]) -> Result<Vec<S>> {
    let (r, w, _) = log_parts(x, y)?;
    Ok(vo::scale(&w, r))
}

pub fn dist_sq<S: Real>(x: &[S], y: &[S]) -> Result<S> {
    let (r, _, q) = log_parts(x, y)?;
    Ok(r * r * q)
}

/// Plain-f64 geodesic distance, defined everywhere including the antipode.
pub fn distance(x: &[f64], y: &[f64]) -> f64 {
    let c: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let w2: f64 = x.iter().zip(y).map(|(a, b)| (b - a * c).powi(2)).sum();
    libm::atan2(libm::sqrt(w2), c)
}

pub fn validate(x: &[f64], tol: f64) -> Result<()> {
    let n = libm::sqrt(x.iter().map(|c| c * c).sum::<f64>());
    if (n - 1.0).abs() > tol {
        return Err(Error::OffManifold(alloc::format!("quaternion norm {n}")));
    }
    Ok(())
}
