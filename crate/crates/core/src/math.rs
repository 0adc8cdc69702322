//! Scalar math for `no_std`, and the smooth "square-root argument" special
//! functions used by the closed-form manifold maps.
//!
//! Every special function here is an entire (or analytic on its domain)
//! function of `q = s²`, so it and its derivatives stay finite at `q = 0`
//! where the naive `sin(s)/s`-style expressions break down.

use serde::{Deserialize, Serialize};

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn ln1p(x: f64) -> f64 {
    libm::log1p(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}
#[inline]
pub fn atan(x: f64) -> f64 {
    libm::atan(x)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}
#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        exp(x)
    } else {
        ln1p(exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Smooth functions of `q` that hide a square root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Special {
    /// `cos(√q)`
    CosSqrt,
    /// `sin(√q)/√q`
    SincSqrt,
    /// `cosh(√q)`
    CoshSqrt,
    /// `sinh(√q)/√q`
    SinhcSqrt,
    /// `atanh(√w)/√w`, defined for `w < 1`
    AtanhcSqrt,
    /// `atan(√w)/√w`, defined for `w ≥ 0`
    AtancSqrt,
}

const SERIES_TERMS: usize = 24;

/// Value, first and second derivative of `Σ a_k q^k`.
fn series(q: f64, coeff: impl Fn(usize) -> f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    // Horner for each derivative order.
    for k in (0..SERIES_TERMS).rev() {
        let a = coeff(k);
        out[0] = out[0] * q + a;
        if k >= 1 {
            out[1] = out[1] * q + a * k as f64;
        }
        if k >= 2 {
            out[2] = out[2] * q + a * (k * (k - 1)) as f64;
        }
    }
    out
}

fn inv_odd_factorial(k: usize) -> f64 {
    // 1/(2k+1)!
    let mut f = 1.0;
    for j in 2..=(2 * k + 1) {
        f *= j as f64;
    }
    1.0 / f
}

fn inv_even_factorial(k: usize) -> f64 {
    // 1/(2k)!
    let mut f = 1.0;
    for j in 2..=(2 * k) {
        f *= j as f64;
    }
    1.0 / f
}

impl Special {
    /// Derivative of the given order (0, 1 or 2) with respect to the argument.
    pub fn eval(self, q: f64, order: u8) -> f64 {
        assert!(order <= 2, "special functions provide derivatives up to order 2");
        let o = order as usize;
        match self {
            Special::CosSqrt => {
                if q.abs() < 1.0 {
                    series(q, |k| sign(k) * inv_even_factorial(k))[o]
                } else {
                    match order {
                        0 => trig(q).0,
                        1 => -0.5 * Special::SincSqrt.eval(q, 0),
                        _ => -0.5 * Special::SincSqrt.eval(q, 1),
                    }
                }
            }
            Special::SincSqrt => {
                if q.abs() < 1.0 {
                    series(q, |k| sign(k) * inv_odd_factorial(k))[o]
                } else {
                    let (b, a) = trig(q);
                    let d1 = (b - a) / (2.0 * q);
                    match order {
                        0 => a,
                        1 => d1,
                        _ => (-0.5 * a - 3.0 * d1) / (2.0 * q),
                    }
                }
            }
            Special::CoshSqrt => {
                if q.abs() < 1.0 {
                    series(q, inv_even_factorial)[o]
                } else {
                    match order {
                        0 => hyp(q).0,
                        1 => 0.5 * Special::SinhcSqrt.eval(q, 0),
                        _ => 0.5 * Special::SinhcSqrt.eval(q, 1),
                    }
                }
            }
            Special::SinhcSqrt => {
                if q.abs() < 1.0 {
                    series(q, inv_odd_factorial)[o]
                } else {
                    let (b, a) = hyp(q);
                    let d1 = (b - a) / (2.0 * q);
                    match order {
                        0 => a,
                        1 => d1,
                        _ => (0.5 * a - 3.0 * d1) / (2.0 * q),
                    }
                }
            }
            Special::AtanhcSqrt => {
                if q.abs() < 0.2 {
                    series(q, |k| 1.0 / (2 * k + 1) as f64)[o]
                } else {
                    let s = sqrt(q);
                    let a = 0.5 * ln((1.0 + s) / (1.0 - s)) / s;
                    let r = 1.0 / (1.0 - q);
                    let d1 = (r - a) / (2.0 * q);
                    match order {
                        0 => a,
                        1 => d1,
                        _ => (r * r - 3.0 * d1) / (2.0 * q),
                    }
                }
            }
            Special::AtancSqrt => {
                if q.abs() < 0.2 {
                    series(q, |k| sign(k) / (2 * k + 1) as f64)[o]
                } else {
                    let s = sqrt(q);
                    let a = atan(s) / s;
                    let r = 1.0 / (1.0 + q);
                    let d1 = (r - a) / (2.0 * q);
                    match order {
                        0 => a,
                        1 => d1,
                        _ => (-r * r - 3.0 * d1) / (2.0 * q),
                    }
                }
            }
        }
    }
}

fn sign(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `(cos √q, sin √q / √q)`, continued to `q < 0` through the hyperbolic
/// functions. Only used away from `q = 0`.
fn trig(q: f64) -> (f64, f64) {
    if q > 0.0 {
        let s = sqrt(q);
        (cos(s), sin(s) / s)
    } else {
        let s = sqrt(-q);
        (libm::cosh(s), libm::sinh(s) / s)
    }
}

/// `(cosh √q, sinh √q / √q)`, the mirror image of [`trig`].
fn hyp(q: f64) -> (f64, f64) {
    trig(-q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5 * x.abs().max(1e-2);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn closed_forms_match_definitions() {
        for &q in &[0.0, 1e-12, 0.3, 0.99, 1.01, 2.5, 9.0] {
            let s = sqrt(q);
            if q > 0.0 {
                assert!((Special::SincSqrt.eval(q, 0) - sin(s) / s).abs() < 1e-14);
                assert!((Special::SinhcSqrt.eval(q, 0) - libm::sinh(s) / s).abs() < 1e-13);
                assert!((Special::AtancSqrt.eval(q, 0) - atan(s) / s).abs() < 1e-14);
            }
            assert!((Special::CosSqrt.eval(q, 0) - cos(s)).abs() < 1e-14);
            assert!((Special::CoshSqrt.eval(q, 0) - libm::cosh(s)).abs() < 1e-13);
        }
        for &w in &[1e-9, 0.1, 0.19, 0.21, 0.5, 0.9] {
            let s = sqrt(w);
            assert!((Special::AtanhcSqrt.eval(w, 0) - libm::atanh(s) / s).abs() < 1e-13);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fns = [
            Special::CosSqrt,
            Special::SincSqrt,
            Special::CoshSqrt,
            Special::SinhcSqrt,
            Special::AtanhcSqrt,
            Special::AtancSqrt,
        ];
        let points = [0.05, 0.15, 0.25, 0.7, 0.95, 1.05, 3.0];
        for f in fns {
            for &q in &points {
                if f == Special::AtanhcSqrt && q >= 0.9 {
                    continue;
                }
                for order in 0..2u8 {
                    let num = fd(|x| f.eval(x, order), q);
                    let ana = f.eval(q, order + 1);
                    assert!(
                        (num - ana).abs() < 1e-7 * (1.0 + ana.abs()),
                        "{f:?} order {order} at {q}: fd {num} vs {ana}"
                    );
                }
            }
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        for f in [Special::SincSqrt, Special::SinhcSqrt, Special::CosSqrt, Special::CoshSqrt] {
            for o in 0..3 {
                let a = f.eval(1.0 - 1e-12, o);
                let b = f.eval(1.0 + 1e-12, o);
                assert!((a - b).abs() < 1e-9, "{f:?} order {o}: {a} vs {b}");
            }
        }
        for f in [Special::AtanhcSqrt, Special::AtancSqrt] {
            for o in 0..3 {
                let a = f.eval(0.2 - 1e-12, o);
                let b = f.eval(0.2 + 1e-12, o);
                assert!((a - b).abs() < 1e-9, "{f:?} order {o}: {a} vs {b}");
            }
        }
    }
}
