//! Scalar abstraction shared by plain evaluation, the reverse-mode tape and
//! forward-mode dual numbers.
//!
//! Geometry and the stable field are written once against [`Real`]; running
//! them with `f64` evaluates, with [`crate::diff::Var`] records onto a tape,
//! and with [`Dual`] computes directional derivatives (pushforwards).

use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::{self, Special};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Primal value.
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, v: f64) -> Self;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn acos(self) -> Self;
    fn relu(self) -> Self;
    /// Derivative of the given order of a [`Special`] function.
    fn special(self, f: Special, order: u8) -> Self;

    fn square(self) -> Self {
        self * self
    }
    fn zero_like(self) -> Self {
        self.lift(0.0)
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, v: f64) -> Self {
        v
    }
    #[inline]
    fn sqrt(self) -> Self {
        math::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        math::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        math::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        math::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        math::cos(self)
    }
    #[inline]
    fn acos(self) -> Self {
        math::acos(self)
    }
    #[inline]
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn special(self, f: Special, order: u8) -> Self {
        f.eval(self, order)
    }
}

/// Forward-mode dual number `re + ε·du` over any [`Real`].
#[derive(Clone, Copy, Debug)]
pub struct Dual<S> {
    pub re: S,
    pub du: S,
}

impl<S: Real> Dual<S> {
    pub fn new(re: S, du: S) -> Self {
        Self { re, du }
    }
    pub fn constant(re: S) -> Self {
        Self { re, du: re.zero_like() }
    }
}

impl<S: Real> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}
impl<S: Real> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}
impl<S: Real> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}
impl<S: Real> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.du - q * o.du) / o.re)
    }
}
impl<S: Real> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}
impl<S: Real> Add<f64> for Dual<S> {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Dual::new(self.re + o, self.du)
    }
}
impl<S: Real> Sub<f64> for Dual<S> {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Dual::new(self.re - o, self.du)
    }
}
impl<S: Real> Mul<f64> for Dual<S> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Dual::new(self.re * o, self.du * o)
    }
}
impl<S: Real> Div<f64> for Dual<S> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        Dual::new(self.re / o, self.du / o)
    }
}

impl<S: Real> Real for Dual<S> {
    fn value(self) -> f64 {
        self.re.value()
    }
    fn lift(self, v: f64) -> Self {
        Dual::constant(self.re.lift(v))
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        if r.value() == 0.0 {
            return Dual::new(r, self.du.zero_like());
        }
        Dual::new(r, self.du / (r * 2.0))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.du * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.du * self.re.sin()))
    }
    fn acos(self) -> Self {
        let d = (-(self.re * self.re) + 1.0).sqrt();
        Dual::new(self.re.acos(), -(self.du / d))
    }
    fn relu(self) -> Self {
        if self.re.value() > 0.0 {
            self
        } else {
            Dual::constant(self.re.zero_like())
        }
    }
    fn special(self, f: Special, order: u8) -> Self {
        Dual::new(self.re.special(f, order), self.re.special(f, order + 1) * self.du)
    }
}

/// Directional derivative of a vector function at `x` along `dir`.
pub fn pushforward<S: Real>(
    x: &[S],
    dir: &[S],
    f: impl Fn(&[Dual<S>]) -> alloc::vec::Vec<Dual<S>>,
) -> alloc::vec::Vec<S> {
    let xd: alloc::vec::Vec<Dual<S>> = x.iter().zip(dir).map(|(&a, &b)| Dual::new(a, b)).collect();
    f(&xd).into_iter().map(|d| d.du).collect()
}

/// Elementwise helpers over slices of [`Real`].
pub mod vec_ops {
    use super::Real;
    use alloc::vec::Vec;

    pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = a[0] * b[0];
        for i in 1..a.len() {
            acc = acc + a[i] * b[i];
        }
        acc
    }
    pub fn add<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&x, &y)| x + y).collect()
    }
    pub fn sub<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&x, &y)| x - y).collect()
    }
    pub fn scale<S: Real>(a: &[S], s: S) -> Vec<S> {
        a.iter().map(|&x| x * s).collect()
    }
    pub fn scale_f<S: Real>(a: &[S], s: f64) -> Vec<S> {
        a.iter().map(|&x| x * s).collect()
    }
    /// `a + s·b`
    pub fn axpy<S: Real>(a: &[S], s: f64, b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&x, &y)| x + y * s).collect()
    }
    pub fn lift<S: Real>(ctx: S, v: &[f64]) -> Vec<S> {
        v.iter().map(|&c| ctx.lift(c)).collect()
    }
    pub fn values<S: Real>(v: &[S]) -> Vec<f64> {
        v.iter().map(|c| c.value()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_chain_rule() {
        // d/dx [sqrt(x) * exp(x) / ln(x)] at x = 2
        let f = |x: Dual<f64>| x.sqrt() * x.exp() / x.ln();
        let d = f(Dual::new(2.0, 1.0)).du;
        let h = 1e-6;
        let g = |x: f64| math::sqrt(x) * math::exp(x) / math::ln(x);
        let fd = (g(2.0 + h) - g(2.0 - h)) / (2.0 * h);
        assert!((d - fd).abs() < 1e-8);
    }

    #[test]
    fn dual_over_dual_gives_second_derivative() {
        // sin(x)^2 has second derivative 2cos(2x).
        let x = Dual::new(Dual::new(0.3, 1.0), Dual::new(1.0, 0.0));
        let y = x.sin() * x.sin();
        assert!((y.du.du - 2.0 * math::cos(0.6)).abs() < 1e-14);
    }
}
