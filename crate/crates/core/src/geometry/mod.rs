//! Riemannian manifolds embedded in ambient coordinates.
//!
//! All operations take plain coordinate slices and are generic over
//! [`Real`], so the same code evaluates, records onto a tape, or
//! propagates dual numbers. [`ManifoldPoint`] and [`TangentVector`] are thin
//! validated wrappers for API users.

mod chart;
mod sample;
pub mod spd;
pub mod sphere;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{Dual, Real};

pub use chart::ChartId;

/// Norm tolerance for quaternions passed in by callers.
pub const POINT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    Euclidean(usize),
    UnitQuaternion,
    Spd2,
    Product(Vec<ManifoldKind>),
}

/// A non-product factor of a manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    Euclidean(usize),
    Sphere,
    Spd2,
}

impl Factor {
    pub fn ambient_dim(self) -> usize {
        match self {
            Factor::Euclidean(n) => n,
            Factor::Sphere => 4,
            Factor::Spd2 => 3,
        }
    }

    pub fn intrinsic_dim(self) -> usize {
        match self {
            Factor::Euclidean(n) => n,
            Factor::Sphere | Factor::Spd2 => 3,
        }
    }

    fn project<S: Real>(self, x: &[S], v: &[S]) -> Vec<S> {
        match self {
            Factor::Sphere => sphere::project(x, v),
            _ => v.to_vec(),
        }
    }

    fn exp<S: Real>(self, x: &[S], u: &[S]) -> Vec<S> {
        match self {
            Factor::Euclidean(_) => x.iter().zip(u).map(|(&a, &b)| a + b).collect(),
            Factor::Sphere => sphere::exp(x, u),
            Factor::Spd2 => spd::exp(x, u),
        }
    }

    fn log<S: Real>(self, x: &[S], y: &[S]) -> Result<Vec<S>> {
        match self {
            Factor::Euclidean(_) => Ok(y.iter().zip(x).map(|(&a, &b)| a - b).collect()),
            Factor::Sphere => sphere::log(x, y),
            Factor::Spd2 => Ok(spd::log(x, y)),
        }
    }

    fn dist_sq<S: Real>(self, x: &[S], y: &[S]) -> Result<S> {
        match self {
            Factor::Euclidean(_) => {
                let d: Vec<S> = y.iter().zip(x).map(|(&a, &b)| a - b).collect();
                Ok(crate::real::vec_ops::dot(&d, &d))
            }
            Factor::Sphere => sphere::dist_sq(x, y),
            Factor::Spd2 => Ok(spd::dist_sq(x, y)),
        }
    }

    fn inner<S: Real>(self, x: &[S], u: &[S], v: &[S]) -> S {
        match self {
            Factor::Spd2 => spd::inner(x, u, v),
            _ => crate::real::vec_ops::dot(u, v),
        }
    }

    fn riemannian_grad<S: Real>(self, x: &[S], g: &[S]) -> Vec<S> {
        match self {
            Factor::Euclidean(_) => g.to_vec(),
            Factor::Sphere => sphere::project(x, g),
            Factor::Spd2 => spd::riemannian_grad(x, g),
        }
    }

    fn validate(self, x: &[f64], tol: f64) -> Result<()> {
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("coordinates {x:?}")));
        }
        match self {
            Factor::Euclidean(_) => Ok(()),
            Factor::Sphere => sphere::validate(x, tol),
            Factor::Spd2 => spd::validate(x),
        }
    }
}

impl ManifoldKind {
    /// Flattened list of non-product factors.
    pub fn factors(&self) -> Vec<Factor> {
        let mut out = Vec::new();
        self.push_factors(&mut out);
        out
    }

    fn push_factors(&self, out: &mut Vec<Factor>) {
        match self {
            ManifoldKind::Euclidean(n) => out.push(Factor::Euclidean(*n)),
            ManifoldKind::UnitQuaternion => out.push(Factor::Sphere),
            ManifoldKind::Spd2 => out.push(Factor::Spd2),
            ManifoldKind::Product(parts) => parts.iter().for_each(|p| p.push_factors(out)),
        }
    }

    /// `ℝ³ × S³` repeated `k` times.
    pub fn stacked_pose(k: usize) -> Self {
        let mut parts = Vec::new();
        for _ in 0..k {
            parts.push(ManifoldKind::Euclidean(3));
            parts.push(ManifoldKind::UnitQuaternion);
        }
        ManifoldKind::Product(parts)
    }

    pub fn ambient_dim(&self) -> usize {
        self.factors().iter().map(|f| f.ambient_dim()).sum()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.factors().iter().map(|f| f.intrinsic_dim()).sum()
    }

    /// True on flat-or-negatively-curved manifolds with no cut locus.
    pub fn is_hadamard(&self) -> bool {
        !self.factors().contains(&Factor::Sphere)
    }

    pub fn check_dim(&self, len: usize) -> Result<()> {
        let expected = self.ambient_dim();
        if len != expected {
            return Err(Error::DimensionMismatch { expected, got: len });
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<(Factor, core::ops::Range<usize>)> {
        let mut off = 0;
        self.factors()
            .into_iter()
            .map(|f| {
                let r = off..off + f.ambient_dim();
                off = r.end;
                (f, r)
            })
            .collect()
    }

    fn map_blocks<S: Real>(&self, f: impl Fn(Factor, core::ops::Range<usize>) -> Vec<S>) -> Vec<S> {
        match self {
            ManifoldKind::Product(_) => self.blocks().into_iter().flat_map(|(fac, r)| f(fac, r)).collect(),
            _ => f(self.factors()[0], 0..self.ambient_dim()),
        }
    }

    fn try_map_blocks<S: Real>(
        &self,
        f: impl Fn(Factor, core::ops::Range<usize>) -> Result<Vec<S>>,
    ) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(self.ambient_dim());
        for (fac, r) in self.blocks() {
            out.extend(f(fac, r)?);
        }
        Ok(out)
    }

    fn sum_blocks<S: Real>(&self, f: impl Fn(Factor, core::ops::Range<usize>) -> Result<S>) -> Result<S> {
        let mut acc: Option<S> = None;
        for (fac, r) in self.blocks() {
            let v = f(fac, r)?;
            acc = Some(match acc {
                None => v,
                Some(a) => a + v,
            });
        }
        Ok(acc.expect("manifold has at least one factor"))
    }

    pub fn validate(&self, x: &[f64]) -> Result<()> {
        self.validate_tol(x, POINT_TOL)
    }

    pub fn validate_tol(&self, x: &[f64], tol: f64) -> Result<()> {
        self.check_dim(x.len())?;
        for (fac, r) in self.blocks() {
            fac.validate(&x[r], tol)?;
        }
        Ok(())
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project<S: Real>(&self, x: &[S], v: &[S]) -> Vec<S> {
        self.map_blocks(|f, r| f.project(&x[r.clone()], &v[r]))
    }

    pub fn exp<S: Real>(&self, x: &[S], u: &[S]) -> Vec<S> {
        self.map_blocks(|f, r| f.exp(&x[r.clone()], &u[r]))
    }

    pub fn log<S: Real>(&self, x: &[S], y: &[S]) -> Result<Vec<S>> {
        self.try_map_blocks(|f, r| f.log(&x[r.clone()], &y[r]))
    }

    /// Squared geodesic distance; exactly zero for coincident points.
    pub fn dist_sq<S: Real>(&self, x: &[S], y: &[S]) -> Result<S> {
        if x.iter().zip(y).all(|(a, b)| a.value() == b.value()) {
            // d² is stationary at the diagonal, so the constant loses no
            // first-order information.
            return Ok(x[0].zero_like());
        }
        self.sum_blocks(|f, r| f.dist_sq(&x[r.clone()], &y[r]))
    }

    /// Geodesic distance, total on every pair of points (the S³ antipode
    /// is at distance π).
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            return 0.0;
        }
        let mut acc = 0.0;
        for (f, r) in self.blocks() {
            acc += match f {
                Factor::Sphere => sphere::distance(&x[r.clone()], &y[r]).powi(2),
                _ => f.dist_sq(&x[r.clone()], &y[r]).expect("total on Hadamard factors"),
            };
        }
        libm::sqrt(acc)
    }

    pub fn inner<S: Real>(&self, x: &[S], u: &[S], v: &[S]) -> S {
        self.sum_blocks(|f, r| Ok(f.inner(&x[r.clone()], &u[r.clone()], &v[r])))
            .expect("inner is total")
    }

    pub fn norm_sq<S: Real>(&self, x: &[S], u: &[S]) -> S {
        self.inner(x, u, u)
    }

    /// Riemannian gradient from the ambient (coordinate) gradient.
    pub fn riemannian_grad<S: Real>(&self, x: &[S], g: &[S]) -> Vec<S> {
        self.map_blocks(|f, r| f.riemannian_grad(&x[r.clone()], &g[r]))
    }

    /// Derivative of `y ↦ log_{xr}(y)` at `y` along `w`.
    pub fn dlog<S: Real>(&self, xr: &[S], y: &[S], w: &[S]) -> Result<Vec<S>> {
        let xr_d: Vec<Dual<S>> = xr.iter().map(|&c| Dual::constant(c)).collect();
        let y_d: Vec<Dual<S>> = y.iter().zip(w).map(|(&a, &b)| Dual::new(a, b)).collect();
        let l = self.log(&xr_d, &y_d)?;
        Ok(l.into_iter().map(|d| d.du).collect())
    }

    /// Point on the geodesic from `x` to `y` at fraction `s`.
    pub fn geodesic(&self, x: &[f64], y: &[f64], s: f64) -> Result<Vec<f64>> {
        let u = self.log(x, y)?;
        let su: Vec<f64> = u.iter().map(|c| c * s).collect();
        Ok(self.exp(x, &su))
    }

    /// Whether `x` lies within `radius` of the exclusion set of the distance
    /// term centered at `xe` (the antipode on every sphere factor).
    pub fn near_exclusion(&self, x: &[f64], xe: &[f64], radius: f64) -> bool {
        self.blocks().into_iter().any(|(f, r)| {
            f == Factor::Sphere && {
                let anti: Vec<f64> = xe[r.clone()].iter().map(|c| -c).collect();
                sphere::distance(&x[r], &anti) < radius
            }
        })
    }

    /// Antipode of `xe` on every sphere factor, other blocks unchanged.
    /// Returns `None` on Hadamard manifolds where the exclusion set is empty.
    pub fn exclusion_point(&self, xe: &[f64]) -> Option<Vec<f64>> {
        if self.is_hadamard() {
            return None;
        }
        Some(self.map_blocks(|f, r| match f {
            Factor::Sphere => xe[r].iter().map(|c| -c).collect(),
            _ => xe[r].to_vec(),
        }))
    }

    /// Renormalize sphere blocks to unit length.
    pub fn normalize(&self, x: &mut [f64]) {
        for (f, r) in self.blocks() {
            if f == Factor::Sphere {
                let n = libm::sqrt(x[r.clone()].iter().map(|c| c * c).sum::<f64>());
                x[r].iter_mut().for_each(|c| *c /= n);
            }
        }
    }

    /// Flip sphere blocks of `x` that point away from `prev` (double cover).
    /// Returns whether anything was flipped.
    pub fn align_hemisphere(&self, prev: &[f64], x: &mut [f64]) -> bool {
        let mut flipped = false;
        for (f, r) in self.blocks() {
            if f == Factor::Sphere {
                let d: f64 = prev[r.clone()].iter().zip(&x[r.clone()]).map(|(a, b)| a * b).sum();
                if d < 0.0 {
                    x[r].iter_mut().for_each(|c| *c = -*c);
                    flipped = true;
                }
            }
        }
        flipped
    }

    /// A canonical base point: origin, identity quaternion, identity matrix.
    pub fn origin(&self) -> Vec<f64> {
        self.map_blocks(|f, _| match f {
            Factor::Euclidean(n) => alloc::vec![0.0; n],
            Factor::Sphere => alloc::vec![1.0, 0.0, 0.0, 0.0],
            Factor::Spd2 => alloc::vec![1.0, 0.0, 1.0],
        })
    }

    pub fn name(&self) -> alloc::string::String {
        use alloc::string::ToString;
        match self {
            ManifoldKind::Euclidean(n) => alloc::format!("R{n}"),
            ManifoldKind::UnitQuaternion => "S3".to_string(),
            ManifoldKind::Spd2 => "SPD2".to_string(),
            ManifoldKind::Product(p) => p.iter().map(|m| m.name()).collect::<Vec<_>>().join("x"),
        }
    }

    /// Inverse of [`ManifoldKind::name`]: `R<n>`, `S3`, `SPD2`, or factors
    /// joined by `x` such as `R3xS3`. Case-insensitive.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(alloc::format!("unknown manifold {s:?}; expected R<n>, S3, SPD2 or a product like R3xS3"));
        let one = |t: &str| -> Result<Self> {
            let t = t.to_ascii_uppercase();
            match t.as_str() {
                "S3" => Ok(ManifoldKind::UnitQuaternion),
                "SPD2" => Ok(ManifoldKind::Spd2),
                _ => match t.strip_prefix('R').and_then(|n| n.parse::<usize>().ok()) {
                    Some(n) if n > 0 => Ok(ManifoldKind::Euclidean(n)),
                    _ => Err(bad()),
                },
            }
        };
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() == 1 {
            return one(parts[0]);
        }
        Ok(ManifoldKind::Product(parts.into_iter().map(one).collect::<Result<_>>()?))
    }
}

/// A validated point on a manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub manifold: ManifoldKind,
    pub coords: Vec<f64>,
}

/// A tangent vector at a base point, in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    pub coords: Vec<f64>,
}

impl ManifoldPoint {
    pub fn new(manifold: ManifoldKind, coords: Vec<f64>) -> Result<Self> {
        manifold.validate(&coords)?;
        Ok(Self { manifold, coords })
    }

    pub fn project_tangent(&self, v: &[f64]) -> Result<TangentVector> {
        self.manifold.check_dim(v.len())?;
        Ok(self.tangent_unchecked(self.manifold.project(&self.coords, v)))
    }

    fn tangent_unchecked(&self, coords: Vec<f64>) -> TangentVector {
        TangentVector { base: self.clone(), coords }
    }

    pub fn zero_tangent(&self) -> TangentVector {
        self.tangent_unchecked(alloc::vec![0.0; self.coords.len()])
    }

    pub fn exp(&self, u: &TangentVector) -> Result<ManifoldPoint> {
        self.same_base(u)?;
        Ok(ManifoldPoint { manifold: self.manifold.clone(), coords: self.manifold.exp(&self.coords, &u.coords) })
    }

    pub fn log(&self, y: &ManifoldPoint) -> Result<TangentVector> {
        self.same_manifold(y)?;
        Ok(self.tangent_unchecked(self.manifold.log(&self.coords, &y.coords)?))
    }

    pub fn distance(&self, y: &ManifoldPoint) -> Result<f64> {
        self.same_manifold(y)?;
        Ok(self.manifold.distance(&self.coords, &y.coords))
    }

    pub fn inner(&self, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        self.same_base(u)?;
        self.same_base(v)?;
        Ok(self.manifold.inner(&self.coords, &u.coords, &v.coords))
    }

    pub fn riemannian_grad(&self, ambient_grad: &[f64]) -> Result<TangentVector> {
        self.manifold.check_dim(ambient_grad.len())?;
        Ok(self.tangent_unchecked(self.manifold.riemannian_grad(&self.coords, ambient_grad)))
    }

    fn same_manifold(&self, y: &ManifoldPoint) -> Result<()> {
        if self.manifold != y.manifold {
            return Err(Error::InvalidConfig(alloc::format!(
                "manifold mismatch: {} vs {}",
                self.manifold.name(),
                y.manifold.name()
            )));
        }
        Ok(())
    }

    fn same_base(&self, u: &TangentVector) -> Result<()> {
        self.manifold.check_dim(u.coords.len())?;
        if u.base.coords != self.coords {
            return Err(Error::InvalidConfig("tangent vector based at a different point".into()));
        }
        Ok(())
    }
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.base.manifold.norm_sq(&self.base.coords, &self.coords))
    }
}
