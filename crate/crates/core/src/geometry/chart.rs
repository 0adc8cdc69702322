//! Atlases for the dynamic-chart solver.
//!
//! S³ is covered by the eight stereographic projections from the poles
//! `±e_i`. Chart `k` projects from pole `p = (−1)^k e_{k/2}`. The SPD cone
//! uses one global chart, the matrix logarithm at the identity, and
//! Euclidean factors use the identity. A chart on a product is the tuple of
//! factor charts.

use alloc::vec::Vec;

use super::{spd, Factor, ManifoldKind};
use crate::error::{Error, Result};
use crate::real::{Dual, Real};

/// One chart index per factor.
pub type ChartId = Vec<u8>;

fn pole(k: u8) -> (usize, f64) {
    ((k / 2) as usize, if k.is_multiple_of(2) { 1.0 } else { -1.0 })
}

fn stereo<S: Real>(k: u8, x: &[S]) -> Vec<S> {
    let (i, s) = pole(k);
    let den = -(x[i] * s) + 1.0;
    (0..4).filter(|&j| j != i).map(|j| x[j] / den).collect()
}

fn stereo_inv<S: Real>(k: u8, z: &[S]) -> Vec<S> {
    let (i, s) = pole(k);
    let n = crate::real::vec_ops::dot(z, z);
    let den = n + 1.0;
    let mut out = Vec::with_capacity(4);
    let mut it = z.iter();
    for j in 0..4 {
        if j == i {
            out.push((n - 1.0) * s / den);
        } else {
            out.push(*it.next().expect("three chart coordinates") * 2.0 / den);
        }
    }
    out
}

/// Chart whose pole is farthest from `x`, so `x` maps near the origin.
fn best_stereo(x: &[f64]) -> u8 {
    let mut i = 0;
    for j in 1..4 {
        if x[j].abs() > x[i].abs() {
            i = j;
        }
    }
    // pole = −sign(x_i)·e_i
    2 * i as u8 + if x[i] > 0.0 { 1 } else { 0 }
}

impl Factor {
    fn to_chart<S: Real>(self, k: u8, x: &[S]) -> Vec<S> {
        match self {
            Factor::Euclidean(_) => x.to_vec(),
            Factor::Sphere => stereo(k, x),
            Factor::Spd2 => spd::logm(&spd::from_slice(x)).to_vec(),
        }
    }

    #[allow(clippy::wrong_self_convention)]
    fn from_chart<S: Real>(self, k: u8, z: &[S]) -> Vec<S> {
        match self {
            Factor::Euclidean(_) => z.to_vec(),
            Factor::Sphere => {
                let mut y = stereo_inv(k, z);
                // Exact in exact arithmetic; absorb rounding.
                let n2 = crate::real::vec_ops::dot(&y, &y);
                if (n2.value() - 1.0).abs() > 1e-15 {
                    let n = n2.sqrt();
                    y = y.into_iter().map(|c| c / n).collect();
                }
                y
            }
            Factor::Spd2 => spd::expm(&spd::from_slice(z)).to_vec(),
        }
    }
}

impl ManifoldKind {
    /// The chart in which `x` sits closest to the chart origin.
    pub fn best_chart(&self, x: &[f64]) -> ChartId {
        let mut off = 0;
        self.factors()
            .into_iter()
            .map(|f| {
                let r = off..off + f.ambient_dim();
                off = r.end;
                match f {
                    Factor::Sphere => best_stereo(&x[r]),
                    _ => 0,
                }
            })
            .collect()
    }

    pub fn chart_dim(&self) -> usize {
        self.intrinsic_dim()
    }

    fn chart_blocks(&self) -> Vec<(Factor, core::ops::Range<usize>, core::ops::Range<usize>)> {
        let (mut a, mut c) = (0, 0);
        self.factors()
            .into_iter()
            .map(|f| {
                let ra = a..a + f.ambient_dim();
                let rc = c..c + f.intrinsic_dim();
                a = ra.end;
                c = rc.end;
                (f, ra, rc)
            })
            .collect()
    }

    pub fn to_chart<S: Real>(&self, id: &[u8], x: &[S]) -> Vec<S> {
        self.chart_blocks()
            .into_iter()
            .zip(id)
            .flat_map(|((f, ra, _), &k)| f.to_chart(k, &x[ra]))
            .collect()
    }

    pub fn from_chart<S: Real>(&self, id: &[u8], z: &[S]) -> Vec<S> {
        self.chart_blocks()
            .into_iter()
            .zip(id)
            .flat_map(|((f, _, rc), &k)| f.from_chart(k, &z[rc]))
            .collect()
    }

    /// Differential of the chart map at `x` applied to the ambient tangent `v`.
    pub fn chart_pushforward(&self, id: &[u8], x: &[f64], v: &[f64]) -> Vec<f64> {
        let xd: Vec<Dual<f64>> = x.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect();
        self.to_chart(id, &xd).into_iter().map(|d| d.du).collect()
    }

    /// Fails with [`Error::PointOutsideChart`] when any stereographic block
    /// of the chart coordinates exceeds `radius`.
    pub fn check_chart(&self, id: &[u8], z: &[f64], radius: f64) -> Result<()> {
        for ((f, _, rc), _) in self.chart_blocks().into_iter().zip(id) {
            if f == Factor::Sphere {
                let n2: f64 = z[rc].iter().map(|c| c * c).sum();
                if !(libm::sqrt(n2) <= radius) {
                    return Err(Error::PointOutsideChart);
                }
            }
        }
        Ok(())
    }
}
