//! Gauss-type quadrature on the unit interval and the reference triangle.
//!
//! Triangle rules are collapsed Gauss–Legendre products: the square
//! `(a, b) ∈ (0,1)²` is mapped to `x = a`, `y = b (1 - a)`. All weights are
//! positive and every point lies strictly inside the triangle.

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec2};

pub const MAX_ORDER: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// `{(x, y) : x, y ≥ 0, x + y ≤ 1}`, measure 1/2.
    Triangle,
    /// `(0, 1)`, measure 1. Points are stored as `[t, 0]`.
    Interval,
}

#[derive(Clone, Debug)]
pub struct QuadratureRule<T> {
    pub domain: Domain,
    pub points: Vec<Vec2<T>>,
    pub weights: Vec<T>,
    pub order: usize,
}

impl<T: Real> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Interval abscissae.
    pub fn abscissae(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p[0])
    }

    pub fn integrate(&self, f: impl Fn(Vec2<T>) -> T) -> T {
        self.points.iter().zip(&self.weights).fold(T::zero(), |s, (&p, &w)| s + w * f(p))
    }
}

/// Rule exact for polynomials of total degree `order` (`1 ≤ order ≤ 15`).
pub fn quadrature_rule<T: Real>(domain: Domain, order: usize) -> Result<QuadratureRule<T>> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::UnsupportedOrder(order));
    }
    let (points, weights) = match domain {
        Domain::Interval => {
            let (x, w) = gauss_legendre_01((order + 1).div_ceil(2));
            (x.iter().map(|&t| [T::of(t), T::zero()]).collect(), w.iter().map(|&v| T::of(v)).collect())
        }
        Domain::Triangle => {
            // the collapse adds one power of (1 - a)
            let (xa, wa) = gauss_legendre_01((order + 2).div_ceil(2));
            let (xb, wb) = gauss_legendre_01((order + 1).div_ceil(2));
            let mut pts = Vec::with_capacity(xa.len() * xb.len());
            let mut wts = Vec::with_capacity(xa.len() * xb.len());
            for (&a, &w1) in xa.iter().zip(&wa) {
                for (&b, &w2) in xb.iter().zip(&wb) {
                    pts.push([T::of(a), T::of(b * (1.0 - a))]);
                    wts.push(T::of(w1 * w2 * (1.0 - a)));
                }
            }
            (pts, wts)
        }
    };
    Ok(QuadratureRule { domain, points, weights, order })
}

/// `n`-point Gauss–Legendre nodes and weights on `(0, 1)`, ascending.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n.max(1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        // map [-1, 1] to [0, 1]; z > 0 here, so fill from both ends
        x[n - 1 - i] = 0.5 * (1.0 + z);
        x[i] = 0.5 * (1.0 - z);
        w[n - 1 - i] = 0.5 * wt;
        w[i] = 0.5 * wt;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}
