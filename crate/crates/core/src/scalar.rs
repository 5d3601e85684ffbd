//! Scalar abstraction shared by every numerical module.
//!
//! All geometry, bases, local solvers and the sparse factorization are written
//! against [`Real`], so the same code runs in `f32` or `f64`. The verification
//! tolerances used throughout the test-suite assume `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type usable by the solver: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot hold.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    /// Converts an index or count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Planar point or vector.
pub type Vec2<T> = [T; 2];

/// Row-major 2x2 matrix.
pub type Mat2<T> = [[T; 2]; 2];

#[inline]
pub fn dot<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

/// z-component of `a × b` for in-plane vectors.
#[inline]
pub fn cross<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}

/// `a × (s e_z)` for an in-plane vector `a` and out-of-plane scalar `s`.
#[inline]
pub fn cross_vs<T: Real>(a: Vec2<T>, s: T) -> Vec2<T> {
    [a[1] * s, -a[0] * s]
}

#[inline]
pub fn norm<T: Real>(a: Vec2<T>) -> T {
    a[0].hypot(a[1])
}

/// Pairwise summation; keeps reductions deterministic and accurate.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    match values.len() {
        0 => T::zero(),
        1 => values[0],
        n if n <= 8 => values.iter().copied().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_conventions_follow_3d_embedding() {
        // (d1, d2, 0) x (0, 0, s) = (d2 s, -d1 s, 0)
        assert_eq!(cross_vs([1.0, 2.0], 3.0), [6.0, -3.0]);
        assert_eq!(cross([1.0, 0.0], [0.0, 1.0]), 1.0);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
        assert_eq!(pairwise_sum::<f32>(&[]), 0.0);
    }
}
