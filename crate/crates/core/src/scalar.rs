//! Numeric abstraction for the closed-form analysis.
//!
//! Every rate, weight and length formula is written once against [`Scalar`]
//! and instantiated for `f64` (fast sweeps) or [`Exact`] (rational checks of
//! small hand-computable cases).

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Field-like number usable by the analysis module: `f32`, `f64` or a rational.
pub trait Scalar:
    Clone + Debug + PartialOrd + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn from_count(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("integer representable in scalar")
    }

    /// Lossy conversion used for reporting and tolerance checks.
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn abs_diff(&self, other: &Self) -> Self {
        if self >= other {
            self.clone() - other.clone()
        } else {
            other.clone() - self.clone()
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl<T> Scalar for T where
    T: Clone + Debug + PartialOrd + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

/// Exact rational scalar for small configurations.
pub type Exact = num_rational::Ratio<i128>;

/// Binomial coefficient as a scalar. Exact for the sizes used here (n ≤ 60).
pub fn binomial<T: Scalar>(n: usize, k: usize) -> T {
    T::from_count(binomial_u64(n, k))
}

pub fn binomial_u64(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// `base^exp` by repeated multiplication; works for rationals.
pub fn pow<T: Scalar>(base: &T, exp: usize) -> T {
    let mut acc = T::one();
    for _ in 0..exp {
        acc = acc * base.clone();
    }
    acc
}
