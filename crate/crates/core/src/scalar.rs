//! Numeric abstractions shared by the kernels and the optimizer.
//!
//! Kernels are written against [`Scalar`] so the same code runs in `f32`
//! (the blob storage type) and `f64` (used by tests as a tighter reference).
//! The optimizer is written against [`Cost`], which admits floats as well as
//! exact types such as `num_rational::Ratio<i64>` for oracle comparisons.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive, Zero};

/// Floating point element type for float kernels.
pub trait Scalar:
    Float + FromPrimitive + AddAssign + MulAssign + Sum + Debug + Default + Send + Sync + 'static
{
    /// Convert from `f64`, panicking only on types that cannot hold finite values.
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite value representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Additive, totally ordered cost used by routine selection.
///
/// Infinity is not part of the trait: an unavailable routine is `None` at the
/// cost-model level, so exact types without an infinity work unchanged.
pub trait Cost:
    Copy + PartialOrd + Zero + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Cost for T where
    T: Copy + PartialOrd + Zero + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Round half away from zero, the single rounding rule used by quantization.
pub fn round_half_away<T: Float>(v: T) -> T {
    // `Float::round` already rounds half-way cases away from zero.
    v.round()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn rounding_ties_go_away_from_zero() {
        assert_eq!(round_half_away(2.5f32), 3.0);
        assert_eq!(round_half_away(-2.5f32), -3.0);
        assert_eq!(round_half_away(0.49f64), 0.0);
        assert_eq!(round_half_away(-0.5f64), -1.0);
    }

    #[test]
    fn rationals_are_costs() {
        fn total<C: Cost>(xs: &[C]) -> C {
            xs.iter().fold(C::zero(), |a, &b| a + b)
        }
        let xs = [Ratio::new(1i64, 3), Ratio::new(2, 3)];
        assert_eq!(total(&xs), Ratio::from_integer(1));
        assert_eq!(total(&[1.5f64, 2.0]), 3.5);
    }
}
