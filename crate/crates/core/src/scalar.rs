//! Scalar abstraction shared by the numeric parts of the crate.
//!
//! Reward, advantage and scoring code is written once against [`Scalar`] and
//! instantiated for `f32` and `f64`; the crate root exports `f64` aliases.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the reward and scoring code.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant; every finite value is representable up to rounding.
    fn lit(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count fits in a float")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

/// Left-to-right sum. Summation order is part of the determinism contract.
pub fn sum_ordered<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Left-to-right mean; `None` for an empty input.
pub fn mean_ordered<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(sum_ordered(values.iter().copied()) / T::from_count(values.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip_for_both_widths() {
        assert_eq!(<f64 as Scalar>::lit(0.3), 0.3);
        assert_eq!(<f32 as Scalar>::lit(0.3), 0.3f32);
        assert_eq!(<f64 as Scalar>::from_count(7), 7.0);
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(mean_ordered::<f64>(&[]), None);
        assert_eq!(mean_ordered(&[1.0f32, 2.0, 3.0]), Some(2.0));
    }
}
