//! Floating-point scalar abstraction used by descriptors and the index.
//!
//! Feature files always carry `f32`; aggregation, similarity and search run in
//! whichever [`Scalar`] the caller instantiates them with.

use std::cmp::Ordering;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// f32 or f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Byte width when stored little-endian; doubles as the on-disk type tag.
    const WIDTH: u8;

    fn total_order(&self, other: &Self) -> Ordering;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes from exactly `WIDTH` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn of_f32(value: f32) -> Self;

    fn of_f64(value: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty, $width:expr) => {
        impl Scalar for $t {
            const WIDTH: u8 = $width;

            #[inline]
            fn total_order(&self, other: &Self) -> Ordering {
                self.total_cmp(other)
            }

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                let mut raw = [0u8; $width];
                raw.copy_from_slice(bytes);
                <$t>::from_le_bytes(raw)
            }

            #[inline]
            fn of_f32(value: f32) -> Self {
                value as $t
            }

            #[inline]
            fn of_f64(value: f64) -> Self {
                value as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, 4);
impl_scalar!(f64, 8);

/// Plain left-to-right dot product.
///
/// Summation order is fixed so that scores are reproducible bit-for-bit
/// across runs and platforms.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_roundtrip_both_widths() {
        let mut buf = Vec::new();
        1.5f32.write_le(&mut buf);
        (-2.25f64).write_le(&mut buf);
        assert_eq!(buf.len(), 12);
        assert_eq!(f32::read_le(&buf[..4]), 1.5);
        assert_eq!(f64::read_le(&buf[4..]), -2.25);
    }

    #[test]
    fn total_order_handles_negative_zero() {
        assert_eq!(0.0f64.total_order(&-0.0), Ordering::Greater);
        assert_eq!(1.0f32.total_order(&2.0), Ordering::Less);
    }

    #[test]
    fn dot_and_norm() {
        assert_eq!(dot(&[1.0f64, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
        assert_eq!(l2_norm(&[3.0f32, 4.0]), 5.0);
    }
}
