use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type a graph computes in. Verification runs use `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Checkpoint dtype code.
    const DTYPE: u8;
    const NAME: &'static str;

    fn from_f64c(v: f64) -> Self;

    fn to_le_bytes_vec(v: Self, out: &mut Vec<u8>);

    fn from_le_slice(b: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: u8 = 1;
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64c(v: f64) -> Self {
        v as f32
    }

    fn to_le_bytes_vec(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    fn from_le_slice(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: u8 = 2;
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64c(v: f64) -> Self {
        v
    }

    fn to_le_bytes_vec(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    fn from_le_slice(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().expect("8 bytes"))
    }
}

/// Byte width of a checkpoint dtype code.
pub fn dtype_width(code: u8) -> Option<usize> {
    match code {
        1 => Some(4),
        2 => Some(8),
        _ => None,
    }
}
