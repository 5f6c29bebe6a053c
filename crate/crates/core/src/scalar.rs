use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps};

/// Scalar element type of tensors and weights.
///
/// The whole engine is generic over this trait; `f32` and `f64` are the two
/// implementations. Mixed precision within one operation is forbidden, which
/// the type system enforces for free.
pub trait Element: Float + NumAssignOps + Copy + Debug + Display + Send + Sync + 'static {
    /// Precision tag written into serialized blobs: byte width of one element.
    const TAG: u8;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const TAG: u8 = 4;
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const TAG: u8 = 8;
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
