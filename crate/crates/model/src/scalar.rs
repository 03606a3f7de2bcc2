use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating-point scalar the model is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into the scalar type.
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
