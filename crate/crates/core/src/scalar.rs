//! Scalar abstraction: every numeric kernel in this crate is generic over a
//! floating-point scalar so tests can run in `f64` while training runs in `f32`.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Shorthand for lossy conversion from `f64` literals.
    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("f64 -> scalar conversion")
    }

    fn to_f(self) -> f64 {
        self.to_f64().expect("scalar -> f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
