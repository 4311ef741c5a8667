// SPDX-License-Identifier: MIT OR Apache-2.0

//! Floating-point abstraction for the numerical core.
//!
//! Activations are stored as `f32`; fitting and scoring can run at either
//! precision. The pipeline defaults to `f64` (see the aliases at the crate
//! root).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the linear-algebra, LAT, and metric code.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a literal. Infallible for the implemented types.
    fn lit(x: f64) -> Self;

    /// Promotes a stored activation value.
    fn of_f32(x: f32) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn of_f32(x: f32) -> Self {
                x as $t
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
