//! Scalar abstractions for the metric code.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating-point type usable by the metric functions.
pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl<T: Float + FromPrimitive + Debug + Default + Send + Sync + 'static> Real for T {}
