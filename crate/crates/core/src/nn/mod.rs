//! Just enough neural-network machinery for two small convolutional stacks:
//! tensors, same-padded 3x3 convolution with exact gradients, ADAM, He
//! initialization and a finite-difference gradient checker.
//!
//! Everything numeric is generic over [`Real`] so the same code runs in `f32`
//! for training and in `f64` when gradients are checked.

mod adam;
mod conv;
mod gradcheck;
mod init;
mod tensor;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON as ADAM_EPSILON};
pub use conv::{conv2d_backward, conv2d_forward, Activation, ConvGrads, ConvLayer, ConvStack, StackCache};
pub use gradcheck::{grad_check, grad_check_model, relative_error, Differentiable, GradCheckReport};
pub(crate) use gradcheck::{set_stack_param, stack_param};
pub use init::{he_init, he_std};
pub use tensor::Tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the network math is written against (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Real for f32 {}
impl Real for f64 {}
