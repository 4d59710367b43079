//! Forward/backward primitives from which the networks are assembled.
//!
//! Every primitive is a pure function of its inputs (batch norm also takes an
//! explicit `&mut RunningStats`). Backward functions take whatever the forward
//! pass returned alongside its output and produce gradients with the shapes of
//! the corresponding inputs.

pub mod batchnorm;
pub mod conv;
pub mod dropout;
pub mod linear;
pub mod loss;
pub mod pool;

pub use batchnorm::{batch_norm, batch_norm_backward, BatchNormCache, BatchNormState, RunningStats};
pub use conv::{conv2d, conv2d_backward, conv2d_backward_params, ConvGeometry, ConvGrads};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use pool::{max_pool, max_pool_backward, PoolIndices};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes gradient where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}
