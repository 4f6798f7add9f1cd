//! Forward and backward kernels for the layer primitives.
//!
//! Every kernel is a pure function of its inputs. Feature maps are NCHW.
//! Backward functions take whatever the forward pass needs to keep and return
//! gradients for the input and any parameters.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, update_running_stats, BatchNorm, BnCache,
    BnStats, BN_EPS, BN_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv_output_extent};
pub use linear::{linear, linear_backward};
pub use loss::{argmax_rows, softmax, softmax_cross_entropy};
pub use pool::{avgpool2d, avgpool2d_backward, global_avgpool, global_avgpool_backward};
