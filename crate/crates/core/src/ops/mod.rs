//! The operator set needed by M2U-Net, each with its exact backward pass.
//!
//! Every operator is a pure function of its inputs. Work is split across
//! output planes with rayon; each plane is always reduced in the same order,
//! so results are bit-identical for any thread count.

mod activation;
mod batchnorm;
mod combine;
mod conv;
mod cost;
mod upsample;

pub use activation::{
    relu6, relu6_backward, sigmoid, sigmoid_backward, sigmoid_scalar, Activation,
};
pub use batchnorm::{
    batchnorm, batchnorm_infer, batchnorm_infer_backward, batchnorm_train,
    batchnorm_train_backward, BatchNormParams, BnMode, BnSaved, BN_DEFAULT_EPS,
    BN_DEFAULT_MOMENTUM,
};
pub use combine::{add_residual, concat_backward, concat_channels};
pub use conv::{conv2d, conv2d_backward, depthwise_conv2d, ConvWeights};
pub use cost::CostTally;
pub use upsample::{bilinear_upsample_x2, bilinear_upsample_x2_backward, upsample_axis_taps};
