//! M2U-Net: a lightweight encoder-decoder network for retinal vessel
//! segmentation, implemented from scratch on a small dense-tensor core.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`ops`]: a 4-D `(n, c, h, w)` tensor and the handful of
//!   operators the network needs, each with an exact vector-Jacobian product.
//! - [`autograd`]: a recording tape over those operators.
//! - [`arch`]: declarative layer specs, the M2U-Net graph, and the
//!   parameter / multiply-add accounting.
//! - [`loss`] and [`metrics`]: the joint BCE + soft-Jaccard loss and the
//!   evaluation suite (Dice, PR curves, cropped-adjusted accuracy and AuC).
//! - [`data`]: dataset definitions, crops, splits and augmentation.
//! - [`train`]: AdamW, weight initialisation and the training loop.
//! - [`io`]: weight files, golden fixtures and image codecs.
//! - [`bench`]: latency measurement.
//!
//! All production paths run in `f32`; every operator is generic over
//! [`Scalar`] so the gradient checks can run in `f64`.

pub mod arch;
pub mod autograd;
pub mod bench;
pub mod data;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
