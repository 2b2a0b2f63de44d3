//! Raw forward/backward kernels operating on contiguous buffers.
//!
//! Both convolution flavours lower to a per-image `im2col` + GEMM. Column
//! buffers are `K x P` where `K = C_in * kh * kw` and `P` is the number of
//! output positions.

pub mod conv;
pub mod deform;
pub mod norm;

pub use conv::{conv2d_backward, conv2d_forward, ConvGeom};
pub use deform::{bilinear_sample, deform_conv2d_backward, deform_conv2d_forward};
pub use norm::{default_groups, group_norm_backward, group_norm_forward, GroupNormCache};
