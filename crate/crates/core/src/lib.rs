//! Bird/drone detection core: tensors with reverse-mode autodiff,
//! deformable-convolution AELAN blocks, multi-scale dual-attention blocks,
//! an anchor-free detector with its training loop, a procedural scene
//! generator and detection metrics.
//!
//! The crate is `no_std` (with `alloc`); file formats, timing and the CLI
//! live in the `birdrone` companion crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod attention;
pub mod backbone;
pub mod data;
pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod real;
pub mod tape;
pub mod tensor;
pub mod verify;
pub mod train;

pub use error::{Error, Result};
pub use kernels::ConvGeom;
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
