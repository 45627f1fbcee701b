//! Crack segmentation core.
//!
//! Everything in this crate is a pure function of its inputs (and an explicit
//! seed where randomness is involved): raster types and mask semantics,
//! preprocessing into resized images or training tiles, a feature pyramid
//! network with a pluggable encoder and hand-written backward passes, the
//! Dice/IoU family of losses and metrics, tiled inference with recombination,
//! and dilation-based post-processing.
//!
//! The crate is `no_std` and only needs `alloc`. The `std` feature enables
//! runtime CPU feature detection in the GEMM kernel; `serde` derives
//! serialization for the configuration and record types.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod augment;
pub mod error;
pub mod fpn;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod postprocess;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod tensor;
pub mod tiling;
pub mod train;

pub use error::{Error, Result};
pub use fpn::{EncoderKind, FpnNet, ModelConfig, PyramidFeatures};
pub use raster::{BinaryMask, ProbMask, RasterImage, TileRecord};
pub use tensor::Tensor;
