//! Tactile reconstruction from aligned RGB and near-infrared gel images.
//!
//! The crate covers the whole software path of a split-prism visual-tactile
//! sensor without the hardware:
//!
//! - [`gelsim`] renders aligned RGB+NIR frames of pressed gel surfaces,
//! - [`pfsnn`] is the per-pixel fusion network that regresses unit normals,
//! - [`lut`] is the colour look-up-table baseline,
//! - [`poisson`] integrates normal maps into depth maps,
//! - [`align`] estimates the cross-camera homography with RANSAC,
//! - [`metrics`] and [`harness`] evaluate and run the four-way ablation.

pub mod align;
pub mod error;
pub mod gelsim;
pub mod harness;
pub mod io;
pub mod lut;
pub mod metrics;
pub mod pfsnn;
pub mod poisson;
pub mod preview;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{
    decode_normals, encode_normals, DepthMap, Encoding, Modality, MultiModalFrame, NormalMap,
    Tensor2D, Tensor3D,
};
