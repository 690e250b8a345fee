//! Synthetic stand-in for the sensor hardware.
//!
//! A [`PressScene`] describes indenters pressed into the gel; it rasterizes to
//! a [`DepthMap`](crate::DepthMap), from which ground-truth normals and the
//! aligned RGB and NIR camera images are rendered. Four coloured side lights
//! (red, green, blue, white rows at azimuths 0/90/180/270 degrees) shade the
//! RGB image, and a near-coaxial infrared ring shades the NIR image so that
//! steep regions come out darker than flat gel.

mod render;
mod scene;

pub use render::{
    background_frame, normals_from_depth, render_frame, LightingConfig, SideLight, DEFAULT_AZIMUTHS_DEG,
    DEFAULT_COLORS,
};
pub use scene::{depth_from_scene, PressScene, Primitive, GEL_THICKNESS_MM};
