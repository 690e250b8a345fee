use crate::error::{Error, Result};
use crate::lut::{lut_lookup, LutTable};
use crate::pfsnn::PfsnnModel;
use crate::tensor::{DepthMap, Modality, MultiModalFrame, NormalMap};

use super::{fast_poisson, gradients_from_normals, DEFAULT_CLAMP_NZ};

/// Where the normals come from.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    Pfsnn(&'a PfsnnModel),
    Lut(&'a LutTable),
}

impl Estimator<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Estimator::Pfsnn(m) => m.modality,
            Estimator::Lut(t) => t.modality(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    /// Millimetres per pixel.
    pub pitch: f32,
    pub clamp_nz: f64,
    /// Clip negative depths to zero.
    pub clip_negative: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            pitch: 0.1,
            clamp_nz: DEFAULT_CLAMP_NZ,
            clip_negative: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Encoded estimator output.
    pub normals: NormalMap,
    pub depth: DepthMap,
}

/// Normal estimation followed by Poisson integration.
pub fn reconstruct(
    frame: &MultiModalFrame,
    background: &MultiModalFrame,
    estimator: Estimator<'_>,
    mode: Modality,
    opts: &ReconstructOptions,
) -> Result<Reconstruction> {
    if estimator.modality() != mode {
        return Err(Error::ModalityMismatch(format!(
            "estimator was built for {} but {} was requested",
            estimator.modality(),
            mode
        )));
    }
    let normals = match estimator {
        Estimator::Pfsnn(m) => m.predict(frame, background)?,
        Estimator::Lut(t) => lut_lookup(t, frame, background)?,
    };
    let g = gradients_from_normals(&normals.to_unit(), opts.clamp_nz, opts.pitch)?;
    let mut depth = fast_poisson(&g)?;
    if opts.clip_negative {
        depth = depth.clamped_nonnegative();
    }
    Ok(Reconstruction { normals, depth })
}
