use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Encoding, Modality, MultiModalFrame, NormalMap, Tensor3D};

use super::mlp::{forward_pixel, Activations, MlpWeights, Params, INPUT_CHANNELS};

/// Trained network plus the flags that fix how it must be fed.
#[derive(Debug, Clone, PartialEq)]
pub struct PfsnnModel {
    pub weights: MlpWeights,
    pub relu_before_tanh: bool,
    pub modality: Modality,
}

impl PfsnnModel {
    pub fn predict(&self, frame: &MultiModalFrame, background: &MultiModalFrame) -> Result<NormalMap> {
        forward(&self.weights, frame, background, self.relu_before_tanh, self.modality)
    }
}

/// Per-pixel 8-channel inputs `(R, G, B, NIR, bgR, bgG, bgB, bgNIR)`.
/// Both NIR channels read as zero in RGB-only mode.
pub fn pixel_inputs(
    frame: &MultiModalFrame,
    background: &MultiModalFrame,
    modality: Modality,
) -> Result<Vec<[f64; INPUT_CHANNELS]>> {
    if !frame.same_shape(background) {
        return Err(Error::mismatch(
            format!("background {}x{}", frame.height(), frame.width()),
            format!("{}x{}", background.height(), background.width()),
        ));
    }
    Ok((0..frame.num_pixels())
        .map(|i| {
            let f = frame.rgbn_at(i, modality);
            let b = background.rgbn_at(i, modality);
            std::array::from_fn(|c| if c < 4 { f[c] as f64 } else { b[c - 4] as f64 })
        })
        .collect())
}

/// Runs the network on every pixel, returning encoded normals.
pub(crate) fn forward_inputs(p: &Params<f64>, inputs: &[[f64; INPUT_CHANNELS]], relu_before_tanh: bool) -> Vec<[f64; 3]> {
    inputs
        .par_chunks(256)
        .flat_map_iter(|chunk| {
            let mut a = Activations::default();
            chunk
                .iter()
                .map(|x| {
                    forward_pixel(p, x, relu_before_tanh, &mut a);
                    a.encoded()
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Concatenate frame and background, run the per-pixel network, sphere
/// normalize and map to `[0, 1]`.
pub fn forward(
    weights: &MlpWeights,
    frame: &MultiModalFrame,
    background: &MultiModalFrame,
    relu_before_tanh: bool,
    modality: Modality,
) -> Result<NormalMap> {
    if !weights.is_finite() {
        return Err(Error::NonFinite("PFSNN weights"));
    }
    let inputs = pixel_inputs(frame, background, modality)?;
    let out = forward_inputs(&weights.to_f64(), &inputs, relu_before_tanh);
    let data = out.iter().flat_map(|v| v.map(|c| c as f32)).collect();
    NormalMap::new(
        Tensor3D::new(frame.height(), frame.width(), 3, data)?,
        Encoding::Encoded01,
    )
}

/// Mean absolute difference of two encoded normal maps over the masked pixels
/// (all pixels when `mask` is `None`) and all three channels.
pub fn l1_loss(pred: &NormalMap, target: &NormalMap, mask: Option<&[bool]>) -> Result<f64> {
    if pred.encoding() != Encoding::Encoded01 || target.encoding() != Encoding::Encoded01 {
        return Err(Error::Contract("l1_loss compares encoded normal maps".into()));
    }
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::mismatch(
            format!("{}x{}", target.height(), target.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let n = pred.height() * pred.width();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::mismatch(format!("mask of {n} pixels"), m.len()));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (a, b)) in pred.tensor().pixels().zip(target.tensor().pixels()).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        sum += (0..3).map(|c| (a[c] as f64 - b[c] as f64).abs()).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("l1_loss mask selects no pixels"));
    }
    Ok(sum / (3 * count) as f64)
}
