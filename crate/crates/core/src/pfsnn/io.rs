//! Weights directory: one `TSR1` file per parameter tensor plus `manifest.txt`.
//!
//! ```text
//! format = pfsnn-weights-v1
//! modality = rgb+nir
//! relu_before_tanh = false
//! layer1.weight = 128x8
//! layer1.bias = 1x128
//! ...
//! ```
//!
//! The tensor for `layer1.weight` lives in `layer1.weight.tsr`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor, KeyValues};
use crate::tensor::{Modality, Tensor2D};

use super::mlp::{param_shapes, MlpWeights, PARAM_NAMES};
use super::model::PfsnnModel;

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "pfsnn-weights-v1";

pub fn save_model(model: &PfsnnModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!(
        "format = {FORMAT}\nmodality = {}\nrelu_before_tanh = {}\n",
        model.modality, model.relu_before_tanh
    );
    for ((name, (rows, cols)), data) in PARAM_NAMES.iter().zip(param_shapes()).zip(model.weights.slices()) {
        let _ = writeln!(manifest, "{name} = {rows}x{cols}");
        save_tensor(&Tensor2D::new(rows, cols, data.to_vec())?, dir.join(format!("{name}.tsr")))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<PfsnnModel> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let kv = KeyValues::load(&manifest_path)?;
    let format: String = kv.require("format")?;
    if format != FORMAT {
        return Err(Error::format(&manifest_path, format!("unknown format `{format}`")));
    }
    let modality: Modality = kv.require("modality")?;
    let relu_before_tanh: bool = kv.require("relu_before_tanh")?;
    let mut parts: Vec<Vec<f32>> = Vec::with_capacity(6);
    for (name, (rows, cols)) in PARAM_NAMES.iter().zip(param_shapes()) {
        let declared: String = kv.require(name)?;
        if declared != format!("{rows}x{cols}") {
            return Err(Error::mismatch(format!("{name} = {rows}x{cols}"), declared));
        }
        let t = load_tensor(dir.join(format!("{name}.tsr")))?.into_2d()?;
        if (t.height(), t.width()) != (rows, cols) {
            return Err(Error::mismatch(
                format!("{name} tensor {rows}x{cols}"),
                format!("{}x{}", t.height(), t.width()),
            ));
        }
        parts.push(t.into_data());
    }
    let parts: [Vec<f32>; 6] = parts.try_into().expect("six parameter tensors");
    Ok(PfsnnModel {
        weights: MlpWeights::from_slices(parts)?,
        relu_before_tanh,
        modality,
    })
}

/// Loads weights and checks they were trained for `modality`.
pub fn load_model_for(dir: impl AsRef<Path>, modality: Modality) -> Result<PfsnnModel> {
    let model = load_model(dir)?;
    if model.modality != modality {
        return Err(Error::ModalityMismatch(format!(
            "weights were trained for {} but {} was requested",
            model.modality, modality
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_modality_check() {
        let model = PfsnnModel {
            weights: MlpWeights::init(&mut ChaCha8Rng::seed_from_u64(3)),
            relu_before_tanh: true,
            modality: Modality::Rgb,
        };
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path()).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), model);
        assert!(load_model_for(dir.path(), Modality::Rgb).is_ok());
        assert!(matches!(
            load_model_for(dir.path(), Modality::RgbNir),
            Err(Error::ModalityMismatch(_))
        ));
    }

    #[test]
    fn manifest_shape_mismatch() {
        let model = PfsnnModel {
            weights: MlpWeights::zeros(),
            relu_before_tanh: false,
            modality: Modality::RgbNir,
        };
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("128x8", "8x128");
        fs::write(&path, text).unwrap();
        assert!(load_model(dir.path()).is_err());
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = load_model("/nonexistent/weights").unwrap_err();
        assert!(err.is_input_error());
    }
}
