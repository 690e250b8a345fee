//! Photometric fusion stereo network.
//!
//! A per-pixel perceptron over the concatenated frame and background
//! (8 channels), followed by tanh, sphere normalization and the affine map
//! into `[0, 1]`. Training uses an L1 loss on encoded normals and a
//! hand-written ADAM optimizer.

mod adam;
mod io;
mod mlp;
mod model;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use io::{load_model, load_model_for, save_model, MANIFEST};
pub use mlp::{
    backward_pixel, batch_l1_and_grad, forward_pixel, param_shapes, sphere_normalize, Activations,
    BackwardScratch, Gradients, MlpWeights, Params, HIDDEN1, HIDDEN2, INPUT_CHANNELS, LAYER_SHAPES,
    OUTPUT_CHANNELS, PARAM_NAMES, SPHERE_EPS,
};
pub use model::{forward, l1_loss, pixel_inputs, PfsnnModel};
pub use train::{train, EpochLoss, Sample, TrainConfig, TrainState};
