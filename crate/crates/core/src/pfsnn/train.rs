use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::KeyValues;
use crate::tensor::{Encoding, Modality, MultiModalFrame, NormalMap};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::mlp::{batch_l1_and_grad, MlpWeights, INPUT_CHANNELS};
use super::model::{forward_inputs, pixel_inputs, PfsnnModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Pixels per optimizer step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Insert a ReLU before the tanh (confines normals to the positive octant).
    pub relu_before_tanh: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            relu_before_tanh: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config { line: 0, msg: msg.into() });
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        Ok(())
    }

    /// Overrides defaults from a `key=value` file; unknown keys are errors.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(&[
            "learning_rate",
            "epochs",
            "batch_size",
            "beta1",
            "beta2",
            "adam_eps",
            "seed",
            "relu_before_tanh",
        ])?;
        let d = Self::default();
        let cfg = Self {
            learning_rate: kv.parse_opt("learning_rate")?.unwrap_or(d.learning_rate),
            epochs: kv.parse_opt("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.parse_opt("batch_size")?.unwrap_or(d.batch_size),
            beta1: kv.parse_opt("beta1")?.unwrap_or(d.beta1),
            beta2: kv.parse_opt("beta2")?.unwrap_or(d.beta2),
            adam_eps: kv.parse_opt("adam_eps")?.unwrap_or(d.adam_eps),
            seed: kv.parse_opt("seed")?.unwrap_or(d.seed),
            relu_before_tanh: kv.parse_opt("relu_before_tanh")?.unwrap_or(d.relu_before_tanh),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }
}

/// One supervised image: frame, its background, and encoded target normals.
#[derive(Debug, Clone)]
pub struct Sample {
    pub frame: MultiModalFrame,
    pub background: MultiModalFrame,
    pub target: NormalMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: PfsnnModel,
    pub adam: AdamState,
    /// Losses of the freshly initialized network.
    pub initial: EpochLoss,
    /// Losses after each completed epoch.
    pub history: Vec<EpochLoss>,
}

impl TrainState {
    pub fn final_loss(&self) -> EpochLoss {
        *self.history.last().unwrap_or(&self.initial)
    }

    /// `epoch,train_l1,val_l1` rows, starting with the untrained epoch 0.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_l1,val_l1\n");
        for e in std::iter::once(&self.initial).chain(&self.history) {
            let val = e.val_l1.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_l1, val);
        }
        s
    }
}

struct PixelSet {
    inputs: Vec<[f64; INPUT_CHANNELS]>,
    targets: Vec<[f64; 3]>,
}

impl PixelSet {
    fn gather(samples: &[Sample], modality: Modality) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for s in samples {
            if s.target.encoding() != Encoding::Encoded01 {
                return Err(Error::Contract("training targets must be encoded normals".into()));
            }
            if s.target.height() != s.frame.height() || s.target.width() != s.frame.width() {
                return Err(Error::mismatch(
                    format!("target {}x{}", s.frame.height(), s.frame.width()),
                    format!("{}x{}", s.target.height(), s.target.width()),
                ));
            }
            inputs.extend(pixel_inputs(&s.frame, &s.background, modality)?);
            targets.extend(s.target.tensor().pixels().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]));
        }
        Ok(Self { inputs, targets })
    }

    fn l1(&self, weights: &MlpWeights, relu_before_tanh: bool) -> f64 {
        let out = forward_inputs(&weights.to_f64(), &self.inputs, relu_before_tanh);
        let sum: f64 = out
            .iter()
            .zip(&self.targets)
            .map(|(o, t)| (0..3).map(|c| (o[c] - t[c]).abs()).sum::<f64>())
            .sum();
        sum / (3 * out.len()) as f64
    }
}

/// Trains a fresh network on `train` pixels with ADAM, reporting train and
/// validation L1 after every epoch.
///
/// Pixels from all training images are pooled and reshuffled every epoch;
/// a final short batch is kept. Weight initialization and shuffling share one
/// ChaCha8 stream seeded with `cfg.seed`, so runs are bitwise reproducible.
pub fn train(train: &[Sample], val: &[Sample], cfg: &TrainConfig, modality: Modality) -> Result<TrainState> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    cfg.validate()?;
    let train_px = PixelSet::gather(train, modality)?;
    let val_px = if val.is_empty() {
        None
    } else {
        Some(PixelSet::gather(val, modality)?)
    };
    if train_px.inputs.is_empty() {
        return Err(Error::Empty("training pixels"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = MlpWeights::init(&mut rng);
    let relu = cfg.relu_before_tanh;
    let eval = |w: &MlpWeights, epoch: usize| EpochLoss {
        epoch,
        train_l1: train_px.l1(w, relu),
        val_l1: val_px.as_ref().map(|v| v.l1(w, relu)),
    };

    let initial = eval(&weights, 0);
    let mut adam = AdamState::default();
    let adam_cfg = cfg.adam();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_px.inputs.len()).collect();
    let mut batch_in = Vec::with_capacity(cfg.batch_size);
    let mut batch_t = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_in.clear();
            batch_t.clear();
            batch_in.extend(chunk.iter().map(|&i| train_px.inputs[i]));
            batch_t.extend(chunk.iter().map(|&i| train_px.targets[i]));
            let (_, grads) = batch_l1_and_grad(&weights.to_f64(), &batch_in, &batch_t, relu);
            adam_step(&mut weights, &mut adam, &grads, &adam_cfg)?;
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("weights diverged during training"));
        }
        history.push(eval(&weights, epoch));
    }

    Ok(TrainState {
        model: PfsnnModel {
            weights,
            relu_before_tanh: relu,
            modality,
        },
        adam,
        initial,
        history,
    })
}
