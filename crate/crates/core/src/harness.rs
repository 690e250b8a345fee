//! Benchmark datasets and the four-way estimator/modality ablation.
//!
//! A dataset directory looks like
//!
//! ```text
//! dataset.txt          pitch, item list and splits
//! background.tsr       H x W x 4 (R, G, B, NIR) undeformed gel
//! <item>/scene.txt     indenter description
//! <item>/frame.tsr     H x W x 4 rendered press
//! <item>/depth.tsr     H x W ground-truth indentation (mm)
//! <item>/normals.tsr   H x W x 3 ground-truth unit normals
//! ```
//!
//! plus PNG previews next to the tensors.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::align::{warp_nir, Correspondences, Homography};
use crate::error::{Error, Result};
use crate::gelsim::{background_frame, depth_from_scene, normals_from_depth, render_frame, LightingConfig, PressScene, Primitive};
use crate::io::{load_tensor, save_tensor, KeyValues};
use crate::lut::{build_lut, LutSample, LutTable, DEFAULT_BINS};
use crate::metrics::{angular_mae, contact_mask, depth_rmse, EvalReport, ImageEval, CONDITION_LABELS};
use crate::pfsnn::{train, Sample, TrainConfig, TrainState};
use crate::poisson::{reconstruct, Estimator, ReconstructOptions, Reconstruction, DEFAULT_CLAMP_NZ};
use crate::preview::{save_depth_png, save_frame_png, save_normals_png};
use crate::tensor::{DepthMap, Encoding, Modality, MultiModalFrame, NormalMap};

pub const BENCHMARK_HEIGHT: usize = 120;
pub const BENCHMARK_WIDTH: usize = 160;
pub const BENCHMARK_PITCH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (train, val, test)")),
        }
    }
}

/// A named scene with its split, before rendering.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub name: String,
    pub split: Split,
    pub scene: PressScene,
}

/// A rendered press with its ground truth.
#[derive(Debug, Clone)]
pub struct Item {
    pub name: String,
    pub split: Split,
    pub scene: PressScene,
    pub depth: DepthMap,
    /// Unit encoding.
    pub normals: NormalMap,
    pub frame: MultiModalFrame,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub background: MultiModalFrame,
    pub items: Vec<Item>,
    pub pitch: f64,
}

/// Five sphere presses (four train, one val) and four test objects: a
/// screw cap, a screw thread, a hair and a fingerprint-like ridge grating.
pub fn benchmark_scenes() -> Vec<SceneSpec> {
    let (h, w, p) = (BENCHMARK_HEIGHT, BENCHMARK_WIDTH, BENCHMARK_PITCH);
    let sphere = |radius, press_depth, cx, cy| {
        PressScene::new(h, w, p).with(Primitive::Sphere {
            radius,
            press_depth,
            center: (cx, cy),
        })
    };
    let spec = |name: &str, split, scene| SceneSpec {
        name: name.to_string(),
        split,
        scene,
    };
    vec![
        spec("sphere_0", Split::Train, sphere(4.0, 1.0, 70.0, 55.0)),
        spec("sphere_1", Split::Train, sphere(3.0, 0.8, 95.0, 65.0)),
        spec("sphere_2", Split::Train, sphere(5.0, 1.2, 80.0, 60.0)),
        spec("sphere_3", Split::Train, sphere(2.5, 0.9, 60.0, 70.0)),
        spec("sphere_4", Split::Val, sphere(3.5, 1.0, 85.0, 55.0)),
        spec("screw_cap", Split::Test, sphere(8.0, 0.6, 80.0, 60.0)),
        spec(
            "screw_thread",
            Split::Test,
            PressScene::new(h, w, p).with(Primitive::ThreadedCylinder {
                radius: 1.5,
                press_depth: 0.7,
                thread_pitch: 1.0,
                thread_depth: 0.15,
                center: (80.0, 60.0),
                orientation: 0.0,
                length: 100.0,
            }),
        ),
        spec(
            "hair",
            Split::Test,
            PressScene::new(h, w, p).with(Primitive::Cylinder {
                radius: 0.4,
                press_depth: 0.2,
                start: (20.0, 30.0),
                end: (140.0, 95.0),
            }),
        ),
        spec(
            "fingerprint",
            Split::Test,
            PressScene::new(h, w, p).with(Primitive::RidgeGrating {
                period: 0.8,
                amplitude: 0.06,
                orientation: 20f64.to_radians(),
                region: (30.0, 20.0, 130.0, 100.0),
            }),
        ),
    ]
}

/// Noise seed of the `index`-th item for a dataset seed.
fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Dataset {
    /// Renders every scene. All scenes must share the image size and pitch.
    pub fn generate(specs: &[SceneSpec], lighting: &LightingConfig, seed: u64) -> Result<Self> {
        let first = specs.first().ok_or(Error::Empty("scene list"))?;
        let (h, w, pitch) = (first.scene.height, first.scene.width, first.scene.pitch);
        let background = background_frame(lighting, h, w)?;
        let mut items = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if (s.scene.height, s.scene.width, s.scene.pitch) != (h, w, pitch) {
                return Err(Error::mismatch(
                    format!("{w}x{h} at {pitch} mm/px"),
                    format!("{}x{} at {} mm/px ({})", s.scene.width, s.scene.height, s.scene.pitch, s.name),
                ));
            }
            let depth = depth_from_scene(&s.scene)?;
            let normals = normals_from_depth(&depth)?;
            let frame = render_frame(&normals, lighting, item_seed(seed, i))?;
            items.push(Item {
                name: s.name.clone(),
                split: s.split,
                scene: s.scene.clone(),
                depth,
                normals,
                frame,
            });
        }
        Ok(Self {
            background,
            items,
            pitch,
        })
    }

    pub fn benchmark(lighting: &LightingConfig, seed: u64) -> Result<Self> {
        Self::generate(&benchmark_scenes(), lighting, seed)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(move |i| i.split == split)
    }

    /// Validation and test items.
    pub fn held_out(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(|i| i.split != Split::Train)
    }

    pub fn item(&self, name: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn samples(&self, split: Split) -> Vec<Sample> {
        self.split(split)
            .map(|i| Sample {
                frame: i.frame.clone(),
                background: self.background.clone(),
                target: i.normals.to_encoded(),
            })
            .collect()
    }

    pub fn lut_samples(&self, split: Split) -> Vec<LutSample<'_>> {
        self.split(split)
            .map(|i| LutSample {
                frame: &i.frame,
                background: &self.background,
                normals: &i.normals,
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>, previews: bool) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!("format = dataset-v1\npitch = {}\nitems = ", self.pitch);
        manifest.push_str(&self.items.iter().map(|i| i.name.as_str()).collect::<Vec<_>>().join(","));
        manifest.push('\n');
        for i in &self.items {
            manifest.push_str(&format!("{}.split = {}\n", i.name, i.split));
        }
        let path = dir.join("dataset.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        save_tensor(&self.background.to_rgbn(), dir.join("background.tsr"))?;
        if previews {
            save_frame_png(&self.background, dir, "background")?;
        }
        for i in &self.items {
            let sub = dir.join(&i.name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let scene_path = sub.join("scene.txt");
            fs::write(&scene_path, i.scene.to_text()).map_err(|e| Error::io(&scene_path, e))?;
            save_tensor(&i.frame.to_rgbn(), sub.join("frame.tsr"))?;
            save_tensor(i.depth.depth(), sub.join("depth.tsr"))?;
            save_tensor(i.normals.tensor(), sub.join("normals.tsr"))?;
            if previews {
                save_frame_png(&i.frame, &sub, "frame")?;
                save_normals_png(&i.normals, sub.join("normals.png"))?;
                save_depth_png(&i.depth, sub.join("depth.png"))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join("dataset.txt");
        let kv = KeyValues::load(&manifest)?;
        if kv.get("format") != Some("dataset-v1") {
            return Err(Error::format(&manifest, "not a dataset-v1 manifest"));
        }
        let pitch: f64 = kv.require("pitch")?;
        let names: String = kv.require("items")?;
        let background = MultiModalFrame::from_rgbn(&load_tensor(dir.join("background.tsr"))?.into_3d()?)?;
        let mut items = Vec::new();
        for name in names.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let split: Split = kv.require(&format!("{name}.split"))?;
            let sub = dir.join(name);
            let scene = PressScene::load(sub.join("scene.txt"))?;
            let frame = MultiModalFrame::from_rgbn(&load_tensor(sub.join("frame.tsr"))?.into_3d()?)?;
            let depth = DepthMap::new(load_tensor(sub.join("depth.tsr"))?.into_2d()?, pitch as f32)?;
            let normals = NormalMap::new(load_tensor(sub.join("normals.tsr"))?.into_3d()?, Encoding::Unit)?;
            if !frame.same_shape(&background)
                || (depth.height(), depth.width()) != (frame.height(), frame.width())
                || (normals.height(), normals.width()) != (frame.height(), frame.width())
            {
                return Err(Error::mismatch(
                    format!("{}x{} item tensors", background.height(), background.width()),
                    format!("differing sizes in {name}"),
                ));
            }
            items.push(Item {
                name: name.to_string(),
                split,
                scene,
                depth,
                normals,
                frame,
            });
        }
        if items.is_empty() {
            return Err(Error::format(&manifest, "no items listed"));
        }
        Ok(Self {
            background,
            items,
            pitch,
        })
    }

    /// Applies `f` to the background and every frame.
    pub fn map_frames(&self, f: impl Fn(&MultiModalFrame) -> Result<MultiModalFrame>) -> Result<Self> {
        let mut out = self.clone();
        out.background = f(&self.background)?;
        for item in &mut out.items {
            item.frame = f(&item.frame)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub lut_bins: usize,
    pub clamp_nz: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            lut_bins: DEFAULT_BINS,
            clamp_nz: DEFAULT_CLAMP_NZ,
        }
    }
}

/// Outputs of a held-out item under one condition.
#[derive(Debug, Clone)]
pub struct ItemOutput {
    pub name: String,
    pub reconstruction: Reconstruction,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    /// Without and with NIR.
    pub luts: [LutTable; 2],
    /// Without and with NIR.
    pub pfsnn: [TrainState; 2],
    /// One report per condition, in table column order.
    pub reports: Vec<EvalReport>,
    /// Held-out outputs per condition, same order as `reports`.
    pub outputs: Vec<Vec<ItemOutput>>,
}

impl Ablation {
    pub fn mae(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.reports[i].mae_deg())
    }
}

/// Evaluates one estimator on every held-out item.
pub fn evaluate(
    ds: &Dataset,
    estimator: Estimator<'_>,
    label: &str,
    clamp_nz: f64,
) -> Result<(EvalReport, Vec<ItemOutput>)> {
    let opts = ReconstructOptions {
        pitch: ds.pitch as f32,
        clamp_nz,
        clip_negative: false,
    };
    let mut images = Vec::new();
    let mut outputs = Vec::new();
    for item in ds.held_out() {
        let rec = reconstruct(&item.frame, &ds.background, estimator, estimator.modality(), &opts)?;
        let contact = contact_mask(&item.depth);
        let mae_contact = if contact.iter().any(|&b| b) {
            Some(angular_mae(&rec.normals, &item.normals, Some(&contact))?)
        } else {
            None
        };
        images.push(ImageEval {
            name: item.name.clone(),
            mae_deg: angular_mae(&rec.normals, &item.normals, None)?,
            mae_contact_deg: mae_contact,
            depth_rmse_mm: depth_rmse(&rec.depth, &item.depth, None)?,
        });
        outputs.push(ItemOutput {
            name: item.name.clone(),
            reconstruction: rec,
        });
    }
    if images.is_empty() {
        return Err(Error::Empty("held-out items"));
    }
    Ok((
        EvalReport {
            label: label.to_string(),
            images,
        },
        outputs,
    ))
}

/// Builds both LUTs and trains both networks on the train split, then
/// evaluates all four on the held-out items.
pub fn run_ablation(ds: &Dataset, cfg: &AblationConfig) -> Result<Ablation> {
    let lut_train = ds.lut_samples(Split::Train);
    let luts = [
        build_lut(&lut_train, Modality::Rgb, cfg.lut_bins)?,
        build_lut(&lut_train, Modality::RgbNir, cfg.lut_bins)?,
    ];
    let (train_set, val_set) = (ds.samples(Split::Train), ds.samples(Split::Val));
    let pfsnn = [
        train(&train_set, &val_set, &cfg.train, Modality::Rgb)?,
        train(&train_set, &val_set, &cfg.train, Modality::RgbNir)?,
    ];
    let estimators = [
        Estimator::Lut(&luts[0]),
        Estimator::Lut(&luts[1]),
        Estimator::Pfsnn(&pfsnn[0].model),
        Estimator::Pfsnn(&pfsnn[1].model),
    ];
    let mut reports = Vec::with_capacity(4);
    let mut outputs = Vec::with_capacity(4);
    for (est, label) in estimators.into_iter().zip(CONDITION_LABELS) {
        let (r, o) = evaluate(ds, est, label, cfg.clamp_nz)?;
        reports.push(r);
        outputs.push(o);
    }
    Ok(Ablation {
        luts,
        pfsnn,
        reports,
        outputs,
    })
}

/// Directory-safe form of a condition label.
pub fn condition_slug(label: &str) -> String {
    label
        .to_lowercase()
        .replace("w/o", "without")
        .replace("w.", "with")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Writes the table, CSV, loss curves, models and per-condition previews.
pub fn write_ablation(ab: &Ablation, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("table.txt", crate::metrics::format_table(&ab.reports))?;
    write("ablation.csv", crate::metrics::reports_csv(&ab.reports))?;
    for (state, tag) in ab.pfsnn.iter().zip(["rgb", "rgb_nir"]) {
        write(&format!("loss_pfsnn_{tag}.csv"), state.loss_csv())?;
        crate::pfsnn::save_model(&state.model, out.join(format!("pfsnn_{tag}")))?;
    }
    for (lut, tag) in ab.luts.iter().zip(["rgb", "rgb_nir"]) {
        lut.save(out.join(format!("lut_{tag}")))?;
    }
    for (report, outputs) in ab.reports.iter().zip(&ab.outputs) {
        let dir = out.join(condition_slug(&report.label));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for o in outputs {
            save_normals_png(&o.reconstruction.normals, dir.join(format!("{}_normals.png", o.name)))?;
            save_depth_png(&o.reconstruction.depth, dir.join(format!("{}_depth.png", o.name)))?;
            save_tensor(o.reconstruction.depth.depth(), dir.join(format!("{}_depth.tsr", o.name)))?;
        }
    }
    Ok(())
}

/// The cross-camera offset used for the misalignment check: a 0.3 degree
/// rotation about the image centre followed by a (2.4, -1.8) px shift, about
/// 3 px of displacement overall.
pub fn benchmark_misalignment(height: usize, width: usize) -> Homography {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let (s, c) = 0.3f64.to_radians().sin_cos();
    let m = nalgebra::Matrix3::new(
        c,
        -s,
        cx - c * cx + s * cy + 2.4,
        s,
        c,
        cy - s * cx - c * cy - 1.8,
        0.0,
        0.0,
        1.0,
    );
    Homography::new(m).expect("rotation plus shift is invertible")
}

/// Shifts every NIR image by `h` (RGB pixel `p` shows up at `h(p)` in NIR).
pub fn misalign_nir(ds: &Dataset, h: &Homography) -> Result<Dataset> {
    ds.map_frames(|f| warp_nir(f, h))
}

/// Warps every NIR image by `nir_to_rgb`, bringing it into RGB coordinates.
pub fn align_nir(ds: &Dataset, nir_to_rgb: &Homography) -> Result<Dataset> {
    ds.map_frames(|f| warp_nir(f, nir_to_rgb))
}

/// Checkerboard inner corners on a `cols x rows` grid spanning the image,
/// as seen by both cameras: pairs `(nir, rgb)` where the NIR position is
/// `rgb_to_nir(rgb)` plus Gaussian detection noise of `noise_px`.
pub fn checkerboard_correspondences(
    rgb_to_nir: &Homography,
    height: usize,
    width: usize,
    cols: usize,
    rows: usize,
    noise_px: f64,
    seed: u64,
) -> Result<Correspondences> {
    if cols < 2 || rows < 2 {
        return Err(Error::Contract("checkerboard needs at least 2x2 corners".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_px).map_err(|e| Error::Contract(e.to_string()))?;
    let margin = 0.1;
    let mut pairs = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let fx = margin + (1.0 - 2.0 * margin) * c as f64 / (cols - 1) as f64;
            let fy = margin + (1.0 - 2.0 * margin) * r as f64 / (rows - 1) as f64;
            let rgb = [fx * (width - 1) as f64, fy * (height - 1) as f64];
            let nir = rgb_to_nir.apply(rgb);
            let nir = [nir[0] + noise.sample(&mut rng), nir[1] + noise.sample(&mut rng)];
            pairs.push((nir, rgb));
        }
    }
    Correspondences::new(pairs)
}
