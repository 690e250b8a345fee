use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tactile_core::align::{ransac_homography, warp_nir, Correspondences, RansacConfig};
use tactile_core::gelsim::{LightingConfig, PressScene};
use tactile_core::harness::{benchmark_scenes, run_ablation, write_ablation, AblationConfig, Dataset, SceneSpec, Split};
use tactile_core::io::{load_tensor, save_tensor};
use tactile_core::lut::{LutTable, DEFAULT_BINS};
use tactile_core::metrics::format_table;
use tactile_core::pfsnn::{load_model_for, save_model, train, TrainConfig};
use tactile_core::poisson::{reconstruct, Estimator, ReconstructOptions};
use tactile_core::preview::{save_depth_png, save_frame_png, save_normals_png};
use tactile_core::{Modality, MultiModalFrame};

/// Tactile reconstruction from aligned RGB and NIR gel images.
#[derive(Parser)]
#[command(name = "tactile-splitter", version)]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible output on any machine.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for rendering noise, weight init and RANSAC sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset (the default benchmark unless scene files are given).
    Simulate(SimulateArgs),
    /// Train a PFSNN on the train split of a dataset.
    Train(TrainArgs),
    /// Build both LUTs, train both networks and print the comparison table.
    Ablate(AblateArgs),
    /// Estimate normals for one frame and integrate them into depth.
    Reconstruct(ReconstructArgs),
    /// Fit the NIR-to-RGB homography from point correspondences.
    Align(AlignArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene file; repeat for several items (named after the file stem).
    #[arg(long = "scene")]
    scenes: Vec<PathBuf>,
    /// Split assigned to items given with --scene.
    #[arg(long, default_value = "test")]
    split: Split,
    /// key=value lighting file.
    #[arg(long)]
    lighting: Option<PathBuf>,
    /// Skip the PNG previews.
    #[arg(long)]
    no_previews: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// key=value training config; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// rgb or rgb+nir.
    #[arg(long, default_value = "rgb+nir")]
    mode: Modality,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Training config shared by both networks.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Frame tensor (H x W x 4, R G B NIR).
    #[arg(long)]
    frame: PathBuf,
    /// Background tensor of the same shape.
    #[arg(long)]
    background: PathBuf,
    /// PFSNN weights directory.
    #[arg(long, conflicts_with = "lut", required_unless_present = "lut")]
    weights: Option<PathBuf>,
    /// LUT directory.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, default_value = "rgb+nir")]
    mode: Modality,
    /// Millimetres per pixel.
    #[arg(long, default_value_t = 0.1)]
    pitch: f32,
    /// Clip negative depths to zero.
    #[arg(long)]
    clip: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// Lines of `x y x' y'`: a NIR point and the matching RGB point.
    #[arg(long)]
    correspondences: PathBuf,
    /// Inlier threshold in pixels.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Frame tensor whose NIR channel is warped into RGB coordinates.
    #[arg(long)]
    frame: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_frame(path: &Path) -> Result<MultiModalFrame> {
    let t = load_tensor(path)?.into_3d()?;
    Ok(MultiModalFrame::from_rgbn(&t)?)
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let lighting = match &a.lighting {
        Some(p) => LightingConfig::load(p)?,
        None => LightingConfig::default(),
    };
    let specs = if a.scenes.is_empty() {
        benchmark_scenes()
    } else {
        let mut specs = Vec::with_capacity(a.scenes.len());
        for p in &a.scenes {
            let scene = PressScene::load(p).map_err(|e| anyhow::Error::new(e).context(p.display().to_string()))?;
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
            if specs.iter().any(|s: &SceneSpec| s.name == name) {
                bail!(tactile_core::Error::Contract(format!("duplicate scene name `{name}`")));
            }
            specs.push(SceneSpec {
                name,
                split: a.split,
                scene,
            });
        }
        specs
    };
    let ds = Dataset::generate(&specs, &lighting, seed)?;
    ds.save(&a.out, !a.no_previews)?;
    println!("wrote {} items to {}", ds.items.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), seed)?;
    let ds = Dataset::load(&a.dataset)?;
    let state = train(&ds.samples(Split::Train), &ds.samples(Split::Val), &cfg, a.mode)?;
    save_model(&state.model, &a.out)?;
    write_text(&a.out.join("loss.csv"), &state.loss_csv())?;
    let (first, last) = (state.initial, state.final_loss());
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
    println!(
        "{} epochs, train L1 {:.5} -> {:.5}, val L1 {} -> {}",
        state.history.len(),
        first.train_l1,
        last.train_l1,
        show(first.val_l1),
        show(last.val_l1)
    );
    Ok(())
}

fn ablate(a: &AblateArgs, seed: Option<u64>) -> Result<()> {
    let cfg = AblationConfig {
        train: train_config(a.config.as_deref(), seed)?,
        lut_bins: a.bins,
        ..AblationConfig::default()
    };
    let ds = Dataset::load(&a.dataset)?;
    let ab = run_ablation(&ds, &cfg)?;
    write_ablation(&ab, &a.out)?;
    print!("{}", format_table(&ab.reports));
    Ok(())
}

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<()> {
    let frame = load_frame(&a.frame)?;
    let background = load_frame(&a.background)?;
    let opts = ReconstructOptions {
        pitch: a.pitch,
        clip_negative: a.clip,
        ..ReconstructOptions::default()
    };
    let r = match (&a.weights, &a.lut) {
        (Some(w), _) => {
            let model = load_model_for(w, a.mode)?;
            reconstruct(&frame, &background, Estimator::Pfsnn(&model), a.mode, &opts)?
        }
        (None, Some(l)) => {
            let table = LutTable::load(l)?;
            reconstruct(&frame, &background, Estimator::Lut(&table), a.mode, &opts)?
        }
        (None, None) => unreachable!("clap requires --weights or --lut"),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_tensor(r.normals.tensor(), a.out.join("normals.tsr"))?;
    save_normals_png(&r.normals, a.out.join("normals.png"))?;
    save_tensor(r.depth.depth(), a.out.join("depth.tsr"))?;
    save_depth_png(&r.depth, a.out.join("depth.png"))?;
    println!("peak depth {:.4} mm", r.depth.depth().max());
    Ok(())
}

fn align_cmd(a: &AlignArgs, seed: u64) -> Result<()> {
    let c = Correspondences::load(&a.correspondences)?;
    let cfg = RansacConfig {
        threshold: a.threshold,
        iterations: a.iterations,
        seed,
    };
    let fit = ransac_homography(&c, &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fit.homography.save(a.out.join("homography.tsr"))?;
    let inliers: String = fit.inliers.iter().map(|&i| format!("{}\n", u8::from(i))).collect();
    write_text(&a.out.join("inliers.txt"), &inliers)?;
    if let Some(p) = &a.frame {
        let aligned = warp_nir(&load_frame(p)?, &fit.homography)?;
        save_tensor(&aligned.to_rgbn(), a.out.join("aligned.tsr"))?;
        save_frame_png(&aligned, &a.out, "aligned")?;
    }
    let m = fit.homography.matrix();
    println!("{} of {} correspondences are inliers", fit.inlier_count(), c.len());
    for r in 0..3 {
        println!("{:>14.8} {:>14.8} {:>14.8}", m[(r, 0)], m[(r, 1)], m[(r, 2)]);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(tactile_core::Error::Config {
                line: 0,
                msg: "--threads must be at least 1".into()
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting the thread pool")?;
    }
    match &cli.cmd {
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Ablate(a) => ablate(a, cli.seed),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Align(a) => align_cmd(a, cli.seed.unwrap_or(0)),
    }
}

/// 2 for bad input (files, configs, modality), 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let input = err
        .chain()
        .filter_map(|e| e.downcast_ref::<tactile_core::Error>())
        .any(|e| e.is_input_error());
    if input {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
