//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tactile_core::align::{ransac_homography, Correspondences, Homography, RansacConfig};
use tactile_core::gelsim::LightingConfig;
use tactile_core::harness::{
    align_nir, benchmark_misalignment, checkerboard_correspondences, misalign_nir, run_ablation, AblationConfig,
    Ablation, Dataset, Split,
};
use tactile_core::metrics::{dominant_period, CONDITION_LABELS};
use tactile_core::pfsnn::{
    batch_l1_and_grad, forward_pixel, sphere_normalize, train, Activations, MlpWeights, Params, TrainConfig,
    INPUT_CHANNELS,
};
use tactile_core::poisson::{divergence, gauss_seidel, integrate, laplacian, solve_dirichlet, GradientField};
use tactile_core::{DepthMap, Modality, Tensor2D};

const SEED: u64 = 2024;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Fixture {
    dataset: Dataset,
    ablation: Ablation,
    seconds: f64,
}

fn fixture() -> Fixture {
    let dataset = Dataset::benchmark(&LightingConfig::default(), SEED).expect("benchmark renders");
    let start = Instant::now();
    let cfg = AblationConfig {
        train: TrainConfig {
            seed: SEED,
            ..TrainConfig::default()
        },
        ..AblationConfig::default()
    };
    let ablation = run_ablation(&dataset, &cfg).expect("ablation runs");
    Fixture {
        dataset,
        ablation,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn fmt_mae(m: &[f64; 4]) -> String {
    CONDITION_LABELS
        .iter()
        .zip(m)
        .map(|(l, v)| format!("{l} {v:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn ablation_ordering(fx: &Fixture) -> Outcome {
    let [lut_rgb, lut_nir, pf_rgb, pf_nir] = fx.ablation.mae();
    let ok = pf_nir < pf_rgb && lut_nir < lut_rgb && pf_nir <= 0.8 * lut_rgb && fx.seconds < 600.0;
    check(
        ok,
        format!(
            "MAE deg: {}; PFSNN w. NIR / LUT w/o NIR = {:.3}; ablation took {:.0} s",
            fmt_mae(&fx.ablation.mae()),
            pf_nir / lut_rgb,
            fx.seconds
        ),
    )
}

/// Forward-only view of a batch: the arguments of every non-smooth point
/// (ReLU inputs of both hidden layers, the output layer when the extra ReLU
/// is on, and the L1 residuals), the pre-normalization vector `t` of each
/// pixel, and the mean L1 loss.
struct Probe {
    kinks: Vec<f64>,
    t: Vec<[f64; 3]>,
    loss: f64,
}

fn probe(p: &Params<f64>, xs: &[[f64; INPUT_CHANNELS]], ts: &[[f64; 3]], relu: bool) -> Probe {
    let mut a = Activations::default();
    let mut kinks = Vec::new();
    let mut t = Vec::with_capacity(xs.len());
    let mut loss = 0.0;
    for (x, target) in xs.iter().zip(ts) {
        forward_pixel(p, x, relu, &mut a);
        kinks.extend_from_slice(&a.z1);
        kinks.extend_from_slice(&a.z2);
        if relu {
            kinks.extend_from_slice(&a.z3);
        }
        let out = a.encoded();
        for c in 0..3 {
            kinks.push(out[c] - target[c]);
            loss += (out[c] - target[c]).abs();
        }
        t.push(a.t);
    }
    Probe {
        kinks,
        t,
        loss: loss / (3 * xs.len()) as f64,
    }
}

/// True when the +-h stencil crosses a kink or moves an argument that sits
/// within 1e-4 of one, or when it moves some pixel's `t` by more than
/// `sqrt(tol) * |t|`. Past that ratio the curvature of `t / |t|` alone puts
/// the central difference outside `tol`.
fn kink_adjacent(base: &Probe, plus: &Probe, minus: &Probe, tol: f64) -> bool {
    let relu = base.kinks.iter().zip(&plus.kinks).zip(&minus.kinks).any(|((&b, &p), &m)| {
        let moved = p != b || m != b;
        moved && ((p > 0.0) != (b > 0.0) || (m > 0.0) != (b > 0.0) || b.abs() < 1e-4)
    });
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let sphere = base.t.iter().zip(&plus.t).zip(&minus.t).any(|((&b, &p), &m)| {
        let step = norm(std::array::from_fn(|c| p[c] - b[c])).max(norm(std::array::from_fn(|c| m[c] - b[c])));
        step > 0.0 && step > tol.sqrt() * norm(b)
    });
    relu || sphere
}

/// Per draw, the gradient-check relative error `||a - n|| / (||a|| + ||n||)` over
/// all smooth parameters, with `a` the backprop gradient and `n` the central
/// difference. A draw where both are zero everywhere counts as error 0.
/// The worst single-component ratio is reported alongside.
fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (h, tol) = (1e-3, 1e-3);
    let (mut empty_draws, mut zero_draws) = (0, 0);
    let mut worst_draw: f64 = 0.0;
    let mut worst_component: f64 = 0.0;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for draw in 0..10u64 {
        let relu = draw % 2 == 1;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
        let p = MlpWeights::init(&mut rng).to_f64();
        let xs: Vec<[f64; INPUT_CHANNELS]> = (0..16).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let ts: Vec<[f64; 3]> = (0..16).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let (_, g) = batch_l1_and_grad(&p, &xs, &ts, relu);
        let base = probe(&p, &xs, &ts, relu);
        let analytic: Vec<f64> = g.slices().iter().flat_map(|s| s.iter().copied()).collect();
        let sizes: Vec<usize> = p.slices().iter().map(|s| s.len()).collect();
        let pairs: Vec<Option<(f64, f64)>> = (0..analytic.len())
            .into_par_iter()
            .map(|k| {
                let (mut part, mut idx) = (0, k);
                while idx >= sizes[part] {
                    idx -= sizes[part];
                    part += 1;
                }
                let shifted = |delta: f64| {
                    let mut q = p.clone();
                    q.slices_mut()[part][idx] += delta;
                    q
                };
                let plus = probe(&shifted(h), &xs, &ts, relu);
                let minus = probe(&shifted(-h), &xs, &ts, relu);
                if kink_adjacent(&base, &plus, &minus, tol) {
                    return None;
                }
                let numeric = (plus.loss - minus.loss) / (2.0 * h);
                Some((analytic[k], numeric))
            })
            .collect();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        let before = checked;
        for r in pairs {
            match r {
                Some((a, n)) => {
                    diff2 += (a - n) * (a - n);
                    a2 += a * a;
                    n2 += n * n;
                    if a != 0.0 || n != 0.0 {
                        worst_component = worst_component.max((a - n).abs() / a.abs().max(n.abs()));
                    }
                    checked += 1;
                }
                None => skipped += 1,
            }
        }
        if checked == before {
            empty_draws += 1;
        } else if a2 + n2 == 0.0 {
            zero_draws += 1;
        } else {
            worst_draw = worst_draw.max(diff2.sqrt() / (a2.sqrt() + n2.sqrt()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_draw < tol && empty_draws == 0 && secs < 30.0,
        format!(
            "max relative error {worst_draw:.2e} over 10 draws, {checked} parameters checked, {skipped} kink-adjacent skipped, \
             {zero_draws} draws with an identically zero smooth gradient, {empty_draws} without a smooth parameter \
             (worst single component {worst_component:.1e}); {secs:.1} s"
        ),
    )
}

fn sphere_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut eps_cases, mut worst) = (0usize, 0.0f64);
    for _ in 0..100_000 {
        // magnitudes from 1e-15 to 10 so the guard branch is exercised
        let scale = 10f64.powf(rng.random_range(-15.0..1.0));
        let x: [f64; 3] = std::array::from_fn(|_| scale * rng.random_range(-1.0..1.0));
        let t = x.map(f64::tanh);
        let tn = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        let out = sphere_normalize(x);
        let on = (out[0] * out[0] + out[1] * out[1] + out[2] * out[2]).sqrt();
        if tn <= 1e-12 {
            eps_cases += 1;
            if out != [0.0; 3] {
                return Err(format!("input {x:?} should map to the zero vector, got {out:?}"));
            }
        } else {
            worst = worst.max((on - 1.0).abs());
        }
    }
    check(
        worst <= 1e-6 && eps_cases > 0,
        format!("max |norm - 1| = {worst:.1e}; {eps_cases} inputs took the zero-vector branch"),
    )
}

fn smooth_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.02..0.3),
                rng.random_range(0.02..0.3),
                rng.random_range(0.0..6.3),
            )
        })
        .collect();
    (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            terms.iter().map(|(a, fx, fy, ph)| a * (fx * x + ph).sin() * (fy * y).cos()).sum()
        })
        .collect()
}

fn poisson_solver() -> Outcome {
    // paraboloid round trip, analytic slopes
    let (n, pitch, amp, r0) = (128usize, 0.05f64, 0.3f64, 2.0f64);
    let c = (n as f64 - 1.0) / 2.0;
    let mk = |f: &dyn Fn(f64, f64) -> f64| Tensor2D::from_fn(n, n, |y, x| f(x as f64, y as f64) as f32).unwrap();
    let inside = |x: f64, y: f64| ((x - c) * pitch).powi(2) + ((y - c) * pitch).powi(2) < r0 * r0;
    let gx = mk(&|x, y| if inside(x, y) { -2.0 * amp * (x - c) * pitch / (r0 * r0) } else { 0.0 });
    let gy = mk(&|x, y| if inside(x, y) { -2.0 * amp * (y - c) * pitch / (r0 * r0) } else { 0.0 });
    let g = GradientField::new(gx, gy, pitch as f32).unwrap();
    let d = integrate(&g).map_err(|e| e.to_string())?;
    let truth = |i: usize| {
        let (x, y) = ((i % n) as f64, (i / n) as f64);
        amp * (1.0 - (((x - c) * pitch).powi(2) + ((y - c) * pitch).powi(2)) / (r0 * r0)).max(0.0)
    };
    let rmse = ((0..n * n).map(|i| (d[i] - truth(i)).powi(2)).sum::<f64>() / (n * n) as f64).sqrt();

    // discrete residual
    let div = divergence(&g);
    let lap = laplacian(&d, n, n, pitch);
    let res = lap.iter().zip(&div).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let div_max = div.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // agreement with Gauss-Seidel on random smooth right-hand sides
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..5 {
        let rhs = smooth_field(&mut rng, 64);
        let fast = solve_dirichlet(&rhs, 64, 64, 0.1).map_err(|e| e.to_string())?;
        let slow = gauss_seidel(&rhs, 64, 64, 0.1, 1e-13, 200_000).map_err(|e| e.to_string())?;
        let diff = (fast.iter().zip(&slow).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 4096.0).sqrt();
        let norm = (slow.iter().map(|v| v * v).sum::<f64>() / 4096.0).sqrt();
        worst_rel = worst_rel.max(diff / norm);
    }
    check(
        rmse < 0.02 * amp && res < 1e-4 * div_max && worst_rel < 1e-4,
        format!(
            "paraboloid RMSE {:.2}% of peak; residual {:.1e} x max|div g|; DST vs Gauss-Seidel relative RMSE {worst_rel:.1e}",
            100.0 * rmse / amp,
            res / div_max
        ),
    )
}

fn random_homography(rng: &mut ChaCha8Rng) -> Homography {
    Homography::new(nalgebra::Matrix3::new(
        1.0 + rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-8.0..8.0),
        rng.random_range(-0.05..0.05),
        1.0 + rng.random_range(-0.05..0.05),
        rng.random_range(-8.0..8.0),
        rng.random_range(-2e-4..2e-4),
        rng.random_range(-2e-4..2e-4),
        1.0,
    ))
    .unwrap()
}

fn ransac_trials() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + trial);
        let truth = random_homography(&mut rng);
        let mut pairs = Vec::new();
        let mut is_inlier = Vec::new();
        for i in 0..100 {
            let p = [rng.random_range(0.0..160.0), rng.random_range(0.0..120.0)];
            if i % 10 < 3 {
                pairs.push((p, [rng.random_range(0.0..160.0), rng.random_range(0.0..120.0)]));
                is_inlier.push(false);
            } else {
                let q = truth.apply(p);
                pairs.push((p, [q[0] + rng.random_range(-0.1..0.1), q[1] + rng.random_range(-0.1..0.1)]));
                is_inlier.push(true);
            }
        }
        let c = Correspondences::new(pairs.clone()).unwrap();
        let cfg = RansacConfig {
            threshold: 1.0,
            iterations: 1000,
            seed: trial,
        };
        let r = ransac_homography(&c, &cfg).map_err(|e| format!("trial {trial}: {e}"))?;
        for ((p, _), inl) in pairs.iter().zip(&is_inlier) {
            if *inl {
                let (a, b) = (r.homography.apply(*p), truth.apply(*p));
                worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
    }
    Ok(worst)
}

fn alignment(fx: &Fixture) -> Outcome {
    let worst = ransac_trials()?;
    let ds = &fx.dataset;
    let (h, w) = (ds.background.height(), ds.background.width());
    let mis = benchmark_misalignment(h, w);
    let shifted = misalign_nir(ds, &mis).map_err(|e| e.to_string())?;
    let corners = checkerboard_correspondences(&mis, h, w, 9, 7, 0.1, SEED).map_err(|e| e.to_string())?;
    let fit = ransac_homography(&corners, &RansacConfig::default()).map_err(|e| e.to_string())?;
    let restored = align_nir(&shifted, &fit.homography).map_err(|e| e.to_string())?;
    let cfg = AblationConfig {
        train: TrainConfig {
            seed: SEED,
            ..TrainConfig::default()
        },
        ..AblationConfig::default()
    };
    let rerun = run_ablation(&restored, &cfg).map_err(|e| e.to_string())?;
    let (base, back) = (fx.ablation.mae(), rerun.mae());
    let gap = base.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        worst < 0.5 && gap < 0.5,
        format!(
            "RANSAC worst inlier reprojection error {worst:.3} px over 20 trials; after align+warp: {}; max MAE change {gap:.3} deg",
            fmt_mae(&back)
        ),
    )
}

fn training_convergence(fx: &Fixture) -> Outcome {
    let state = &fx.ablation.pfsnn[1];
    let v0 = state.initial.val_l1.ok_or("no validation loss")?;
    let vn = state.final_loss().val_l1.ok_or("no validation loss")?;
    let cfg = TrainConfig {
        seed: SEED,
        ..TrainConfig::default()
    };
    let ds = &fx.dataset;
    let again = train(&ds.samples(Split::Train), &ds.samples(Split::Val), &cfg, Modality::RgbNir)
        .map_err(|e| e.to_string())?;
    let identical = again.loss_csv() == state.loss_csv();
    check(
        vn < 0.5 * v0 && identical,
        format!(
            "validation L1 {v0:.4} -> {vn:.4} (ratio {:.3}); same-seed loss CSVs identical: {identical}",
            vn / v0
        ),
    )
}

/// Depth sampled every pixel along a line through `(cx, cy)` at `angle`.
fn profile(d: &DepthMap, cx: f64, cy: f64, angle: f64, half_len: f64) -> Vec<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    let t = d.depth();
    let n = (2.0 * half_len) as usize + 1;
    (0..n)
        .map(|i| {
            let u = i as f64 - half_len;
            let (x, y) = (cx + u * c, cy + u * s);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let v = |yy: usize, xx: usize| t.get(yy, xx) as f64;
            (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)) + fy * ((1.0 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1))
        })
        .collect()
}

fn periodic_structure(fx: &Fixture) -> Outcome {
    let outputs = &fx.ablation.outputs[3];
    let depth_of = |name: &str| {
        outputs
            .iter()
            .find(|o| o.name == name)
            .map(|o| &o.reconstruction.depth)
            .ok_or(format!("no reconstruction for {name}"))
    };
    let pitch = fx.dataset.pitch;
    // thread: pitch 1.0 mm along the x axis, 100 px long around (80, 60)
    let thread = profile(depth_of("screw_thread")?, 80.0, 60.0, 0.0, 40.0);
    let thread_expected = 1.0 / pitch;
    let thread_period = dominant_period(&thread, 3.0, 30.0).map_err(|e| e.to_string())?;
    // grating: period 0.8 mm at 20 degrees in the region (30, 20)-(130, 100)
    let grating = profile(depth_of("fingerprint")?, 80.0, 60.0, 20f64.to_radians(), 30.0);
    let grating_expected = 0.8 / pitch;
    let grating_period = dominant_period(&grating, 3.0, 30.0).map_err(|e| e.to_string())?;
    let err_t = (thread_period - thread_expected).abs() / thread_expected;
    let err_g = (grating_period - grating_expected).abs() / grating_expected;
    check(
        err_t < 0.1 && err_g < 0.1,
        format!(
            "screw thread period {thread_period:.2} px (expected {thread_expected:.1}); ridge grating period {grating_period:.2} px (expected {grating_expected:.1})"
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (2, "gradient check", gradient_check()),
        (3, "sphere normalization", sphere_normalization()),
        (4, "Poisson solver", poisson_solver()),
    ];
    let fx = fixture();
    results.push((1, "ablation ordering", ablation_ordering(&fx)));
    results.push((5, "alignment", alignment(&fx)));
    results.push((6, "training convergence", training_convergence(&fx)));
    results.push((7, "periodic structure", periodic_structure(&fx)));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, outcome) in results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {id} [{tag}] {name}: {detail}");
    }
    println!("acceptance: {} of 7 criteria passed in {:.0} s", 7 - failed, started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
