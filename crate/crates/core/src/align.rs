//! Cross-camera alignment: homographies from point correspondences, RANSAC,
//! and image warping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};
use crate::tensor::{MultiModalFrame, Tensor2D, Tensor3D};

pub type Point = [f64; 2];

/// Matched points `src -> dst`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub pairs: Vec<(Point, Point)>,
}

impl Correspondences {
    pub fn new(pairs: Vec<(Point, Point)>) -> Result<Self> {
        if pairs.iter().any(|(a, b)| !(a.iter().chain(b).all(|v| v.is_finite()))) {
            return Err(Error::NonFinite("correspondences"));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One `x y x' y'` quadruple per line; blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(origin, format!("line {}: {e}", no + 1)))?;
            if vals.len() != 4 {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected 4 numbers, got {}", no + 1, vals.len()),
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(origin, format!("line {}: non-finite coordinate", no + 1)));
            }
            pairs.push(([vals[0], vals[1]], [vals[2], vals[3]]));
        }
        Ok(Self { pairs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (a, b) in &self.pairs {
            let _ = writeln!(s, "{} {} {} {}", a[0], a[1], b[0], b[1]);
        }
        s
    }
}

/// Projective map with `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// Scales `m` so its bottom-right entry is 1 and checks invertibility.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("homography"));
        }
        let h33 = m[(2, 2)];
        if h33.abs() < 1e-12 {
            return Err(Error::Degenerate("homography has h33 = 0".into()));
        }
        let m = m / h33;
        if m.determinant().abs() <= 1e-12 {
            return Err(Error::Degenerate("homography is not invertible".into()));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.0 * Vector3::new(p[0], p[1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
        Self::new(inv)
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.0 * other.0)
    }

    /// Saved as a 3x3 `TSR1` tensor.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = self.0.transpose().iter().map(|&v| v as f32).collect();
        save_tensor(&Tensor2D::new(3, 3, data)?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let t = load_tensor(path)?.into_2d()?;
        if (t.height(), t.width()) != (3, 3) {
            return Err(Error::mismatch("3x3 homography", format!("{}x{}", t.height(), t.width())));
        }
        Self::new(Matrix3::from_fn(|r, c| t.get(r, c) as f64))
    }

    /// `0.5 * (|dst - H src| + |src - H^-1 dst|)`.
    pub fn symmetric_error(&self, inv: &Homography, src: Point, dst: Point) -> f64 {
        let f = self.apply(src);
        let b = inv.apply(dst);
        let fwd = ((f[0] - dst[0]).powi(2) + (f[1] - dst[1]).powi(2)).sqrt();
        let bwd = ((b[0] - src[0]).powi(2) + (b[1] - src[1]).powi(2)).sqrt();
        let e = 0.5 * (fwd + bwd);
        if e.is_finite() {
            e
        } else {
            f64::INFINITY
        }
    }
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(pts: &[Point]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = pts.iter().map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if mean < 1e-12 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = [(a, b), (a, c), (b, c)]
        .iter()
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .fold(0.0, f64::max);
    cross.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE)
}

/// True when some three points of a 4-point sample are collinear on either side.
fn minimal_set_degenerate(c: &[(Point, Point)]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        collinear(c[t[0]].0, c[t[1]].0, c[t[2]].0) || collinear(c[t[0]].1, c[t[1]].1, c[t[2]].1)
    })
}

fn dlt(pairs: &[(Point, Point)]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::Contract(format!(
            "a homography needs at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    if pairs.len() == 4 && minimal_set_degenerate(pairs) {
        return Err(Error::Degenerate("three of the four points are collinear".into()));
    }
    let src: Vec<Point> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point> = pairs.iter().map(|p| p.1).collect();
    let ts = normalizer(&src)?;
    let td = normalizer(&dst)?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in pairs.iter().enumerate() {
        let s = ts * Vector3::new(s[0], s[1], 1.0);
        let d = td * Vector3::new(d[0], d[1], 1.0);
        let (x, y, u, v) = (s[0], s[1], d[0], d[1]);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (order[0], order[1]);
    let largest = svd.singular_values[order[order.len() - 1]];
    if svd.singular_values[second] <= 1e-10 * largest {
        return Err(Error::Degenerate("correspondences do not determine a unique homography".into()));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("normalization failed".into()))?;
    Homography::new(td_inv * hn * ts)
}

/// Normalized DLT fit minimizing algebraic error; exact for consistent,
/// noise-free correspondences.
pub fn estimate_homography(c: &Correspondences) -> Result<Homography> {
    dlt(&c.pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold on the symmetric transfer error, in pixels.
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn inlier_mask(h: &Homography, pairs: &[(Point, Point)], threshold: f64) -> Option<Vec<bool>> {
    let inv = h.inverse().ok()?;
    Some(pairs.iter().map(|&(s, d)| h.symmetric_error(&inv, s, d) < threshold).collect())
}

/// RANSAC over minimal 4-point samples, then a refit on the best consensus
/// set. Ties between samples go to the earliest iteration.
pub fn ransac_homography(c: &Correspondences, cfg: &RansacConfig) -> Result<RansacResult> {
    let pairs = &c.pairs;
    if pairs.len() < 4 {
        return Err(Error::Contract(format!(
            "RANSAC needs at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    if !(cfg.threshold.is_finite() && cfg.threshold > 0.0) {
        return Err(Error::Contract("RANSAC threshold must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, pairs.len(), 4);
        let minimal: Vec<(Point, Point)> = idx.iter().map(|i| pairs[i]).collect();
        let Ok(h) = dlt(&minimal) else { continue };
        let Some(mask) = inlier_mask(&h, pairs, cfg.threshold) else {
            continue;
        };
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(n, _)| count > *n) {
            best = Some((count, mask));
        }
    }
    let (count, mask) = best.ok_or_else(|| Error::AlignmentFailed("no non-degenerate sample".into()))?;
    if count < 4 {
        return Err(Error::AlignmentFailed(format!("best model has only {count} inliers")));
    }

    // Refit on the consensus set, iterating while the set keeps growing.
    let mut mask = mask;
    let mut model = None;
    for _ in 0..10 {
        let set: Vec<(Point, Point)> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        let Ok(h) = dlt(&set) else { break };
        let Some(new_mask) = inlier_mask(&h, pairs, cfg.threshold) else {
            break;
        };
        let (old_n, new_n) = (count_true(&mask), count_true(&new_mask));
        if new_n < old_n || new_n < 4 {
            break;
        }
        let stable = new_mask == mask;
        model = Some(h);
        mask = new_mask;
        if stable {
            break;
        }
    }
    let homography = match model {
        Some(h) => h,
        None => {
            return Err(Error::AlignmentFailed("refit on the consensus set failed".into()));
        }
    };
    Ok(RansacResult { homography, inliers: mask })
}

fn count_true(m: &[bool]) -> usize {
    m.iter().filter(|&&b| b).count()
}

/// Inverse-mapped bilinear resampling: `out(p) = src(H^-1 p)`, zero outside.
pub fn warp_tensor(src: &Tensor3D, h: &Homography) -> Result<Tensor3D> {
    let inv = h.inverse()?;
    let (hh, ww, ch) = (src.height(), src.width(), src.channels());
    Tensor3D::from_pixel_fn(hh, ww, ch, |y, x, out| {
        let [sx, sy] = inv.apply([x as f64, y as f64]);
        if !(sx >= 0.0 && sy >= 0.0 && sx <= (ww - 1) as f64 && sy <= (hh - 1) as f64) {
            out.fill(0.0);
            return;
        }
        let x0 = (sx.floor() as usize).min(ww.saturating_sub(2));
        let y0 = (sy.floor() as usize).min(hh.saturating_sub(2));
        let x1 = (x0 + 1).min(ww - 1);
        let y1 = (y0 + 1).min(hh - 1);
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let (p00, p01, p10, p11) = (src.pixel(y0, x0), src.pixel(y0, x1), src.pixel(y1, x0), src.pixel(y1, x1));
        for c in 0..ch {
            let v = (1.0 - fy) * ((1.0 - fx) * p00[c] as f64 + fx * p01[c] as f64)
                + fy * ((1.0 - fx) * p10[c] as f64 + fx * p11[c] as f64);
            out[c] = v as f32;
        }
    })
}

/// Warps every channel of a frame.
pub fn warp_frame(frame: &MultiModalFrame, h: &Homography) -> Result<MultiModalFrame> {
    MultiModalFrame::new(clamp01(warp_tensor(frame.rgb(), h)?)?, clamp01(warp_tensor(frame.nir(), h)?)?)
}

/// Warps only the NIR image, leaving RGB as the reference view.
pub fn warp_nir(frame: &MultiModalFrame, h: &Homography) -> Result<MultiModalFrame> {
    MultiModalFrame::new(frame.rgb().clone(), clamp01(warp_tensor(frame.nir(), h)?)?)
}

fn clamp01(t: Tensor3D) -> Result<Tensor3D> {
    let (h, w, c) = (t.height(), t.width(), t.channels());
    Tensor3D::new(h, w, c, t.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}
