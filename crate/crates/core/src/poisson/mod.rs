//! Depth from normals: gradient fields and a sine-transform Poisson solver.
//!
//! The depth `d` solves `lap(d) = div(g)` on the image with `d = 0` on the
//! border. The 5-point Laplacian is diagonal in the DST-I basis, so the solve
//! is two transforms and a pointwise division.

mod dst;
mod reconstruct;

pub use reconstruct::{reconstruct, Estimator, ReconstructOptions, Reconstruction};

use crate::error::{Error, Result};
use crate::tensor::{DepthMap, Encoding, NormalMap, Tensor2D};

use dst::{transpose, Dst1};

pub const DEFAULT_CLAMP_NZ: f64 = 0.05;

/// Surface slopes `dd/dx`, `dd/dy` (mm per mm) on a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    gx: Tensor2D,
    gy: Tensor2D,
    pitch: f32,
}

impl GradientField {
    pub fn new(gx: Tensor2D, gy: Tensor2D, pitch: f32) -> Result<Self> {
        if (gx.height(), gx.width()) != (gy.height(), gy.width()) {
            return Err(Error::mismatch(
                format!("gy {}x{}", gx.height(), gx.width()),
                format!("{}x{}", gy.height(), gy.width()),
            ));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::Contract(format!("pixel pitch must be positive, got {pitch}")));
        }
        Ok(Self { gx, gy, pitch })
    }

    pub fn gx(&self) -> &Tensor2D {
        &self.gx
    }

    pub fn gy(&self) -> &Tensor2D {
        &self.gy
    }

    pub fn pitch(&self) -> f32 {
        self.pitch
    }

    pub fn height(&self) -> usize {
        self.gx.height()
    }

    pub fn width(&self) -> usize {
        self.gx.width()
    }

    /// Same field multiplied by `alpha`.
    pub fn scaled(&self, alpha: f32) -> Result<Self> {
        let s = |t: &Tensor2D| Tensor2D::new(t.height(), t.width(), t.data().iter().map(|v| v * alpha).collect());
        Self::new(s(&self.gx)?, s(&self.gy)?, self.pitch)
    }
}

/// `gx = -nx / max(nz, clamp_nz)`, likewise for `gy`.
pub fn gradients_from_normals(n: &NormalMap, clamp_nz: f64, pitch: f32) -> Result<GradientField> {
    if n.encoding() != Encoding::Unit {
        return Err(Error::Contract("gradients_from_normals expects unit normals".into()));
    }
    let (h, w) = (n.height(), n.width());
    let mut gx = Vec::with_capacity(h * w);
    let mut gy = Vec::with_capacity(h * w);
    for idx in 0..h * w {
        let v = n.unit_at(idx);
        let nz = v[2].max(clamp_nz);
        gx.push((-v[0] / nz) as f32);
        gy.push((-v[1] / nz) as f32);
    }
    GradientField::new(Tensor2D::new(h, w, gx)?, Tensor2D::new(h, w, gy)?, pitch)
}

/// Central-difference divergence on interior pixels; border entries are 0.
pub fn divergence(g: &GradientField) -> Vec<f64> {
    let (h, w) = (g.height(), g.width());
    let two_p = 2.0 * g.pitch as f64;
    let mut div = vec![0.0; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let dgx = g.gx.get(y, x + 1) as f64 - g.gx.get(y, x - 1) as f64;
            let dgy = g.gy.get(y + 1, x) as f64 - g.gy.get(y - 1, x) as f64;
            div[y * w + x] = (dgx + dgy) / two_p;
        }
    }
    div
}

/// 5-point Laplacian on interior pixels; border entries are 0.
pub fn laplacian(d: &[f64], height: usize, width: usize, pitch: f64) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    let p2 = pitch * pitch;
    for y in 1..height.saturating_sub(1) {
        for x in 1..width - 1 {
            let i = y * width + x;
            out[i] = (d[i - 1] + d[i + 1] + d[i - width] + d[i + width] - 4.0 * d[i]) / p2;
        }
    }
    out
}

fn check_grid(height: usize, width: usize, len: usize) -> Result<()> {
    if height < 3 || width < 3 {
        return Err(Error::Degenerate(format!(
            "Poisson grid must be at least 3x3, got {height}x{width}"
        )));
    }
    if len != height * width {
        return Err(Error::mismatch(height * width, len));
    }
    Ok(())
}

/// Solves `lap(d) = rhs` on interior pixels with `d = 0` on the border.
/// `rhs` border entries are ignored. Returns the full grid.
pub fn solve_dirichlet(rhs: &[f64], height: usize, width: usize, pitch: f64) -> Result<Vec<f64>> {
    check_grid(height, width, rhs.len())?;
    let (m, n) = (height - 2, width - 2);
    let mut f: Vec<f64> = Vec::with_capacity(m * n);
    for y in 1..=m {
        f.extend_from_slice(&rhs[y * width + 1..y * width + 1 + n]);
    }
    let dst_x = Dst1::new(n);
    let dst_y = Dst1::new(m);
    dst_x.rows(&mut f);
    let mut ft = transpose(&f, m, n);
    dst_y.rows(&mut ft);

    // ft is n x m: row k is the x-frequency, column l the y-frequency.
    let p2 = pitch * pitch;
    let lam_x: Vec<f64> = (1..=n)
        .map(|k| 2.0 * (std::f64::consts::PI * k as f64 / (n + 1) as f64).cos() - 2.0)
        .collect();
    let lam_y: Vec<f64> = (1..=m)
        .map(|l| 2.0 * (std::f64::consts::PI * l as f64 / (m + 1) as f64).cos() - 2.0)
        .collect();
    let scale = 4.0 / ((n + 1) * (m + 1)) as f64;
    for k in 0..n {
        for l in 0..m {
            ft[k * m + l] *= p2 * scale / (lam_x[k] + lam_y[l]);
        }
    }

    dst_y.rows(&mut ft);
    let mut sol = transpose(&ft, n, m);
    dst_x.rows(&mut sol);

    let mut d = vec![0.0; height * width];
    for y in 1..=m {
        d[y * width + 1..y * width + 1 + n].copy_from_slice(&sol[(y - 1) * n..y * n]);
    }
    Ok(d)
}

/// Integrates a gradient field into depth (`f64` result, full grid).
pub fn integrate(g: &GradientField) -> Result<Vec<f64>> {
    check_grid(g.height(), g.width(), g.height() * g.width())?;
    solve_dirichlet(&divergence(g), g.height(), g.width(), g.pitch as f64)
}

/// Integrates a gradient field into a depth map with zero border.
pub fn fast_poisson(g: &GradientField) -> Result<DepthMap> {
    let d = integrate(g)?;
    DepthMap::new(
        Tensor2D::new(g.height(), g.width(), d.into_iter().map(|v| v as f32).collect())?,
        g.pitch,
    )
}

/// Gauss-Seidel relaxation of the same discrete problem as
/// [`solve_dirichlet`]; slow, kept as an independent reference.
pub fn gauss_seidel(
    rhs: &[f64],
    height: usize,
    width: usize,
    pitch: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    check_grid(height, width, rhs.len())?;
    let p2 = pitch * pitch;
    let mut d = vec![0.0; height * width];
    for _ in 0..max_sweeps {
        let mut max_change: f64 = 0.0;
        let mut max_val: f64 = 0.0;
        for y in 1..height - 1 {
            for x in 1..width - 1 {
                let i = y * width + x;
                let new = 0.25 * (d[i - 1] + d[i + 1] + d[i - width] + d[i + width] - p2 * rhs[i]);
                max_change = max_change.max((new - d[i]).abs());
                max_val = max_val.max(new.abs());
                d[i] = new;
            }
        }
        if max_change <= tolerance * max_val.max(f64::MIN_POSITIVE) {
            return Ok(d);
        }
    }
    Err(Error::Degenerate(format!(
        "Gauss-Seidel did not converge in {max_sweeps} sweeps"
    )))
}
