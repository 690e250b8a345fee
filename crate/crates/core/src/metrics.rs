//! Angular and depth error measures, evaluation reports and table output.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{normalize_or_zero, DepthMap, NormalMap};

/// Published angular MAE (degrees) for the four conditions, in column order.
pub const REFERENCE_MAE_DEG: [f64; 4] = [9.292, 8.731, 6.057, 5.682];
pub const CONDITION_LABELS: [&str; 4] = ["LUT w/o NIR", "LUT w. NIR", "PFSNN w/o NIR", "PFSNN w. NIR"];

/// Pairwise (cascade) summation; the result does not depend on thread count.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn check_mask(mask: Option<&[bool]>, n: usize) -> Result<usize> {
    match mask {
        Some(m) if m.len() != n => Err(Error::mismatch(format!("mask of {n} pixels"), m.len())),
        Some(m) => Ok(m.iter().filter(|&&b| b).count()),
        None => Ok(n),
    }
}

fn selected(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Angle in degrees between two directions. Both are renormalized first so
/// that `f32` storage error does not show up as a spurious angle; a zero
/// vector is 90 degrees from everything.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (a, b) = (normalize_or_zero(a), normalize_or_zero(b));
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Mean angle in degrees between two normal maps over the masked pixels.
/// Either encoding is accepted.
pub fn angular_mae(pred: &NormalMap, gt: &NormalMap, mask: Option<&[bool]>) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::mismatch(
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let n = pred.height() * pred.width();
    if check_mask(mask, n)? == 0 {
        return Err(Error::Empty("angular_mae mask selects no pixels"));
    }
    let angles: Vec<f64> = (0..n)
        .filter(|&i| selected(mask, i))
        .map(|i| angle_deg(pred.unit_at(i), gt.unit_at(i)))
        .collect();
    Ok(pairwise_sum(&angles) / angles.len() as f64)
}

/// Root mean squared depth difference in millimetres over the masked pixels.
pub fn depth_rmse(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<f64> {
    if pred.pitch() != gt.pitch() {
        return Err(Error::Contract(format!(
            "pixel pitch differs: {} vs {}",
            pred.pitch(),
            gt.pitch()
        )));
    }
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::mismatch(
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let n = pred.height() * pred.width();
    if check_mask(mask, n)? == 0 {
        return Err(Error::Empty("depth_rmse mask selects no pixels"));
    }
    let sq: Vec<f64> = pred
        .depth()
        .data()
        .iter()
        .zip(gt.depth().data())
        .enumerate()
        .filter(|(i, _)| selected(mask, *i))
        .map(|(_, (a, b))| (*a as f64 - *b as f64).powi(2))
        .collect();
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

/// Pixels where the gel is indented.
pub fn contact_mask(gt: &DepthMap) -> Vec<bool> {
    gt.depth().data().iter().map(|&d| d > 0.0).collect()
}

/// Period (in samples) of the strongest sinusoid in `signal`, searched over
/// `[min_period, max_period]`. The signal's mean and linear trend are removed
/// first; the scan uses 1/1000 steps in frequency.
pub fn dominant_period(signal: &[f64], min_period: f64, max_period: f64) -> Result<f64> {
    let n = signal.len();
    if n < 4 {
        return Err(Error::Empty("dominant_period needs at least 4 samples"));
    }
    if !(min_period >= 2.0 && max_period > min_period) {
        return Err(Error::Contract("period range must satisfy 2 <= min < max".into()));
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64 - (n - 1) as f64 / 2.0).collect();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let slope = xs.iter().zip(signal).map(|(x, s)| x * (s - mean)).sum::<f64>() / xs.iter().map(|x| x * x).sum::<f64>();
    let r: Vec<f64> = signal.iter().zip(&xs).map(|(s, x)| s - mean - slope * x).collect();
    let (f_lo, f_hi) = (1.0 / max_period, 1.0 / min_period);
    let steps = 1000;
    let mut best = (f64::NEG_INFINITY, max_period);
    for k in 0..=steps {
        let f = f_lo + (f_hi - f_lo) * k as f64 / steps as f64;
        let w = 2.0 * std::f64::consts::PI * f;
        let (mut c, mut s) = (0.0, 0.0);
        for (i, v) in r.iter().enumerate() {
            c += v * (w * i as f64).cos();
            s += v * (w * i as f64).sin();
        }
        let power = c * c + s * s;
        if power > best.0 {
            best = (power, 1.0 / f);
        }
    }
    Ok(best.1)
}

/// Errors of one estimated image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub name: String,
    pub mae_deg: f64,
    /// `None` when the scene has no contact pixels.
    pub mae_contact_deg: Option<f64>,
    pub depth_rmse_mm: f64,
}

/// One evaluated condition (estimator x modality).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub images: Vec<ImageEval>,
}

impl EvalReport {
    /// Mean full-image MAE over all images.
    pub fn mae_deg(&self) -> f64 {
        mean(self.images.iter().map(|i| i.mae_deg))
    }

    pub fn mae_contact_deg(&self) -> f64 {
        mean(self.images.iter().filter_map(|i| i.mae_contact_deg))
    }

    pub fn depth_rmse_mm(&self) -> f64 {
        mean(self.images.iter().map(|i| i.depth_rmse_mm))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(&v) / v.len() as f64
    }
}

/// `condition,image,mae_deg,mae_contact_deg,depth_rmse_mm`, one row per image
/// plus a `mean` row per condition.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("condition,image,mae_deg,mae_contact_deg,depth_rmse_mm\n");
    for r in reports {
        for i in &r.images {
            let contact = i.mae_contact_deg.map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.4},{},{:.5}", r.label, i.name, i.mae_deg, contact, i.depth_rmse_mm);
        }
        let _ = writeln!(
            s,
            "{},mean,{:.4},{:.4},{:.5}",
            r.label,
            r.mae_deg(),
            r.mae_contact_deg(),
            r.depth_rmse_mm()
        );
    }
    s
}

/// Four-column text table of measured MAE, with the published values in a
/// separate reference row below.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = 15;
    let mut s = String::new();
    let _ = write!(s, "{:<24}", "");
    for r in reports {
        let _ = write!(s, "{:>width$}", r.label);
    }
    s.push('\n');
    type Column = fn(&EvalReport) -> f64;
    let rows: [(&str, Column); 3] = [
        ("MAE (deg), full image", EvalReport::mae_deg),
        ("MAE (deg), contact", EvalReport::mae_contact_deg),
        ("depth RMSE (mm)", EvalReport::depth_rmse_mm),
    ];
    for (name, f) in rows {
        let _ = write!(s, "{name:<24}");
        for r in reports {
            let _ = write!(s, "{:>width$.3}", f(r));
        }
        s.push('\n');
    }
    s.push_str(&"-".repeat(24 + width * reports.len()));
    s.push('\n');
    let _ = write!(s, "{:<24}", "reference (published)");
    for v in REFERENCE_MAE_DEG.iter().take(reports.len()) {
        let _ = write!(s, "{v:>width$.3}");
    }
    s.push('\n');
    s.push_str("reference values come from a physical sensor and are cited, not measured here\n");
    s
}
