//! Colour look-up-table baseline.
//!
//! Each pixel's background-subtracted intensities are shifted into `[0, 1]`
//! and quantized into `bins` levels per channel. A bin stores the mean
//! surface gradient of the calibration pixels that fell into it. Lookups of
//! unseen colours fall back to the nearest occupied bin.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor, KeyValues};
use crate::tensor::{Encoding, Modality, MultiModalFrame, NormalMap, Tensor2D};

pub const DEFAULT_BINS: usize = 32;
/// Calibration pixels whose normal has `nz` at or below this are skipped.
pub const MIN_NZ: f64 = 0.05;

type Key = [u16; 4];

/// One calibration image for the table.
#[derive(Debug, Clone, Copy)]
pub struct LutSample<'a> {
    pub frame: &'a MultiModalFrame,
    pub background: &'a MultiModalFrame,
    /// Ground-truth unit normals.
    pub normals: &'a NormalMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutBin {
    pub gx: f64,
    pub gy: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    bins: usize,
    modality: Modality,
    table: BTreeMap<Key, LutBin>,
}

impl LutTable {
    pub fn bins_per_channel(&self) -> usize {
        self.bins
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// 3 without NIR, 4 with.
    pub fn channels(&self) -> usize {
        if self.modality.uses_nir() {
            4
        } else {
            3
        }
    }

    pub fn occupied(&self) -> usize {
        self.table.len()
    }

    pub fn bin(&self, key: &[u16]) -> Option<&LutBin> {
        let mut k = [0u16; 4];
        k[..key.len()].copy_from_slice(key);
        self.table.get(&k)
    }

    fn key(&self, frame: &MultiModalFrame, background: &MultiModalFrame, idx: usize) -> Key {
        let f = frame.rgbn_at(idx, self.modality);
        let b = background.rgbn_at(idx, self.modality);
        let mut key = [0u16; 4];
        for c in 0..self.channels() {
            let shifted = 0.5 * ((f[c] - b[c]) as f64 + 1.0);
            key[c] = ((shifted * self.bins as f64).floor() as i64).clamp(0, self.bins as i64 - 1) as u16;
        }
        key
    }

    /// Occupied bin nearest to `key` in bin-index space; ties go to the
    /// smallest key.
    fn nearest(&self, key: &Key) -> (f64, f64) {
        let mut best = (u64::MAX, (0.0, 0.0));
        for (k, b) in &self.table {
            let d2: u64 = (0..4)
                .map(|c| {
                    let d = k[c] as i64 - key[c] as i64;
                    (d * d) as u64
                })
                .sum();
            if d2 < best.0 {
                best = (d2, (b.gx, b.gy));
                if d2 == 0 {
                    break;
                }
            }
        }
        best.1
    }

    /// Writes `keys.tsr` (N x channels bin indices), `values.tsr` (N x 2 mean
    /// gradients), `counts.tsr` (N x 1) and `manifest.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.table.len();
        if n == 0 {
            return Err(Error::Empty("look-up table"));
        }
        let ch = self.channels();
        let mut keys = Vec::with_capacity(n * ch);
        let mut values = Vec::with_capacity(n * 2);
        let mut counts = Vec::with_capacity(n);
        for (k, b) in &self.table {
            keys.extend(k[..ch].iter().map(|&v| v as f32));
            values.extend([b.gx as f32, b.gy as f32]);
            counts.push(b.count as f32);
        }
        save_tensor(&Tensor2D::new(n, ch, keys)?, dir.join("keys.tsr"))?;
        save_tensor(&Tensor2D::new(n, 2, values)?, dir.join("values.tsr"))?;
        save_tensor(&Tensor2D::new(n, 1, counts)?, dir.join("counts.tsr"))?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "format = lut-v1");
        let _ = writeln!(manifest, "modality = {}", self.modality);
        let _ = writeln!(manifest, "bins_per_channel = {}", self.bins);
        let _ = writeln!(manifest, "entries = {n}");
        let _ = writeln!(manifest, "background_subtracted = true");
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join("manifest.txt");
        let kv = KeyValues::load(&manifest)?;
        if kv.get("format") != Some("lut-v1") {
            return Err(Error::format(&manifest, "not a lut-v1 manifest"));
        }
        let modality: Modality = kv.require("modality")?;
        let bins: usize = kv.require("bins_per_channel")?;
        let n: usize = kv.require("entries")?;
        let ch = if modality.uses_nir() { 4 } else { 3 };
        let keys = load_tensor(dir.join("keys.tsr"))?.into_2d()?;
        let values = load_tensor(dir.join("values.tsr"))?.into_2d()?;
        let counts = load_tensor(dir.join("counts.tsr"))?.into_2d()?;
        for (t, cols, name) in [(&keys, ch, "keys"), (&values, 2, "values"), (&counts, 1, "counts")] {
            if (t.height(), t.width()) != (n, cols) {
                return Err(Error::mismatch(
                    format!("{name} {n}x{cols}"),
                    format!("{}x{}", t.height(), t.width()),
                ));
            }
        }
        let mut table = BTreeMap::new();
        for i in 0..n {
            let mut k = [0u16; 4];
            for c in 0..ch {
                let v = keys.get(i, c);
                if v < 0.0 || v >= bins as f32 || v.fract() != 0.0 {
                    return Err(Error::format(dir.join("keys.tsr"), format!("bad bin index {v}")));
                }
                k[c] = v as u16;
            }
            table.insert(
                k,
                LutBin {
                    gx: values.get(i, 0) as f64,
                    gy: values.get(i, 1) as f64,
                    count: counts.get(i, 0) as u64,
                },
            );
        }
        Ok(Self {
            bins,
            modality,
            table,
        })
    }
}

/// Builds the table from calibration presses; accumulation runs in pixel
/// order over the samples so the result is deterministic.
pub fn build_lut(samples: &[LutSample<'_>], modality: Modality, bins: usize) -> Result<LutTable> {
    if samples.is_empty() {
        return Err(Error::Empty("LUT calibration samples"));
    }
    if !(1..=u16::MAX as usize).contains(&bins) {
        return Err(Error::Contract(format!("bins per channel must be in 1..=65535, got {bins}")));
    }
    let mut lut = LutTable {
        bins,
        modality,
        table: BTreeMap::new(),
    };
    let mut acc: BTreeMap<Key, (f64, f64, u64)> = BTreeMap::new();
    for s in samples {
        if s.normals.encoding() != Encoding::Unit {
            return Err(Error::Contract("LUT ground truth must be unit normals".into()));
        }
        if !s.frame.same_shape(s.background)
            || s.normals.height() != s.frame.height()
            || s.normals.width() != s.frame.width()
        {
            return Err(Error::mismatch("frame, background and normals of equal size", "differing sizes"));
        }
        for idx in 0..s.frame.num_pixels() {
            let n = s.normals.unit_at(idx);
            if n[2] <= MIN_NZ {
                continue;
            }
            let key = lut.key(s.frame, s.background, idx);
            let e = acc.entry(key).or_insert((0.0, 0.0, 0));
            e.0 += -n[0] / n[2];
            e.1 += -n[1] / n[2];
            e.2 += 1;
        }
    }
    lut.table = acc
        .into_iter()
        .map(|(k, (sx, sy, c))| {
            (
                k,
                LutBin {
                    gx: sx / c as f64,
                    gy: sy / c as f64,
                    count: c,
                },
            )
        })
        .collect();
    Ok(lut)
}

/// Estimates encoded normals by table lookup.
pub fn lut_lookup(table: &LutTable, frame: &MultiModalFrame, background: &MultiModalFrame) -> Result<NormalMap> {
    if table.table.is_empty() {
        return Err(Error::Empty("look-up table"));
    }
    if !frame.same_shape(background) {
        return Err(Error::mismatch("frame and background of equal size", "differing sizes"));
    }
    let keys: Vec<Key> = (0..frame.num_pixels()).map(|i| table.key(frame, background, i)).collect();
    let mut misses: Vec<Key> = keys.iter().filter(|k| !table.table.contains_key(*k)).copied().collect();
    misses.sort_unstable();
    misses.dedup();
    let resolved: HashMap<Key, (f64, f64)> = misses
        .par_iter()
        .map(|k| (*k, table.nearest(k)))
        .collect();
    NormalMap::from_unit_fn(frame.height(), frame.width(), |y, x| {
        let k = &keys[y * frame.width() + x];
        let (gx, gy) = match table.table.get(k) {
            Some(b) => (b.gx, b.gy),
            None => resolved[k],
        };
        [-gx, -gy, 1.0]
    })
    .map(|n| n.to_encoded())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3D;

    fn frame(pixels: &[[f32; 4]]) -> MultiModalFrame {
        let t = Tensor3D::new(1, pixels.len(), 4, pixels.concat()).unwrap();
        MultiModalFrame::from_rgbn(&t).unwrap()
    }

    fn normals(v: &[[f64; 3]]) -> NormalMap {
        NormalMap::from_unit_fn(1, v.len(), |_, x| v[x]).unwrap()
    }

    #[test]
    fn flat_pixel_maps_to_zero_gradient() {
        let f = frame(&[[0.5, 0.5, 0.5, 0.9]]);
        let n = normals(&[[0.0, 0.0, 1.0]]);
        let lut = build_lut(
            &[LutSample {
                frame: &f,
                background: &f,
                normals: &n,
            }],
            Modality::Rgb,
            32,
        )
        .unwrap();
        assert_eq!(lut.occupied(), 1);
        // zero difference lands in the middle bin
        let b = lut.bin(&[16, 16, 16]).unwrap();
        assert_eq!((b.gx, b.gy, b.count), (0.0, 0.0, 1));
    }

    #[test]
    fn bin_stores_mean_gradient() {
        let f = frame(&[[0.6, 0.5, 0.5, 0.9], [0.6, 0.5, 0.5, 0.9]]);
        let bg = frame(&[[0.5, 0.5, 0.5, 0.9], [0.5, 0.5, 0.5, 0.9]]);
        // gradients (1, 0) and (0, 1)
        let n = normals(&[[-1.0, 0.0, 1.0], [0.0, -1.0, 1.0]]);
        let lut = build_lut(
            &[LutSample {
                frame: &f,
                background: &bg,
                normals: &n,
            }],
            Modality::Rgb,
            32,
        )
        .unwrap();
        assert_eq!(lut.occupied(), 1);
        let b = lut.table.values().next().unwrap();
        assert!((b.gx - 0.5).abs() < 1e-6 && (b.gy - 0.5).abs() < 1e-6);
        assert_eq!(b.count, 2);
    }

    #[test]
    fn steep_pixels_are_skipped() {
        let f = frame(&[[0.6, 0.5, 0.5, 0.9]]);
        let n = normals(&[[1.0, 0.0, 0.04]]);
        let lut = build_lut(
            &[LutSample {
                frame: &f,
                background: &f,
                normals: &n,
            }],
            Modality::Rgb,
            32,
        )
        .unwrap();
        assert_eq!(lut.occupied(), 0);
        assert!(matches!(lut_lookup(&lut, &f, &f), Err(Error::Empty(_))));
    }

    #[test]
    fn lookup_reproduces_training_pixel() {
        let f = frame(&[[0.7, 0.4, 0.5, 0.6]]);
        let bg = frame(&[[0.5, 0.5, 0.5, 0.9]]);
        let n = normals(&[[-0.3, 0.2, 0.9]]);
        let lut = build_lut(
            &[LutSample {
                frame: &f,
                background: &bg,
                normals: &n,
            }],
            Modality::RgbNir,
            32,
        )
        .unwrap();
        let out = lut_lookup(&lut, &f, &bg).unwrap().to_unit();
        let expect = n.unit_at(0);
        let got = out.unit_at(0);
        for c in 0..3 {
            assert!((got[c] - expect[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn unseen_key_falls_back_to_nearest_bin() {
        // red differences 0.0 and 0.5 occupy bins 16 and 24 (of 32)
        let f = frame(&[[0.5, 0.5, 0.5, 0.0], [1.0, 0.5, 0.5, 0.0]]);
        let bg = frame(&[[0.5, 0.5, 0.5, 0.0], [0.5, 0.5, 0.5, 0.0]]);
        let n = normals(&[[0.0, 0.0, 1.0], [-0.5, 0.0, 1.0]]);
        let lut = build_lut(
            &[LutSample {
                frame: &f,
                background: &bg,
                normals: &n,
            }],
            Modality::Rgb,
            32,
        )
        .unwrap();
        // brute-force oracle over the two occupied bins
        let occupied = [(16i64, 0.0), (24i64, 0.5)];
        for red_bin in 0..32i64 {
            // split the difference across frame and background to stay in [0, 1]
            let delta = (red_bin as f32 + 0.5) / 32.0 * 2.0 - 1.0;
            let probe = frame(&[[0.5 + 0.5 * delta, 0.5, 0.5, 0.0]]);
            let probe_bg = frame(&[[0.5 - 0.5 * delta, 0.5, 0.5, 0.0]]);
            let expected = occupied
                .iter()
                .min_by_key(|(b, _)| ((b - red_bin).abs(), *b))
                .unwrap()
                .1;
            let got = lut_lookup(&lut, &probe, &probe_bg).unwrap().to_unit().unit_at(0);
            let gx = -got[0] / got[2];
            assert!((gx - expected).abs() < 1e-6, "bin {red_bin}: {gx} vs {expected}");
        }
    }

    #[test]
    fn background_only_build_gives_flat_normals() {
        let bg = frame(&[[0.5, 0.4, 0.3, 0.9]; 4]);
        let n = normals(&[[0.0, 0.0, 1.0]; 4]);
        let lut = build_lut(
            &[LutSample {
                frame: &bg,
                background: &bg,
                normals: &n,
            }],
            Modality::RgbNir,
            DEFAULT_BINS,
        )
        .unwrap();
        let out = lut_lookup(&lut, &bg, &bg).unwrap().to_unit();
        for i in 0..4 {
            assert_eq!(out.unit_at(i), [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let f = frame(&[[0.7, 0.4, 0.5, 0.6], [0.2, 0.4, 0.9, 0.6]]);
        let bg = frame(&[[0.5, 0.5, 0.5, 0.9]; 2]);
        let n = normals(&[[-0.25, 0.5, 0.75], [0.5, -0.25, 1.0]]);
        let lut = build_lut(
            &[LutSample {
                frame: &f,
                background: &bg,
                normals: &n,
            }],
            Modality::RgbNir,
            16,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        lut.save(dir.path()).unwrap();
        let back = LutTable::load(dir.path()).unwrap();
        assert_eq!(back.bins_per_channel(), 16);
        assert_eq!(back.modality(), Modality::RgbNir);
        assert_eq!(back.occupied(), 2);
        assert_eq!(lut_lookup(&back, &f, &bg).unwrap(), lut_lookup(&lut, &f, &bg).unwrap());
    }
}
