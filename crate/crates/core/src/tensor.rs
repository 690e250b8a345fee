//! Image containers shared by every stage of the pipeline.
//!
//! All pixel data is `f32`, row-major and channel-interleaved. Channel order
//! of the 4-channel concatenation is always (R, G, B, NIR).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance on the Euclidean norm of a unit normal.
pub const UNIT_TOLERANCE: f64 = 1e-6;

fn check_finite(data: &[f32], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::mismatch(
                format!("{} values for {height}x{width}", height * width),
                format!("{} values", data.len()),
            ));
        }
        check_finite(&data, "Tensor2D")?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Builds a tensor by evaluating `f(y, x)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Multi-channel image, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3D {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::mismatch(
                format!("{} values for {height}x{width}x{channels}", height * width * channels),
                format!("{} values", data.len()),
            ));
        }
        check_finite(&data, "Tensor3D")?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a tensor pixel by pixel; `f(y, x, out)` fills one pixel's channels.
    pub fn from_pixel_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Result<Self> {
        let mut data = vec![0.0; height * width * channels];
        if channels > 0 {
            for (i, px) in data.chunks_exact_mut(channels).enumerate() {
                f(i / width, i % width, px);
            }
        }
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Extracts one channel as a 2D tensor.
    pub fn channel(&self, c: usize) -> Tensor2D {
        assert!(c < self.channels, "channel {c} out of range");
        Tensor2D {
            height: self.height,
            width: self.width,
            data: self.pixels().map(|p| p[c]).collect(),
        }
    }

    pub(crate) fn same_hw(&self, other: &Tensor3D) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Which input modalities an estimator consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    RgbNir,
}

impl Modality {
    pub fn uses_nir(self) -> bool {
        matches!(self, Modality::RgbNir)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::RgbNir => "rgb+nir",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rgb" => Ok(Modality::Rgb),
            "rgb+nir" | "rgbnir" | "rgb-nir" => Ok(Modality::RgbNir),
            other => Err(format!("unknown modality `{other}` (expected rgb or rgb+nir)")),
        }
    }
}

/// Aligned RGB and NIR images of the gel, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalFrame {
    rgb: Tensor3D,
    nir: Tensor3D,
}

impl MultiModalFrame {
    pub fn new(rgb: Tensor3D, nir: Tensor3D) -> Result<Self> {
        if rgb.channels() != 3 || nir.channels() != 1 {
            return Err(Error::mismatch(
                "3 RGB channels and 1 NIR channel",
                format!("{} and {}", rgb.channels(), nir.channels()),
            ));
        }
        if !rgb.same_hw(&nir) {
            return Err(Error::mismatch(
                format!("NIR {}x{}", rgb.height(), rgb.width()),
                format!("{}x{}", nir.height(), nir.width()),
            ));
        }
        if rgb.data().iter().chain(nir.data()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("frame values must lie in [0, 1]".into()));
        }
        Ok(Self { rgb, nir })
    }

    /// Splits a 4-channel (R, G, B, NIR) tensor.
    pub fn from_rgbn(t: &Tensor3D) -> Result<Self> {
        if t.channels() != 4 {
            return Err(Error::mismatch("4 channels (R,G,B,NIR)", t.channels()));
        }
        let (h, w) = (t.height(), t.width());
        let mut rgb = Vec::with_capacity(h * w * 3);
        let mut nir = Vec::with_capacity(h * w);
        for p in t.pixels() {
            rgb.extend_from_slice(&p[..3]);
            nir.push(p[3]);
        }
        Self::new(Tensor3D::new(h, w, 3, rgb)?, Tensor3D::new(h, w, 1, nir)?)
    }

    /// Interleaves into a single (R, G, B, NIR) tensor.
    pub fn to_rgbn(&self) -> Tensor3D {
        let mut data = Vec::with_capacity(self.num_pixels() * 4);
        for (c, n) in self.rgb.pixels().zip(self.nir.data()) {
            data.extend_from_slice(c);
            data.push(*n);
        }
        Tensor3D {
            height: self.height(),
            width: self.width(),
            channels: 4,
            data,
        }
    }

    pub fn rgb(&self) -> &Tensor3D {
        &self.rgb
    }

    pub fn nir(&self) -> &Tensor3D {
        &self.nir
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn num_pixels(&self) -> usize {
        self.rgb.num_pixels()
    }

    pub fn same_shape(&self, other: &MultiModalFrame) -> bool {
        self.rgb.same_hw(&other.rgb)
    }

    /// The (R, G, B, NIR) values of one pixel; NIR reads as zero in RGB-only mode.
    #[inline]
    pub fn rgbn_at(&self, idx: usize, modality: Modality) -> [f32; 4] {
        let c = &self.rgb.data()[idx * 3..idx * 3 + 3];
        let n = if modality.uses_nir() {
            self.nir.data()[idx]
        } else {
            0.0
        };
        [c[0], c[1], c[2], n]
    }
}

/// How a [`NormalMap`] stores its vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// Unit vectors (or the zero vector for the degenerate case).
    Unit,
    /// `0.5 * n + 0.5`, every component in `[0, 1]`.
    Encoded01,
}

/// Per-pixel surface normals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    normals: Tensor3D,
    encoding: Encoding,
}

impl NormalMap {
    pub fn new(normals: Tensor3D, encoding: Encoding) -> Result<Self> {
        if normals.channels() != 3 {
            return Err(Error::mismatch("3 normal channels", normals.channels()));
        }
        match encoding {
            Encoding::Unit => {
                for (i, p) in normals.pixels().enumerate() {
                    let norm = norm3(p);
                    if norm != 0.0 && (norm - 1.0).abs() > UNIT_TOLERANCE {
                        return Err(Error::Contract(format!(
                            "normal at pixel {i} has norm {norm}, expected 1"
                        )));
                    }
                }
            }
            Encoding::Encoded01 => {
                if normals.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Contract("encoded normals must lie in [0, 1]".into()));
                }
            }
        }
        Ok(Self { normals, encoding })
    }

    /// Builds a unit map from `f64` vectors, normalizing each one.
    pub fn from_unit_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let t = Tensor3D::from_pixel_fn(height, width, 3, |y, x, out| {
            let n = normalize_or_zero(f(y, x));
            out.copy_from_slice(&[n[0] as f32, n[1] as f32, n[2] as f32]);
        })?;
        Self::new(t, Encoding::Unit)
    }

    /// A map of identical flat normals `(0, 0, 1)`.
    pub fn flat(height: usize, width: usize) -> Self {
        let data = [0.0, 0.0, 1.0].repeat(height * width);
        Self {
            normals: Tensor3D {
                height,
                width,
                channels: 3,
                data,
            },
            encoding: Encoding::Unit,
        }
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn tensor(&self) -> &Tensor3D {
        &self.normals
    }

    pub fn height(&self) -> usize {
        self.normals.height()
    }

    pub fn width(&self) -> usize {
        self.normals.width()
    }

    /// Unit vector at pixel `idx` regardless of storage encoding.
    pub fn unit_at(&self, idx: usize) -> [f64; 3] {
        let p = &self.normals.data()[idx * 3..idx * 3 + 3];
        let v = [p[0] as f64, p[1] as f64, p[2] as f64];
        match self.encoding {
            Encoding::Unit => v,
            Encoding::Encoded01 => decode_vec(v),
        }
    }

    pub fn to_unit(&self) -> NormalMap {
        match self.encoding {
            Encoding::Unit => self.clone(),
            Encoding::Encoded01 => decode_normals(self).expect("encoding checked"),
        }
    }

    pub fn to_encoded(&self) -> NormalMap {
        match self.encoding {
            Encoding::Encoded01 => self.clone(),
            Encoding::Unit => encode_normals(self).expect("encoding checked"),
        }
    }
}

#[inline]
pub(crate) fn norm3<T: Copy + Into<f64>>(p: &[T]) -> f64 {
    let (a, b, c) = (p[0].into(), p[1].into(), p[2].into());
    (a * a + b * b + c * c).sqrt()
}

pub(crate) fn normalize_or_zero(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(&v);
    if n < UNIT_TOLERANCE {
        [0.0; 3]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

fn decode_vec(v: [f64; 3]) -> [f64; 3] {
    let d = [2.0 * v[0] - 1.0, 2.0 * v[1] - 1.0, 2.0 * v[2] - 1.0];
    let n = norm3(&d);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        normalize_or_zero(d)
    } else {
        d
    }
}

/// Maps unit normals to `0.5 * n + 0.5`.
pub fn encode_normals(n: &NormalMap) -> Result<NormalMap> {
    if n.encoding != Encoding::Unit {
        return Err(Error::Contract("encode_normals expects unit normals".into()));
    }
    let data = n.normals.data().iter().map(|v| 0.5 * v + 0.5).collect();
    Ok(NormalMap {
        normals: Tensor3D {
            data,
            ..n.normals.clone()
        },
        encoding: Encoding::Encoded01,
    })
}

/// Maps encoded normals back to `2 * n - 1`, renormalizing vectors that drifted
/// off the unit sphere (e.g. after 8-bit quantization).
pub fn decode_normals(n: &NormalMap) -> Result<NormalMap> {
    if n.encoding != Encoding::Encoded01 {
        return Err(Error::Contract("decode_normals expects encoded normals".into()));
    }
    let mut data = Vec::with_capacity(n.normals.data().len());
    for p in n.normals.pixels() {
        let d = decode_vec([p[0] as f64, p[1] as f64, p[2] as f64]);
        data.extend(d.iter().map(|&v| v as f32));
    }
    Ok(NormalMap {
        normals: Tensor3D {
            data,
            ..n.normals.clone()
        },
        encoding: Encoding::Unit,
    })
}

/// Indentation depth of the gel in millimetres (positive into the gel).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    depth: Tensor2D,
    pitch: f32,
}

impl DepthMap {
    pub fn new(depth: Tensor2D, pitch: f32) -> Result<Self> {
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::Contract(format!("pixel pitch must be positive, got {pitch}")));
        }
        Ok(Self { depth, pitch })
    }

    pub fn zeros(height: usize, width: usize, pitch: f32) -> Self {
        Self {
            depth: Tensor2D::zeros(height, width),
            pitch,
        }
    }

    pub fn depth(&self) -> &Tensor2D {
        &self.depth
    }

    /// Millimetres per pixel.
    pub fn pitch(&self) -> f32 {
        self.pitch
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    /// Copy with negative values set to zero.
    pub fn clamped_nonnegative(&self) -> DepthMap {
        DepthMap {
            depth: Tensor2D {
                data: self.depth.data.iter().map(|v| v.max(0.0)).collect(),
                ..self.depth.clone()
            },
            pitch: self.pitch,
        }
    }
}
