//! Lossy PNG exports for eyeballing results. Nothing reads these back.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DepthMap, MultiModalFrame, NormalMap, Tensor3D};

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG of a 1- or 3-channel tensor with values in `[0, 1]`.
pub fn save_png8(t: &Tensor3D, path: impl AsRef<Path>) -> Result<()> {
    let color = match t.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::mismatch("1 or 3 channels", c)),
    };
    let bytes: Vec<u8> = t.data().iter().map(|&v| to_u8(v)).collect();
    write_png(path.as_ref(), t.width(), t.height(), color, png::BitDepth::Eight, &bytes)
}

/// Writes `<stem>_rgb.png` and `<stem>_nir.png` next to each other.
pub fn save_frame_png(frame: &MultiModalFrame, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    save_png8(frame.rgb(), dir.join(format!("{stem}_rgb.png")))?;
    save_png8(frame.nir(), dir.join(format!("{stem}_nir.png")))
}

/// Normal map rendered in the usual `0.5 n + 0.5` colours.
pub fn save_normals_png(n: &NormalMap, path: impl AsRef<Path>) -> Result<()> {
    save_png8(n.to_encoded().tensor(), path)
}

/// 16-bit grayscale depth, linearly stretched from the map's minimum to maximum.
pub fn save_depth_png(d: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let data = d.depth().data();
    let lo = data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = Vec::with_capacity(data.len() * 2);
    for &v in data {
        let q = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    write_png(
        path.as_ref(),
        d.width(),
        d.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}
