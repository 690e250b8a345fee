//! `TSR1` binary tensors and the flat `key=value` text files used for
//! configs and manifests.
//!
//! A `TSR1` file is one ASCII header line
//!
//! ```text
//! TSR1 f32 <ndim> <d0> <d1> [<d2>]\n
//! ```
//!
//! followed by the raw little-endian `f32` payload, row-major and
//! channel-interleaved. `ndim` is 2 or 3.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor2D, Tensor3D};

const MAGIC: &str = "TSR1";
const DTYPE: &str = "f32";
const MAX_HEADER: usize = 128;

/// A tensor of either supported rank, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    D2(Tensor2D),
    D3(Tensor3D),
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Tensor::D2(t) => vec![t.height(), t.width()],
            Tensor::D3(t) => vec![t.height(), t.width(), t.channels()],
        }
    }

    pub fn data(&self) -> &[f32] {
        match self {
            Tensor::D2(t) => t.data(),
            Tensor::D3(t) => t.data(),
        }
    }

    pub fn into_2d(self) -> Result<Tensor2D> {
        match self {
            Tensor::D2(t) => Ok(t),
            Tensor::D3(t) => Err(Error::mismatch(
                "2-dimensional tensor",
                format!("shape {:?}", [t.height(), t.width(), t.channels()]),
            )),
        }
    }

    pub fn into_3d(self) -> Result<Tensor3D> {
        match self {
            Tensor::D3(t) => Ok(t),
            Tensor::D2(t) => Err(Error::mismatch(
                "3-dimensional tensor",
                format!("shape {:?}", [t.height(), t.width()]),
            )),
        }
    }
}

impl From<Tensor2D> for Tensor {
    fn from(t: Tensor2D) -> Self {
        Tensor::D2(t)
    }
}

impl From<Tensor3D> for Tensor {
    fn from(t: Tensor3D) -> Self {
        Tensor::D3(t)
    }
}

/// Anything that can be written as a `TSR1` tensor.
pub trait AsTensor {
    fn shape(&self) -> Vec<usize>;
    fn values(&self) -> &[f32];
}

impl AsTensor for Tensor2D {
    fn shape(&self) -> Vec<usize> {
        vec![self.height(), self.width()]
    }
    fn values(&self) -> &[f32] {
        self.data()
    }
}

impl AsTensor for Tensor3D {
    fn shape(&self) -> Vec<usize> {
        vec![self.height(), self.width(), self.channels()]
    }
    fn values(&self) -> &[f32] {
        self.data()
    }
}

impl AsTensor for Tensor {
    fn shape(&self) -> Vec<usize> {
        Tensor::shape(self)
    }
    fn values(&self) -> &[f32] {
        self.data()
    }
}

/// Serializes a tensor to `TSR1` bytes. Empty tensors are rejected.
pub fn encode_tensor<T: AsTensor + ?Sized>(t: &T) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!("cannot store empty tensor {shape:?}")));
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let header = format!("{MAGIC} {DTYPE} {} {}\n", shape.len(), dims.join(" "));
    let mut out = Vec::with_capacity(header.len() + t.values().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses `TSR1` bytes; `origin` only labels errors.
pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(origin, "missing TSR1 header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format(origin, "header is not ASCII"))?;
    let mut tok = header.split_ascii_whitespace();
    if tok.next() != Some(MAGIC) {
        return Err(Error::format(origin, "bad magic, expected TSR1"));
    }
    match tok.next() {
        Some(DTYPE) => {}
        other => {
            return Err(Error::format(
                origin,
                format!("unsupported dtype {other:?}, expected f32"),
            ))
        }
    }
    let parse = |s: Option<&str>, what: &str| -> Result<usize> {
        s.and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(origin, format!("bad or missing {what} in header")))
    };
    let ndim = parse(tok.next(), "ndim")?;
    if !(2..=3).contains(&ndim) {
        return Err(Error::format(origin, format!("ndim must be 2 or 3, got {ndim}")));
    }
    let dims = (0..ndim)
        .map(|i| parse(tok.next(), &format!("d{i}")))
        .collect::<Result<Vec<_>>>()?;
    if tok.next().is_some() {
        return Err(Error::format(origin, "trailing tokens in header"));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(origin, "shape overflows"))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != count * 4 {
        return Err(Error::mismatch(
            format!("{} payload bytes for shape {dims:?}", count * 4),
            format!("{} bytes", payload.len()),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(match ndim {
        2 => Tensor::D2(Tensor2D::new(dims[0], dims[1], data)?),
        _ => Tensor::D3(Tensor3D::new(dims[0], dims[1], dims[2], data)?),
    })
}

pub fn save_tensor<T: AsTensor + ?Sized>(t: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Flat `key=value` document. Blank lines and `#` comments are skipped;
/// each key remembers its line number for error reporting.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config {
                    line: i + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line: *line,
                msg: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_opt(key)?.ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("missing key `{key}`"),
        })
    }

    /// Comma-separated list of floats.
    pub fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|e| Error::Config {
                line: *line,
                msg: format!("bad list for `{key}`: {e}"),
            })
    }

    /// Rejects any key not in `allowed`.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config {
                    line: *line,
                    msg: format!("unknown key `{k}`"),
                });
            }
        }
        Ok(())
    }
}
