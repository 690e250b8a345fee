use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DepthMap, Tensor2D};

/// Thickness of the gel pad; no press may indent deeper than this.
pub const GEL_THICKNESS_MM: f64 = 1.5;

/// An indenter shape. Positions are in pixels, sizes in millimetres,
/// angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Spherical cap pressed `press_depth` into the gel.
    Sphere {
        radius: f64,
        press_depth: f64,
        center: (f64, f64),
    },
    /// A lying cylinder with rounded ends (hair, wire).
    Cylinder {
        radius: f64,
        press_depth: f64,
        start: (f64, f64),
        end: (f64, f64),
    },
    /// Raised-cosine ridges inside a rectangle (fingerprint). The ridge
    /// profile is faded to zero over one period at the rectangle border.
    RidgeGrating {
        period: f64,
        amplitude: f64,
        orientation: f64,
        region: (f64, f64, f64, f64),
    },
    /// A lying screw: cylinder with a cosine thread along its axis.
    ThreadedCylinder {
        radius: f64,
        press_depth: f64,
        thread_pitch: f64,
        thread_depth: f64,
        center: (f64, f64),
        orientation: f64,
        length: f64,
    },
}

/// Indentation of a cylinder of `radius` pressed `press` deep, at distance `rho` from its axis.
fn cap_profile(radius: f64, press: f64, rho: f64) -> f64 {
    if rho >= radius {
        return 0.0;
    }
    ((radius * radius - rho * rho).sqrt() - (radius - press)).max(0.0)
}

fn raised_cosine_window(edge_dist: f64, taper: f64) -> f64 {
    if edge_dist <= 0.0 {
        0.0
    } else if edge_dist >= taper {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * edge_dist / taper).cos())
    }
}

impl Primitive {
    /// Indentation in mm at pixel coordinates `(x, y)`.
    pub fn depth_at(&self, x: f64, y: f64, pitch: f64) -> f64 {
        match *self {
            Primitive::Sphere {
                radius,
                press_depth,
                center,
            } => {
                let r = (x - center.0).hypot(y - center.1) * pitch;
                cap_profile(radius, press_depth, r)
            }
            Primitive::Cylinder {
                radius,
                press_depth,
                start,
                end,
            } => {
                let rho = segment_distance((x, y), start, end) * pitch;
                cap_profile(radius, press_depth, rho)
            }
            Primitive::RidgeGrating {
                period,
                amplitude,
                orientation,
                region,
            } => {
                let (x0, y0, x1, y1) = region;
                let ex = (x - x0).min(x1 - x) * pitch;
                let ey = (y - y0).min(y1 - y) * pitch;
                let w = raised_cosine_window(ex, period) * raised_cosine_window(ey, period);
                if w == 0.0 {
                    return 0.0;
                }
                let u = (x * orientation.cos() + y * orientation.sin()) * pitch;
                let ridge = 0.5 * (1.0 - (std::f64::consts::TAU * u / period).cos());
                amplitude * ridge * w
            }
            Primitive::ThreadedCylinder {
                radius,
                press_depth,
                thread_pitch,
                thread_depth,
                center,
                orientation,
                length,
            } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let (c, s) = (orientation.cos(), orientation.sin());
                let along = (dx * c + dy * s) * pitch;
                let across = (-dx * s + dy * c) * pitch;
                let half = 0.5 * length * pitch;
                let overshoot = (along.abs() - half).max(0.0);
                let rho = across.hypot(overshoot);
                let base = cap_profile(radius, press_depth, rho);
                if base == 0.0 {
                    return 0.0;
                }
                let groove = 0.5 * (1.0 - (std::f64::consts::TAU * along.clamp(-half, half) / thread_pitch).cos());
                (base - thread_depth * groove).max(0.0)
            }
        }
    }

    /// Axis-aligned pixel bounding box of the contact support `(x0, y0, x1, y1)`.
    fn support(&self, pitch: f64) -> (f64, f64, f64, f64) {
        let contact = |radius: f64, press: f64| {
            let p = press.min(radius);
            (radius * radius - (radius - p) * (radius - p)).sqrt() / pitch
        };
        match *self {
            Primitive::Sphere {
                radius,
                press_depth,
                center,
            } => {
                let a = contact(radius, press_depth);
                (center.0 - a, center.1 - a, center.0 + a, center.1 + a)
            }
            Primitive::Cylinder {
                radius,
                press_depth,
                start,
                end,
            } => {
                let a = contact(radius, press_depth);
                (
                    start.0.min(end.0) - a,
                    start.1.min(end.1) - a,
                    start.0.max(end.0) + a,
                    start.1.max(end.1) + a,
                )
            }
            Primitive::RidgeGrating { region, .. } => region,
            Primitive::ThreadedCylinder {
                radius,
                press_depth,
                center,
                orientation,
                length,
                ..
            } => {
                let a = contact(radius, press_depth);
                let hx = (0.5 * length * orientation.cos()).abs() + a;
                let hy = (0.5 * length * orientation.sin()).abs() + a;
                (center.0 - hx, center.1 - hy, center.0 + hx, center.1 + hy)
            }
        }
    }

    /// Largest indentation the primitive can produce.
    fn peak_depth(&self) -> f64 {
        match *self {
            Primitive::Sphere { press_depth, .. }
            | Primitive::Cylinder { press_depth, .. }
            | Primitive::ThreadedCylinder { press_depth, .. } => press_depth,
            Primitive::RidgeGrating { amplitude, .. } => amplitude,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        let press = |radius: f64, d: f64| {
            if !(d.is_finite() && d >= 0.0) {
                Err(format!("press depth must be >= 0, got {d}"))
            } else if d > radius {
                Err(format!("press depth {d} exceeds radius {radius}"))
            } else {
                Ok(())
            }
        };
        match *self {
            Primitive::Sphere {
                radius, press_depth, ..
            }
            | Primitive::Cylinder {
                radius, press_depth, ..
            } => {
                positive("radius", radius)?;
                press(radius, press_depth)
            }
            Primitive::RidgeGrating {
                period,
                amplitude,
                region,
                ..
            } => {
                positive("period", period)?;
                if !(amplitude.is_finite() && amplitude >= 0.0) {
                    return Err(format!("amplitude must be >= 0, got {amplitude}"));
                }
                if region.2 <= region.0 || region.3 <= region.1 {
                    return Err("grating region is empty".into());
                }
                Ok(())
            }
            Primitive::ThreadedCylinder {
                radius,
                press_depth,
                thread_pitch,
                thread_depth,
                length,
                ..
            } => {
                positive("radius", radius)?;
                positive("thread pitch", thread_pitch)?;
                positive("length", length)?;
                if !(thread_depth.is_finite() && thread_depth >= 0.0) {
                    return Err(format!("thread depth must be >= 0, got {thread_depth}"));
                }
                press(radius, press_depth)
            }
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

/// A set of indenters pressed into the gel at once.
#[derive(Debug, Clone, PartialEq)]
pub struct PressScene {
    pub height: usize,
    pub width: usize,
    /// Millimetres per pixel.
    pub pitch: f64,
    pub primitives: Vec<Primitive>,
    /// Source line of each primitive (0 when built in code).
    lines: Vec<usize>,
}

impl PressScene {
    pub fn new(height: usize, width: usize, pitch: f64) -> Self {
        Self {
            height,
            width,
            pitch,
            primitives: Vec::new(),
            lines: Vec::new(),
        }
    }

    pub fn with(mut self, p: Primitive) -> Self {
        self.push(p, 0);
        self
    }

    fn push(&mut self, p: Primitive, line: usize) {
        self.primitives.push(p);
        self.lines.push(line);
    }

    /// Indentation at fractional pixel coordinates (max over primitives).
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.depth_at(x, y, self.pitch))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 3 || self.width < 3 {
            return Err(Error::InvalidScene {
                line: 0,
                msg: format!("resolution {}x{} too small", self.width, self.height),
            });
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(Error::InvalidScene {
                line: 0,
                msg: format!("pitch must be positive, got {}", self.pitch),
            });
        }
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        for (p, &line) in self.primitives.iter().zip(&self.lines) {
            p.validate().map_err(|msg| Error::InvalidScene { line, msg })?;
            if p.peak_depth() > GEL_THICKNESS_MM {
                return Err(Error::InvalidScene {
                    line,
                    msg: format!(
                        "indentation {} mm exceeds gel thickness {GEL_THICKNESS_MM} mm",
                        p.peak_depth()
                    ),
                });
            }
            let (x0, y0, x1, y1) = p.support(self.pitch);
            if x0 < 0.0 || y0 < 0.0 || x1 > w || y1 > h {
                return Err(Error::InvalidScene {
                    line,
                    msg: format!("contact support ({x0:.1},{y0:.1})-({x1:.1},{y1:.1}) leaves the image"),
                });
            }
        }
        Ok(())
    }

    /// Parses the line-oriented scene format:
    ///
    /// ```text
    /// scene width=160 height=120 pitch=0.1
    /// sphere radius=4 depth=0.8 cx=80 cy=60
    /// cylinder radius=0.3 depth=0.2 x0=20 y0=30 x1=140 y1=90
    /// grating period=0.8 amplitude=0.06 angle=0 x0=40 y0=30 x1=120 y1=90
    /// thread radius=1.5 depth=0.6 pitch=0.6 thread_depth=0.12 cx=80 cy=60 angle=0 length=100
    /// ```
    ///
    /// Angles are in degrees. The `scene` line must come first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut scene: Option<PressScene> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tokens = content.split_whitespace();
            let kind = tokens.next().unwrap_or_default();
            let fields = Fields::parse(tokens, line)?;
            if kind == "scene" {
                if scene.is_some() {
                    return Err(Error::InvalidScene {
                        line,
                        msg: "duplicate scene line".into(),
                    });
                }
                fields.only(&["width", "height", "pitch"])?;
                scene = Some(PressScene::new(
                    fields.get("height")? as usize,
                    fields.get("width")? as usize,
                    fields.get("pitch")?,
                ));
                continue;
            }
            let s = scene.as_mut().ok_or_else(|| Error::InvalidScene {
                line,
                msg: "`scene width=.. height=.. pitch=..` must come first".into(),
            })?;
            let prim = match kind {
                "sphere" => {
                    fields.only(&["radius", "depth", "cx", "cy"])?;
                    Primitive::Sphere {
                        radius: fields.get("radius")?,
                        press_depth: fields.get("depth")?,
                        center: (fields.get("cx")?, fields.get("cy")?),
                    }
                }
                "cylinder" => {
                    fields.only(&["radius", "depth", "x0", "y0", "x1", "y1"])?;
                    Primitive::Cylinder {
                        radius: fields.get("radius")?,
                        press_depth: fields.get("depth")?,
                        start: (fields.get("x0")?, fields.get("y0")?),
                        end: (fields.get("x1")?, fields.get("y1")?),
                    }
                }
                "grating" => {
                    fields.only(&["period", "amplitude", "angle", "x0", "y0", "x1", "y1"])?;
                    Primitive::RidgeGrating {
                        period: fields.get("period")?,
                        amplitude: fields.get("amplitude")?,
                        orientation: fields.get("angle")?.to_radians(),
                        region: (
                            fields.get("x0")?,
                            fields.get("y0")?,
                            fields.get("x1")?,
                            fields.get("y1")?,
                        ),
                    }
                }
                "thread" => {
                    fields.only(&[
                        "radius",
                        "depth",
                        "pitch",
                        "thread_depth",
                        "cx",
                        "cy",
                        "angle",
                        "length",
                    ])?;
                    Primitive::ThreadedCylinder {
                        radius: fields.get("radius")?,
                        press_depth: fields.get("depth")?,
                        thread_pitch: fields.get("pitch")?,
                        thread_depth: fields.get("thread_depth")?,
                        center: (fields.get("cx")?, fields.get("cy")?),
                        orientation: fields.get("angle")?.to_radians(),
                        length: fields.get("length")?,
                    }
                }
                other => {
                    return Err(Error::InvalidScene {
                        line,
                        msg: format!("unknown primitive `{other}`"),
                    })
                }
            };
            s.push(prim, line);
        }
        let scene = scene.ok_or_else(|| Error::InvalidScene {
            line: 0,
            msg: "missing `scene` line".into(),
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes in the format accepted by [`PressScene::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "scene width={} height={} pitch={}\n",
            self.width, self.height, self.pitch
        );
        for p in &self.primitives {
            let _ = match *p {
                Primitive::Sphere {
                    radius,
                    press_depth,
                    center,
                } => writeln!(
                    s,
                    "sphere radius={radius} depth={press_depth} cx={} cy={}",
                    center.0, center.1
                ),
                Primitive::Cylinder {
                    radius,
                    press_depth,
                    start,
                    end,
                } => writeln!(
                    s,
                    "cylinder radius={radius} depth={press_depth} x0={} y0={} x1={} y1={}",
                    start.0, start.1, end.0, end.1
                ),
                Primitive::RidgeGrating {
                    period,
                    amplitude,
                    orientation,
                    region,
                } => writeln!(
                    s,
                    "grating period={period} amplitude={amplitude} angle={} x0={} y0={} x1={} y1={}",
                    orientation.to_degrees(),
                    region.0,
                    region.1,
                    region.2,
                    region.3
                ),
                Primitive::ThreadedCylinder {
                    radius,
                    press_depth,
                    thread_pitch,
                    thread_depth,
                    center,
                    orientation,
                    length,
                } => writeln!(
                    s,
                    "thread radius={radius} depth={press_depth} pitch={thread_pitch} thread_depth={thread_depth} cx={} cy={} angle={} length={length}",
                    center.0,
                    center.1,
                    orientation.to_degrees()
                ),
            };
        }
        s
    }
}

struct Fields {
    line: usize,
    pairs: Vec<(String, f64)>,
}

impl Fields {
    fn parse<'a>(tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::InvalidScene {
                line,
                msg: format!("expected key=value, got `{tok}`"),
            })?;
            let v: f64 = v.parse().map_err(|_| Error::InvalidScene {
                line,
                msg: format!("`{k}` is not a number: `{v}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidScene {
                    line,
                    msg: format!("`{k}` is not finite"),
                });
            }
            pairs.push((k.to_string(), v));
        }
        Ok(Self { line, pairs })
    }

    fn get(&self, key: &str) -> Result<f64> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidScene {
                line: self.line,
                msg: format!("missing `{key}`"),
            })
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.pairs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(Error::InvalidScene {
                line: self.line,
                msg: format!("unknown field `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

/// Rasterizes the scene's indentation at every pixel centre.
pub fn depth_from_scene(scene: &PressScene) -> Result<DepthMap> {
    scene.validate()?;
    let t = Tensor2D::from_fn(scene.height, scene.width, |y, x| {
        scene.depth_at(x as f64, y as f64) as f32
    })?;
    if t.max() as f64 > GEL_THICKNESS_MM {
        return Err(Error::InvalidScene {
            line: 0,
            msg: format!("depth {} mm exceeds gel thickness", t.max()),
        });
    }
    DepthMap::new(t, scene.pitch as f32)
}
