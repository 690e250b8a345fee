use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::KeyValues;
use crate::tensor::{DepthMap, Encoding, MultiModalFrame, NormalMap, Tensor3D};

/// One side light of the RGB ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideLight {
    /// Unit vector pointing from the surface towards the light.
    pub direction: [f64; 3],
    /// How strongly the light couples into the R, G and B channels.
    pub color_mix: [f64; 3],
}

/// Illumination of the gel as seen by both cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct LightingConfig {
    pub rgb_lights: [SideLight; 4],
    /// Direction of the (near-)coaxial NIR ring, close to `(0, 0, 1)`.
    pub nir_direction: [f64; 3],
    pub nir_intensity: f64,
    /// Per-channel floor for (R, G, B, NIR).
    pub ambient: [f64; 4],
    /// Standard deviation of the additive Gaussian sensor noise.
    pub noise_sigma: f64,
}

/// Default side-light colours: red, green, blue and white rows, with mild
/// cross-talk between the colour channels.
pub const DEFAULT_COLORS: [[f64; 3]; 4] = [
    [0.55, 0.06, 0.04],
    [0.05, 0.55, 0.06],
    [0.04, 0.06, 0.55],
    [0.30, 0.30, 0.30],
];

pub const DEFAULT_AZIMUTHS_DEG: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

fn dir_from_angles(azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

impl Default for LightingConfig {
    fn default() -> Self {
        Self::from_angles(DEFAULT_AZIMUTHS_DEG, 30.0, DEFAULT_COLORS)
    }
}

impl LightingConfig {
    pub fn from_angles(azimuths_deg: [f64; 4], elevation_deg: f64, colors: [[f64; 3]; 4]) -> Self {
        let rgb_lights = std::array::from_fn(|i| SideLight {
            direction: dir_from_angles(azimuths_deg[i], elevation_deg),
            color_mix: colors[i],
        });
        Self {
            rgb_lights,
            nir_direction: [0.0, 0.0, 1.0],
            nir_intensity: 0.8,
            ambient: [0.1; 4],
            noise_sigma: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("lighting: {msg}")));
        let unit = |d: &[f64; 3]| (crate::tensor::norm3(d) - 1.0).abs() < 1e-9;
        for (i, l) in self.rgb_lights.iter().enumerate() {
            if !unit(&l.direction) {
                return bad(format!("light {i} direction is not unit length"));
            }
            if l.color_mix.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return bad(format!("light {i} colour mix must be >= 0"));
            }
        }
        if !unit(&self.nir_direction) {
            return bad("NIR direction is not unit length".into());
        }
        if !(self.nir_intensity.is_finite() && self.nir_intensity >= 0.0) {
            return bad("NIR intensity must be >= 0".into());
        }
        if self.ambient.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("ambient must be >= 0".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0".into());
        }
        Ok(())
    }

    /// Reads a `key=value` lighting file. Every key is optional:
    ///
    /// ```text
    /// elevation_deg = 30
    /// azimuths_deg = 0, 90, 180, 270
    /// light0_color = 0.55, 0.06, 0.04     # likewise light1..light3
    /// nir_tilt_deg = 0
    /// nir_intensity = 0.8
    /// ambient = 0.1, 0.1, 0.1, 0.1        # R, G, B, NIR
    /// noise_sigma = 0.01
    /// ```
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(&[
            "elevation_deg",
            "azimuths_deg",
            "light0_color",
            "light1_color",
            "light2_color",
            "light3_color",
            "nir_tilt_deg",
            "nir_intensity",
            "ambient",
            "noise_sigma",
        ])?;
        let fixed = |key: &str, n: usize| -> Result<Option<Vec<f64>>> {
            match kv.floats(key)? {
                Some(v) if v.len() != n => Err(Error::Config {
                    line: 0,
                    msg: format!("`{key}` needs {n} values, got {}", v.len()),
                }),
                other => Ok(other),
            }
        };
        let elevation = kv.parse_opt::<f64>("elevation_deg")?.unwrap_or(30.0);
        let mut azimuths = DEFAULT_AZIMUTHS_DEG;
        if let Some(v) = fixed("azimuths_deg", 4)? {
            azimuths.copy_from_slice(&v);
        }
        let mut colors = DEFAULT_COLORS;
        for (i, c) in colors.iter_mut().enumerate() {
            if let Some(v) = fixed(&format!("light{i}_color"), 3)? {
                c.copy_from_slice(&v);
            }
        }
        let mut cfg = Self::from_angles(azimuths, elevation, colors);
        let tilt = kv.parse_opt::<f64>("nir_tilt_deg")?.unwrap_or(0.0);
        cfg.nir_direction = dir_from_angles(0.0, 90.0 - tilt);
        if let Some(v) = kv.parse_opt("nir_intensity")? {
            cfg.nir_intensity = v;
        }
        if let Some(v) = fixed("ambient", 4)? {
            cfg.ambient.copy_from_slice(&v);
        }
        if let Some(v) = kv.parse_opt("noise_sigma")? {
            cfg.noise_sigma = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    /// Noise-free (R, G, B, NIR) response of a single normal.
    pub fn shade(&self, n: [f64; 3]) -> [f64; 4] {
        let dot = |d: &[f64; 3]| (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]).max(0.0);
        let mut out = [self.ambient[0], self.ambient[1], self.ambient[2], self.ambient[3]];
        for l in &self.rgb_lights {
            let s = dot(&l.direction);
            for c in 0..3 {
                out[c] += l.color_mix[c] * s;
            }
        }
        out[3] += self.nir_intensity * dot(&self.nir_direction);
        out
    }
}

/// Surface normals of a depth map, treating it as a height field:
/// `n = normalize(-dd/dx, -dd/dy, 1)` with central differences in the
/// interior and one-sided differences on the border.
pub fn normals_from_depth(d: &DepthMap) -> Result<NormalMap> {
    let (h, w) = (d.height(), d.width());
    let pitch = d.pitch() as f64;
    let z = |y: usize, x: usize| d.depth().get(y, x) as f64;
    let deriv = |lo: f64, hi: f64, steps: usize| {
        if steps == 0 {
            0.0
        } else {
            (hi - lo) / (steps as f64 * pitch)
        }
    };
    NormalMap::from_unit_fn(h, w, |y, x| {
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let gx = deriv(z(y, xl), z(y, xr), xr - xl);
        let gy = deriv(z(yu, x), z(yd, x), yd - yu);
        [-gx, -gy, 1.0]
    })
}

/// Renders both camera images of a surface with the given normals.
///
/// Each channel is `clip(ambient + sum of clamped Lambert terms + noise, 0, 1)`.
/// Noise is drawn in pixel order, R, G, B, NIR per pixel, from a ChaCha8
/// stream seeded with `seed`.
pub fn render_frame(n: &NormalMap, lighting: &LightingConfig, seed: u64) -> Result<MultiModalFrame> {
    if n.encoding() != Encoding::Unit {
        return Err(Error::Contract("render_frame expects unit normals".into()));
    }
    lighting.validate()?;
    let (h, w) = (n.height(), n.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, lighting.noise_sigma).map_err(|e| Error::Contract(e.to_string()))?;
    let mut rgb = Vec::with_capacity(h * w * 3);
    let mut nir = Vec::with_capacity(h * w);
    for idx in 0..h * w {
        let mut v = lighting.shade(n.unit_at(idx));
        if lighting.noise_sigma > 0.0 {
            for c in &mut v {
                *c += noise.sample(&mut rng);
            }
        }
        let v = v.map(|c| c.clamp(0.0, 1.0) as f32);
        rgb.extend_from_slice(&v[..3]);
        nir.push(v[3]);
    }
    MultiModalFrame::new(Tensor3D::new(h, w, 3, rgb)?, Tensor3D::new(h, w, 1, nir)?)
}

/// The undeformed gel: flat normals, no noise.
pub fn background_frame(lighting: &LightingConfig, height: usize, width: usize) -> Result<MultiModalFrame> {
    let quiet = LightingConfig {
        noise_sigma: 0.0,
        ..lighting.clone()
    };
    render_frame(&NormalMap::flat(height, width), &quiet, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gelsim::scene::{depth_from_scene, PressScene, Primitive};
    use crate::tensor::Tensor2D;

    fn quiet() -> LightingConfig {
        LightingConfig {
            noise_sigma: 0.0,
            ..LightingConfig::default()
        }
    }

    #[test]
    fn flat_depth_gives_flat_normals() {
        let n = normals_from_depth(&DepthMap::zeros(5, 7, 0.1)).unwrap();
        assert_eq!(n, NormalMap::flat(5, 7));
    }

    #[test]
    fn ramp_gives_tilted_normals() {
        let pitch = 0.1f32;
        let d = DepthMap::new(Tensor2D::from_fn(6, 8, |_, x| x as f32 * pitch).unwrap(), pitch).unwrap();
        let n = normals_from_depth(&d).unwrap();
        let s = std::f32::consts::FRAC_1_SQRT_2;
        for p in n.tensor().pixels() {
            assert!((p[0] + s).abs() < 1e-5 && p[1].abs() < 1e-6 && (p[2] - s).abs() < 1e-5);
        }
    }

    #[test]
    fn sphere_normals_match_analytic() {
        let (radius, press, c) = (5.0, 0.5, (80.0, 60.0));
        let pitch = 0.05;
        let scene = PressScene::new(121, 161, pitch).with(Primitive::Sphere {
            radius,
            press_depth: press,
            center: c,
        });
        let n = normals_from_depth(&depth_from_scene(&scene).unwrap()).unwrap();
        let contact = (radius * radius - (radius - press) * (radius - press)).sqrt() / pitch;
        let mut worst: f64 = 0.0;
        for y in 0..121 {
            for x in 0..161 {
                let (dx, dy) = ((x as f64 - c.0) * pitch, (y as f64 - c.1) * pitch);
                // keep the central-difference stencil inside the cap
                if (dx.hypot(dy) / pitch) > contact - 1.5 {
                    continue;
                }
                // height field d = sqrt(R^2 - r^2) - const, normal (x, y, sqrt(R^2 - r^2)) / R
                let analytic = [dx / radius, dy / radius, (radius * radius - dx * dx - dy * dy).sqrt() / radius];
                let got = n.unit_at(y * 161 + x);
                let dot: f64 = (0..3).map(|i| got[i] * analytic[i]).sum();
                worst = worst.max(dot.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        assert!(worst < 1.0, "max angular error {worst} deg");
    }

    #[test]
    fn coaxial_nir_on_flat_normal() {
        let cfg = quiet();
        let f = render_frame(&NormalMap::flat(1, 1), &cfg, 0).unwrap();
        assert!((f.nir().data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_light_contributes_nothing() {
        let mut cfg = quiet();
        cfg.ambient = [0.0; 4];
        for (i, l) in cfg.rgb_lights.iter_mut().enumerate() {
            l.color_mix = if i == 0 { [1.0, 0.0, 0.0] } else { [0.0; 3] };
        }
        // light 0 at azimuth 0: (cos30, 0, sin30); this normal is orthogonal to it
        let d = cfg.rgb_lights[0].direction;
        let n = NormalMap::from_unit_fn(1, 1, |_, _| [-d[2], 0.0, d[0]]).unwrap();
        let f = render_frame(&n, &cfg, 0).unwrap();
        assert!(f.rgb().data()[0].abs() < 1e-7);
    }

    #[test]
    fn background_is_constant_and_deterministic() {
        let cfg = LightingConfig::default();
        let b = background_frame(&cfg, 6, 9).unwrap();
        let first = b.to_rgbn().pixel(0, 0).to_vec();
        assert!(b.to_rgbn().pixels().all(|p| p == first.as_slice()));
        assert!((first[3] - 0.9).abs() < 1e-6);
        assert_eq!(b, background_frame(&cfg, 6, 9).unwrap());
    }

    #[test]
    fn render_is_seed_deterministic() {
        let n = NormalMap::flat(8, 8);
        let cfg = LightingConfig::default();
        assert_eq!(render_frame(&n, &cfg, 3).unwrap(), render_frame(&n, &cfg, 3).unwrap());
        assert_ne!(render_frame(&n, &cfg, 3).unwrap(), render_frame(&n, &cfg, 4).unwrap());
    }

    #[test]
    fn rejects_encoded_normals() {
        let n = NormalMap::flat(2, 2).to_encoded();
        assert!(matches!(
            render_frame(&n, &LightingConfig::default(), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nir_is_darker_on_steep_slopes() {
        let scene = PressScene::new(120, 160, 0.1).with(Primitive::Sphere {
            radius: 3.0,
            press_depth: 1.0,
            center: (80.0, 60.0),
        });
        let d = depth_from_scene(&scene).unwrap();
        let n = normals_from_depth(&d).unwrap();
        let f = render_frame(&n, &LightingConfig::default(), 11).unwrap();
        let (mut steep, mut flat) = (Vec::new(), Vec::new());
        for idx in 0..120 * 160 {
            let nz = n.unit_at(idx)[2];
            let nir = f.nir().data()[idx] as f64;
            if nz < 30f64.to_radians().cos() {
                steep.push(nir);
            } else if d.depth().data()[idx] == 0.0 {
                flat.push(nir);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!steep.is_empty());
        assert!(mean(&steep) < mean(&flat));
    }

    #[test]
    fn side_lights_respond_monotonically_to_ramp_slope() {
        let cfg = quiet();
        // slope along +x only affects the lights at azimuth 0 and 180
        let mut last: Option<[f64; 4]> = None;
        for k in 0..10 {
            let slope = -0.5 + 0.1 * k as f64;
            let v = cfg.shade(crate::tensor::normalize_or_zero([-slope, 0.0, 1.0]));
            if let Some(prev) = last {
                // red light sits at +x: a surface rising towards +x faces away from it
                assert!(v[0] < prev[0], "red should fall as slope grows");
                assert!(v[2] > prev[2], "blue should rise as slope grows");
            }
            last = Some(v);
        }
    }

    #[test]
    fn lighting_file() {
        let kv = KeyValues::parse("elevation_deg=45\nnoise_sigma=0\nambient=0,0,0,0.2\n").unwrap();
        let cfg = LightingConfig::from_kv(&kv).unwrap();
        assert!((cfg.rgb_lights[0].direction[2] - 45f64.to_radians().sin()).abs() < 1e-12);
        assert_eq!(cfg.ambient[3], 0.2);
        let kv = KeyValues::parse("ambient=0,0\n").unwrap();
        assert!(LightingConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("glow=1\n").unwrap();
        assert!(LightingConfig::from_kv(&kv).is_err());
    }
}
