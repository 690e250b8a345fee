//! The per-pixel perceptron: 8 → 128 → 64 → 3, ReLU between hidden layers,
//! then tanh and sphere normalization.
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64`.

use rand::Rng;

use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 8;
pub const HIDDEN1: usize = 128;
pub const HIDDEN2: usize = 64;
pub const OUTPUT_CHANNELS: usize = 3;
/// Guard in the sphere normalization denominator.
pub const SPHERE_EPS: f64 = 1e-12;

/// Shapes `(outputs, inputs)` of the three affine layers.
pub const LAYER_SHAPES: [(usize, usize); 3] = [
    (HIDDEN1, INPUT_CHANNELS),
    (HIDDEN2, HIDDEN1),
    (OUTPUT_CHANNELS, HIDDEN2),
];

/// One buffer per parameter tensor, in the order
/// `w1, b1, w2, b2, w3, b3`. Weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub w3: Vec<T>,
    pub b3: Vec<T>,
}

pub type MlpWeights = Params<f32>;
pub type Gradients = Params<f64>;

/// Names used for parameter tensors in weight manifests.
pub const PARAM_NAMES: [&str; 6] = [
    "layer1.weight",
    "layer1.bias",
    "layer2.weight",
    "layer2.bias",
    "layer3.weight",
    "layer3.bias",
];

/// `(rows, cols)` of each parameter tensor; biases are single rows.
pub fn param_shapes() -> [(usize, usize); 6] {
    let [(o1, i1), (o2, i2), (o3, i3)] = LAYER_SHAPES;
    [(o1, i1), (1, o1), (o2, i2), (1, o2), (o3, i3), (1, o3)]
}

impl<T: Copy + Default> Params<T> {
    pub fn zeros() -> Self {
        let [(o1, i1), (o2, i2), (o3, i3)] = LAYER_SHAPES;
        Self {
            w1: vec![T::default(); o1 * i1],
            b1: vec![T::default(); o1],
            w2: vec![T::default(); o2 * i2],
            b2: vec![T::default(); o2],
            w3: vec![T::default(); o3 * i3],
            b3: vec![T::default(); o3],
        }
    }
}

impl<T> Params<T> {
    pub fn slices(&self) -> [&[T]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Builds from six buffers, checking every length.
    pub fn from_slices(parts: [Vec<T>; 6]) -> Result<Self> {
        for (i, (p, (r, c))) in parts.iter().zip(param_shapes()).enumerate() {
            if p.len() != r * c {
                return Err(Error::mismatch(
                    format!("{} with {} values", PARAM_NAMES[i], r * c),
                    p.len(),
                ));
            }
        }
        let [w1, b1, w2, b2, w3, b3] = parts;
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        })
    }
}

impl MlpWeights {
    /// Uniform in `±sqrt(1 / fan_in)` for weights and biases alike.
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let mut w = Self::zeros();
        let fans = [INPUT_CHANNELS, INPUT_CHANNELS, HIDDEN1, HIDDEN1, HIDDEN2, HIDDEN2];
        for (buf, fan_in) in w.slices_mut().into_iter().zip(fans) {
            let bound = (1.0 / fan_in as f64).sqrt() as f32;
            for v in buf.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        w
    }

    pub fn to_f64(&self) -> Params<f64> {
        let conv = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        Params {
            w1: conv(&self.w1),
            b1: conv(&self.b1),
            w2: conv(&self.w2),
            b2: conv(&self.b2),
            w3: conv(&self.w3),
            b3: conv(&self.b3),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// `n = tanh(x) / max(|tanh(x)|, eps)`; returns the zero vector when
/// `|tanh(x)| <= eps`.
pub fn sphere_normalize(x: [f64; 3]) -> [f64; 3] {
    let t = x.map(f64::tanh);
    let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    if norm <= SPHERE_EPS {
        [0.0; 3]
    } else {
        t.map(|v| v / norm)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums so the reduction vectorizes
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Intermediate activations of one pixel, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub z1: [f64; HIDDEN1],
    pub h1: [f64; HIDDEN1],
    pub z2: [f64; HIDDEN2],
    pub h2: [f64; HIDDEN2],
    /// Output of the last affine layer.
    pub z3: [f64; OUTPUT_CHANNELS],
    /// `tanh` of the (optionally rectified) last layer output.
    pub t: [f64; OUTPUT_CHANNELS],
    pub t_norm: f64,
    /// Unit normal (or zero in the degenerate case).
    pub n: [f64; OUTPUT_CHANNELS],
}

impl Default for Activations {
    fn default() -> Self {
        Self {
            z1: [0.0; HIDDEN1],
            h1: [0.0; HIDDEN1],
            z2: [0.0; HIDDEN2],
            h2: [0.0; HIDDEN2],
            z3: [0.0; OUTPUT_CHANNELS],
            t: [0.0; OUTPUT_CHANNELS],
            t_norm: 0.0,
            n: [0.0; OUTPUT_CHANNELS],
        }
    }
}

impl Activations {
    /// Encoded output `0.5 n + 0.5`.
    pub fn encoded(&self) -> [f64; 3] {
        self.n.map(|v| 0.5 * v + 0.5)
    }
}

/// Forward pass of one pixel with `f64` parameters.
pub fn forward_pixel(p: &Params<f64>, input: &[f64; INPUT_CHANNELS], relu_before_tanh: bool, a: &mut Activations) {
    for j in 0..HIDDEN1 {
        let z = p.b1[j] + dot(&p.w1[j * INPUT_CHANNELS..(j + 1) * INPUT_CHANNELS], input);
        a.z1[j] = z;
        a.h1[j] = z.max(0.0);
    }
    for j in 0..HIDDEN2 {
        let z = p.b2[j] + dot(&p.w2[j * HIDDEN1..(j + 1) * HIDDEN1], &a.h1);
        a.z2[j] = z;
        a.h2[j] = z.max(0.0);
    }
    for j in 0..OUTPUT_CHANNELS {
        a.z3[j] = p.b3[j] + dot(&p.w3[j * HIDDEN2..(j + 1) * HIDDEN2], &a.h2);
    }
    let x = if relu_before_tanh {
        a.z3.map(|v| v.max(0.0))
    } else {
        a.z3
    };
    a.t = x.map(f64::tanh);
    a.t_norm = (a.t[0] * a.t[0] + a.t[1] * a.t[1] + a.t[2] * a.t[2]).sqrt();
    a.n = if a.t_norm <= SPHERE_EPS {
        [0.0; 3]
    } else {
        a.t.map(|v| v / a.t_norm)
    };
}

/// Scratch space for [`backward_pixel`].
#[derive(Debug, Clone)]
pub struct BackwardScratch {
    dh1: [f64; HIDDEN1],
    dz2: [f64; HIDDEN2],
}

impl Default for BackwardScratch {
    fn default() -> Self {
        Self {
            dh1: [0.0; HIDDEN1],
            dz2: [0.0; HIDDEN2],
        }
    }
}

/// Accumulates into `g` the gradient of a loss whose derivative with respect
/// to the *encoded* output `0.5 n + 0.5` is `d_out`.
///
/// ReLU kinks take subgradient 0; the degenerate branch of the sphere
/// normalization is treated as constant.
pub fn backward_pixel(
    p: &Params<f64>,
    input: &[f64; INPUT_CHANNELS],
    a: &Activations,
    d_out: [f64; 3],
    relu_before_tanh: bool,
    g: &mut Gradients,
    scratch: &mut BackwardScratch,
) {
    if a.t_norm <= SPHERE_EPS {
        return;
    }
    let dn = d_out.map(|v| 0.5 * v);
    let n_dot_dn = a.n[0] * dn[0] + a.n[1] * dn[1] + a.n[2] * dn[2];
    let mut dz3 = [0.0; 3];
    for c in 0..3 {
        let dt = (dn[c] - a.n[c] * n_dot_dn) / a.t_norm;
        let dx = dt * (1.0 - a.t[c] * a.t[c]);
        dz3[c] = if relu_before_tanh && a.z3[c] <= 0.0 { 0.0 } else { dx };
    }

    // layer 3
    let dz2 = &mut scratch.dz2;
    dz2.fill(0.0);
    for (c, &d) in dz3.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        g.b3[c] += d;
        axpy(d, &a.h2, &mut g.w3[c * HIDDEN2..(c + 1) * HIDDEN2]);
        axpy(d, &p.w3[c * HIDDEN2..(c + 1) * HIDDEN2], dz2);
    }
    for j in 0..HIDDEN2 {
        if a.z2[j] <= 0.0 {
            dz2[j] = 0.0;
        }
    }

    // layer 2
    let dh1 = &mut scratch.dh1;
    dh1.fill(0.0);
    for j in 0..HIDDEN2 {
        let d = dz2[j];
        if d == 0.0 {
            continue;
        }
        g.b2[j] += d;
        axpy(d, &a.h1, &mut g.w2[j * HIDDEN1..(j + 1) * HIDDEN1]);
        axpy(d, &p.w2[j * HIDDEN1..(j + 1) * HIDDEN1], dh1);
    }

    // layer 1
    for j in 0..HIDDEN1 {
        if a.z1[j] <= 0.0 {
            continue;
        }
        let d = dh1[j];
        g.b1[j] += d;
        axpy(d, input, &mut g.w1[j * INPUT_CHANNELS..(j + 1) * INPUT_CHANNELS]);
    }
}

/// Mean absolute error over the three encoded channels of `batch` pixels and
/// its gradient with respect to every parameter.
pub fn batch_l1_and_grad(
    p: &Params<f64>,
    inputs: &[[f64; INPUT_CHANNELS]],
    targets: &[[f64; 3]],
    relu_before_tanh: bool,
) -> (f64, Gradients) {
    assert_eq!(inputs.len(), targets.len());
    assert!(!inputs.is_empty(), "empty batch");
    let mut g = Gradients::zeros();
    let mut a = Activations::default();
    let mut scratch = BackwardScratch::default();
    let scale = 1.0 / (3 * inputs.len()) as f64;
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        forward_pixel(p, x, relu_before_tanh, &mut a);
        let out = a.encoded();
        let mut d_out = [0.0; 3];
        for c in 0..3 {
            let r = out[c] - t[c];
            loss += r.abs();
            d_out[c] = scale * sign(r);
        }
        backward_pixel(p, x, &a, d_out, relu_before_tanh, &mut g, &mut scratch);
    }
    (loss * scale, g)
}

#[inline]
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_normalize_examples() {
        assert_eq!(sphere_normalize([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let n = sphere_normalize([0.0, 0.0, 10.0]);
        assert_eq!(n, [0.0, 0.0, 1.0]);
        let n = sphere_normalize([1.0, 1.0, 1.0]);
        let k = 1.0 / 3f64.sqrt();
        for v in n {
            assert!((v - k).abs() < 1e-12);
        }
        assert!((n[0] - 0.5774).abs() < 1e-4);
    }

    #[test]
    fn zero_weights_give_mid_gray() {
        let p = Params::<f64>::zeros();
        let mut a = Activations::default();
        forward_pixel(&p, &[0.3; 8], false, &mut a);
        assert_eq!(a.encoded(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let w = MlpWeights::init(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(w.num_params(), 8 * 128 + 128 + 128 * 64 + 64 + 64 * 3 + 3);
        let b1 = (1.0f32 / 8.0).sqrt();
        assert!(w.w1.iter().all(|v| v.abs() <= b1));
        let b3 = (1.0f32 / 64.0).sqrt();
        assert!(w.w3.iter().all(|v| v.abs() <= b3));
        assert!(w.w1.iter().any(|v| v.abs() > 0.5 * b1));
    }

    #[test]
    fn gradient_is_zero_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpWeights::init(&mut rng).to_f64();
        let inputs: Vec<[f64; 8]> = (0..6).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let mut a = Activations::default();
        let targets: Vec<[f64; 3]> = inputs
            .iter()
            .map(|x| {
                forward_pixel(&p, x, false, &mut a);
                a.encoded()
            })
            .collect();
        let (loss, g) = batch_l1_and_grad(&p, &inputs, &targets, false);
        assert_eq!(loss, 0.0);
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = MlpWeights::init(&mut rng).to_f64();
        let inputs: Vec<[f64; 8]> = (0..5).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let targets: Vec<[f64; 3]> = (0..5).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let (l1, g1) = batch_l1_and_grad(&p, &inputs, &targets, false);
        let twice_in = [inputs.clone(), inputs].concat();
        let twice_t = [targets.clone(), targets].concat();
        let (l2, g2) = batch_l1_and_grad(&p, &twice_in, &twice_t, false);
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.slices().iter().zip(g2.slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    /// Signs of every ReLU input and L1 residual; central differences are
    /// only meaningful when the stencil keeps them all.
    fn kink_signs(p: &Params<f64>, xs: &[[f64; 8]], ts: &[[f64; 3]], relu: bool) -> Vec<bool> {
        let mut a = Activations::default();
        let mut v = Vec::new();
        for (x, t) in xs.iter().zip(ts) {
            forward_pixel(p, x, relu, &mut a);
            v.extend(a.z1.iter().chain(&a.z2).map(|&z| z > 0.0));
            if relu {
                v.extend(a.z3.iter().map(|&z| z > 0.0));
            }
            let out = a.encoded();
            v.extend((0..3).map(|c| out[c] > t[c]));
        }
        v
    }

    #[test]
    fn backprop_matches_fine_central_differences() {
        let h = 1e-6;
        for (seed, relu) in [(20, false), (21, true), (22, false), (23, true)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = MlpWeights::init(&mut rng).to_f64();
            let xs: Vec<[f64; 8]> = (0..4).map(|_| std::array::from_fn(|_| rng.random())).collect();
            let ts: Vec<[f64; 3]> = (0..4).map(|_| std::array::from_fn(|_| rng.random())).collect();
            let (_, g) = batch_l1_and_grad(&p, &xs, &ts, relu);
            let base = kink_signs(&p, &xs, &ts, relu);
            let mut checked = 0;
            for part in 0..6 {
                for idx in 0..p.slices()[part].len() {
                    let shifted = |d: f64| {
                        let mut q = p.clone();
                        q.slices_mut()[part][idx] += d;
                        q
                    };
                    let (qp, qm) = (shifted(h), shifted(-h));
                    if kink_signs(&qp, &xs, &ts, relu) != base || kink_signs(&qm, &xs, &ts, relu) != base {
                        continue;
                    }
                    let n = (batch_l1_and_grad(&qp, &xs, &ts, relu).0 - batch_l1_and_grad(&qm, &xs, &ts, relu).0) / (2.0 * h);
                    let a = g.slices()[part][idx];
                    assert!(
                        (a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-9,
                        "{} {idx} relu={relu}: {a} vs {n}",
                        PARAM_NAMES[part]
                    );
                    checked += 1;
                }
            }
            assert!(checked > 9000, "only {checked} parameters checked");
        }
    }

    #[test]
    fn relu_before_tanh_confines_to_positive_octant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = MlpWeights::init(&mut rng).to_f64();
        let mut a = Activations::default();
        for _ in 0..50 {
            let x: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            forward_pixel(&p, &x, true, &mut a);
            assert!(a.n.iter().all(|&v| v >= 0.0));
        }
    }
}
