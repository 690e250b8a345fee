use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Unnormalized DST-I, `X_k = sum_j x_j sin(pi j k / (n + 1))` with `j, k`
/// running over `1..=n`, computed through a length `2(n + 1)` FFT of the odd
/// extension.
pub(crate) struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    pub(crate) fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        Self { n, fft }
    }

    pub(crate) fn transform(&self, x: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        buf.clear();
        buf.resize(2 * (n + 1), Complex::new(0.0, 0.0));
        for (j, &v) in x.iter().enumerate() {
            buf[j + 1].re = v;
            buf[2 * (n + 1) - 1 - j].re = -v;
        }
        self.fft.process(buf);
        for (k, out) in x.iter_mut().enumerate() {
            *out = -0.5 * buf[k + 1].im;
        }
    }

    /// Applies the transform to every row of a row-major `rows x n` block.
    pub(crate) fn rows(&self, data: &mut [f64]) {
        data.par_chunks_mut(self.n).for_each_init(Vec::new, |buf, row| self.transform(row, buf));
    }
}

pub(crate) fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
