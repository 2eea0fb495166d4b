//! Row-major 2-D FFTs on top of rustfft. Both directions are unnormalized.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false)
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true)
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.rows * self.cols);
        let (rf, cf) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        rf.process(data);
        let mut t = transpose(data, self.rows, self.cols);
        cf.process(&mut t);
        let back = transpose(&t, self.cols, self.rows);
        data.copy_from_slice(&back);
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

/// Signed frequency index of DFT bin `i` out of `n`.
#[inline]
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let (r, c) = (4, 8);
        let data: Vec<Complex64> = (0..r * c).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut f = data.clone();
        Fft2::new(r, c).forward(&mut f);
        for kr in 0..r {
            for kc in 0..c {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..r {
                    for x in 0..c {
                        let ph = -2.0 * std::f64::consts::PI * ((kr * y) as f64 / r as f64 + (kc * x) as f64 / c as f64);
                        acc += data[y * c + x] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - f[kr * c + kc]).norm() < 1e-12);
            }
        }
        Fft2::new(r, c).inverse(&mut f);
        for (a, b) in f.iter().zip(&data) {
            assert!((a / (r * c) as f64 - b).norm() < 1e-13);
        }
    }
}
