//! Two-dimensional FFTs over row-major `ndarray` grids.
//!
//! Convention: the forward transform is unnormalized and the inverse is
//! scaled by `1 / (nx * ny)`, so `inverse(forward(a)) == a` up to round-off.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse transforms for one grid shape.
pub struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(nx),
            row_inv: planner.plan_fft_inverse(nx),
            col_fwd: planner.plan_fft_forward(ny),
            col_inv: planner.plan_fft_inverse(ny),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        data.par_mapv_inplace(|v| v * scale);
    }

    fn transform(&self, data: &mut Array2<Complex64>, rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.ny, self.nx), "grid shape does not match plan");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().into_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        run_rows(buf, self.nx, rows);

        // Columns are transformed as rows of the transpose.
        let mut transposed = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut transposed, self.nx, self.ny);
        run_rows(&mut transposed, self.ny, cols);
        transpose(&transposed, buf, self.ny, self.nx);
    }
}

fn run_rows(buf: &mut [Complex64], len: usize, fft: &Arc<dyn Fft<f64>>) {
    let scratch_len = fft.get_inplace_scratch_len();
    buf.par_chunks_mut(len).for_each_init(
        || vec![Complex64::default(); scratch_len],
        |scratch, row| fft.process_with_scratch(row, scratch),
    );
}

/// `src` is `rows x cols` row-major; `dst` becomes `cols x rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    const BLOCK: usize = 32;
    dst.par_chunks_mut(rows * BLOCK).enumerate().for_each(|(chunk, out)| {
        let c0 = chunk * BLOCK;
        let c1 = (c0 + BLOCK).min(cols);
        for r0 in (0..rows).step_by(BLOCK) {
            let r1 = (r0 + BLOCK).min(rows);
            for c in c0..c1 {
                let base = (c - c0) * rows;
                for r in r0..r1 {
                    out[base + r] = src[r * cols + c];
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(a: &Array2<Complex64>) -> Array2<Complex64> {
        let (ny, nx) = a.dim();
        let mut out = Array2::zeros((ny, nx));
        for v in 0..ny {
            for u in 0..nx {
                let mut acc = Complex64::default();
                for y in 0..ny {
                    for x in 0..nx {
                        let ph =
                            -2.0 * std::f64::consts::PI * ((u * x) as f64 / nx as f64 + (v * y) as f64 / ny as f64);
                        acc += a[[y, x]] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[[v, u]] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_direct_dft_on_odd_shape() {
        let (ny, nx) = (5, 6);
        let a = Array2::from_shape_fn((ny, nx), |(y, x)| {
            Complex64::new((x * 3 + y) as f64 * 0.1, (x as f64 - y as f64).sin())
        });
        let mut b = a.clone();
        let plan = Fft2::new(nx, ny);
        plan.forward(&mut b);
        let want = naive_dft(&a);
        for (p, q) in b.iter().zip(want.iter()) {
            assert!((p - q).norm() < 1e-10);
        }
        plan.inverse(&mut b);
        for (p, q) in b.iter().zip(a.iter()) {
            assert!((p - q).norm() < 1e-12);
        }
    }
}
