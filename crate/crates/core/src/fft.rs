//! Two-dimensional FFTs over row-major `ndarray` buffers.
//!
//! Forward transforms are unnormalized; [`Fft2::inverse`] applies the `1/(rows*cols)` factor,
//! while [`Fft2::inverse_unnormalized`] is the exact adjoint of the forward transform.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

#[derive(Clone)]
pub struct Fft2<T: Real> {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex<T>>) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse_unnormalized(&self, data: &mut Array2<Complex<T>>) {
        self.transform(data, &self.row_inv, &self.col_inv);
    }

    pub fn inverse(&self, data: &mut Array2<Complex<T>>) {
        self.inverse_unnormalized(data);
        let scale = T::one() / T::from_usize_lossy(self.rows * self.cols);
        data.mapv_inplace(|z| z * scale);
    }

    fn transform(
        &self,
        data: &mut Array2<Complex<T>>,
        row_plan: &Arc<dyn Fft<T>>,
        col_plan: &Arc<dyn Fft<T>>,
    ) {
        assert_eq!(data.dim(), (self.rows, self.cols), "FFT plan shape mismatch");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().to_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        let scratch_len = row_plan
            .get_inplace_scratch_len()
            .max(col_plan.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); scratch_len];
        row_plan.process_with_scratch(buf, &mut scratch);

        let mut transposed = vec![Complex::new(T::zero(), T::zero()); buf.len()];
        transpose(buf, &mut transposed, self.rows, self.cols);
        col_plan.process_with_scratch(&mut transposed, &mut scratch);
        transpose(&transposed, buf, self.cols, self.rows);
    }
}

fn transpose<X: Copy>(src: &[X], dst: &mut [X], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Moves the zero-frequency sample to `(rows/2, cols/2)`.
pub fn fftshift<X: Clone>(a: &Array2<X>) -> Array2<X> {
    let (r, c) = a.dim();
    roll(a, r / 2, c / 2)
}

/// Inverse of [`fftshift`] (they differ for odd sizes).
pub fn ifftshift<X: Clone>(a: &Array2<X>) -> Array2<X> {
    let (r, c) = a.dim();
    roll(a, r - r / 2, c - c / 2)
}

fn roll<X: Clone>(a: &Array2<X>, dr: usize, dc: usize) -> Array2<X> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((r, c), |(i, j)| {
        a[((i + r - dr % r.max(1)) % r, (j + c - dc % c.max(1)) % c)].clone()
    })
}

/// Signed DFT frequency index of sample `k` on an axis of length `n` (numpy `fftfreq * n`).
#[inline]
pub fn freq_index(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}
