//! FFT helpers shared by the channel synthesis and the estimator.
//!
//! The model uses the unitary DFT matrix F with entries
//! `exp(-j 2 pi n l / N) / sqrt(N)`; forward/inverse transforms here carry
//! that normalization. Coarse search stages use rectangular DFT matrices
//! whose size differs from the input length; those are evaluated by folding
//! the input modulo the transform size and running a plain FFT, which is
//! exact for any input length.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// In-place unitary DFT: `x <- F x`. Exercised directly by the unitarity
/// tests; production paths go through the fused helpers below.
#[allow(dead_code)]
pub fn unitary_dft(buf: &mut [Complex64]) {
    let n = buf.len();
    forward_plan(n).process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// In-place unitary inverse DFT: `x <- F^H x`.
#[allow(dead_code)]
pub fn unitary_idft(buf: &mut [Complex64]) {
    let n = buf.len();
    inverse_plan(n).process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Applies `F diag(e) F^H` to every column of `x` (N x L).
pub fn doppler_mix_columns(x: &mut Array2<Complex64>, diag: &[Complex64]) {
    let n = x.nrows();
    assert_eq!(diag.len(), n, "diagonal length must match row count");
    let fwd = forward_plan(n);
    let inv = inverse_plan(n);
    let mut buf = vec![Complex64::default(); n];
    for mut col in x.columns_mut() {
        for (b, v) in buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        inv.process(&mut buf);
        for (b, d) in buf.iter_mut().zip(diag.iter()) {
            *b *= d;
        }
        fwd.process(&mut buf);
        // inverse then forward accumulates a factor N under rustfft's
        // unnormalized transforms
        let scale = 1.0 / n as f64;
        for (v, b) in col.iter_mut().zip(buf.iter()) {
            *v = *b * scale;
        }
    }
}

/// `out[i] = sum_t x[t] exp(-j 2 pi i t / size)` for `i = 0..size`.
///
/// Exact for any input length: indices are folded modulo `size` before the
/// FFT because the DFT kernel is periodic in `t` with period `size`.
pub fn rect_dft(x: &[Complex64], size: usize) -> Vec<Complex64> {
    let mut buf = fold(x, size);
    forward_plan(size).process(&mut buf);
    buf
}

/// `out[i] = sum_t x[t] exp(+j 2 pi i t / size)` for `i = 0..size`.
pub fn rect_idft(x: &[Complex64], size: usize) -> Vec<Complex64> {
    let mut buf = fold(x, size);
    inverse_plan(size).process(&mut buf);
    buf
}

fn fold(x: &[Complex64], size: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::default(); size];
    for (t, v) in x.iter().enumerate() {
        buf[t % size] += v;
    }
    buf
}

/// Unnormalized 2-D inverse DFT with independent output dimensions:
/// `out[i1, i2] = sum_{r,s} c[r, s] exp(+j 2 pi (r i1 / n1 + s i2 / n2))`.
pub fn idft2(c: &Array2<Complex64>, n1: usize, n2: usize) -> Array2<Complex64> {
    let (m1, m2) = c.dim();
    assert!(m1 <= n1 && m2 <= n2, "output grid must not truncate the input");
    // Rows first: for each input row r, transform over s.
    let mut rows = Array2::<Complex64>::zeros((m1, n2));
    let plan_cols = inverse_plan(n2);
    let mut buf = vec![Complex64::default(); n2];
    for r in 0..m1 {
        buf.iter_mut().for_each(|v| *v = Complex64::default());
        for s in 0..m2 {
            buf[s] = c[(r, s)];
        }
        plan_cols.process(&mut buf);
        for i2 in 0..n2 {
            rows[(r, i2)] = buf[i2];
        }
    }
    // Then columns: transform over r for each output column.
    let mut out = Array2::<Complex64>::zeros((n1, n2));
    let plan_rows = inverse_plan(n1);
    let mut buf = vec![Complex64::default(); n1];
    for i2 in 0..n2 {
        buf.iter_mut().for_each(|v| *v = Complex64::default());
        for r in 0..m1 {
            buf[r] = rows[(r, i2)];
        }
        plan_rows.process(&mut buf);
        for i1 in 0..n1 {
            out[(i1, i2)] = buf[i1];
        }
    }
    out
}
