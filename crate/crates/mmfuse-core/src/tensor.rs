//! Row-major 2-D tensor used for every learnable parameter.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};

/// A dense row-major matrix. A vector is a `1 x n` or `n x 1` tensor, but
/// plain `Vec<F>` is used for activations; `Tensor2` is for parameters and
/// anything whose shape must be carried around.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Float> Tensor2<F> {
    /// All-zeros tensor.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    /// Builds a tensor from row-major data, rejecting length mismatches and
    /// non-finite values.
    pub fn from_data(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::dimension("Tensor2::from_data", rows * cols, data.len()));
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::numeric(format!(
                    "non-finite value at flat index {i} of a {rows}x{cols} tensor"
                )));
            }
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[F] {
        let start = r * self.cols;
        &self.data[start..start + self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let start = r * self.cols;
        &mut self.data[start..start + self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: F) {
        for x in &mut self.data {
            *x = v;
        }
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `y = M x` for a row-major matrix; plain loops so LLVM can vectorize.
pub fn matvec<F: Float>(m: &Tensor2<F>, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), m.cols);
    debug_assert_eq!(y.len(), m.rows);
    for r in 0..m.rows {
        let row = m.row(r);
        let mut acc = F::zero();
        for i in 0..row.len() {
            acc = acc + row[i] * x[i];
        }
        y[r] = acc;
    }
}

/// `y += Mᵀ d` — accumulates the transpose product, used for input gradients.
pub fn matvec_t_accum<F: Float>(m: &Tensor2<F>, d: &[F], y: &mut [F]) {
    debug_assert_eq!(d.len(), m.rows);
    debug_assert_eq!(y.len(), m.cols);
    for r in 0..m.rows {
        let row = m.row(r);
        let dr = d[r];
        for i in 0..row.len() {
            y[i] = y[i] + row[i] * dr;
        }
    }
}

/// Euclidean norm of a slice.
pub fn l2_norm<F: Float>(x: &[F]) -> F {
    let mut acc = F::zero();
    for v in x {
        acc = acc + *v * *v;
    }
    acc.sqrt()
}

/// In-place L2 normalization. The zero vector is left untouched: empty
/// residuals stay empty rather than being inflated by an epsilon.
/// Returns the pre-normalization norm.
pub fn l2_normalize<F: Float>(x: &mut [F]) -> F {
    let n = l2_norm(x);
    if n > F::zero() {
        for v in x.iter_mut() {
            *v = *v / n;
        }
    }
    n
}

/// Backward of `y = x / ||x||` given `d_y`, the cached normalized output `y`
/// and the cached pre-normalization norm. Writes into `d_x` (accumulating).
/// For the zero vector the subgradient 0 is used.
pub fn l2_normalize_backward<F: Float>(y: &[F], norm: F, d_y: &[F], d_x: &mut [F]) {
    if norm <= F::zero() {
        return;
    }
    let mut dot = F::zero();
    for i in 0..y.len() {
        dot = dot + d_y[i] * y[i];
    }
    for i in 0..y.len() {
        d_x[i] = d_x[i] + (d_y[i] - y[i] * dot) / norm;
    }
}

pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn from_data_checks_shape_and_finite() {
        assert!(Tensor2::from_data(2, 2, vec![1.0f64, 2.0, 3.0]).is_err());
        assert!(Tensor2::from_data(1, 2, vec![1.0f64, f64::NAN]).is_err());
        let t = Tensor2::from_data(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn matvec_basics() {
        let m = Tensor2::from_data(2, 3, vec![1.0f64, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        let mut y = vec![0.0; 2];
        matvec(&m, &[5.0, 7.0, 9.0], &mut y);
        assert_eq!(y, vec![5.0, 14.0]);
    }

    #[test]
    fn normalize_zero_stays_zero() {
        let mut x = vec![0.0f64; 4];
        let n = l2_normalize(&mut x);
        assert_eq!(n, 0.0);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalize_unit_norm() {
        let mut x = vec![3.0f64, 4.0];
        let n = l2_normalize(&mut x);
        assert_eq!(n, 5.0);
        assert!((l2_norm(&x) - 1.0).abs() < 1e-12);
    }
}
