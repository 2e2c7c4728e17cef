//! Minimal dense 2-D tensor engine with reverse-mode differentiation.
//!
//! Storage is `f32` by default; the `f64` feature switches the whole engine to
//! `f64` so gradient oracles can be checked at tight tolerances.

mod adam;
mod checkpoint;
mod gemm;
pub mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use tape::{Gradients, SoftmaxMask, Tape, Var, MASK_NEG};

use rand::Rng;

#[cfg(feature = "f64")]
pub type Real = f64;
#[cfg(not(feature = "f64"))]
pub type Real = f32;

/// Dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: Real) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Real>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Self { rows, cols, data }
    }

    pub fn scalar(value: Real) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    /// Entries drawn i.i.d. from U(-bound, bound).
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: Real, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-(bound as f64)..(bound as f64)) as Real)
            .collect();
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Real) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Fast finiteness scan: the sum of absolute values is finite iff every
    /// entry is (NaN and infinities propagate through the sum).
    pub fn all_finite(&self) -> bool {
        self.data.iter().map(|v| v.abs()).sum::<Real>().is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_scan_flags_bad_values() {
        let mut t = Tensor::zeros(2, 2);
        assert!(t.all_finite());
        t.set(0, 1, Real::NAN);
        assert!(!t.all_finite());
        t.set(0, 1, Real::INFINITY);
        assert!(!t.all_finite());
    }
}
