//! Code-aware attention mask over the N_max x 2N_max compatibility matrix.
//!
//! Columns 0..N_max index padded channel observations, columns N_max..2N_max
//! index padded frozen-prior entries. Row-wise masking pins every padding and
//! frozen row to its own prior column (i + N_max); column-wise masking removes
//! padding columns and message self-columns from the message rows.

use crate::error::{Error, Result};
use crate::polar::PolarCode;
use crate::tensor::SoftmaxMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub n_max: usize,
    pub n_pad: usize,
    /// Row-major n_max x 2n_max, true = masked.
    masked: Vec<bool>,
}

impl MaskSet {
    pub fn rows(&self) -> usize {
        self.n_max
    }

    pub fn cols(&self) -> usize {
        2 * self.n_max
    }

    #[inline]
    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.masked[row * 2 * self.n_max + col]
    }

    /// Masked (row, col) pairs, row-major order.
    pub fn masked_pairs(&self) -> Vec<(usize, usize)> {
        let cols = self.cols();
        self.masked
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / cols, i % cols))
            .collect()
    }

    pub fn unmasked_cols(&self, row: usize) -> Vec<usize> {
        (0..self.cols()).filter(|&c| !self.is_masked(row, c)).collect()
    }

    pub fn to_softmax_mask(&self) -> SoftmaxMask {
        SoftmaxMask {
            rows: self.rows(),
            cols: self.cols(),
            masked: self.masked.clone(),
        }
    }
}

/// Builds the union of the row-wise and column-wise mask sets for a code
/// placed at the right edge of an N_max-wide network.
pub fn build_mask(code: &PolarCode, n_max: usize) -> Result<MaskSet> {
    if code.block_len > n_max {
        return Err(Error::Capability(format!(
            "code length {} exceeds network size {n_max}",
            code.block_len
        )));
    }
    let n_pad = n_max - code.block_len;
    let cols = 2 * n_max;
    let mut masked = vec![false; n_max * cols];

    // Row-wise: padding rows and frozen rows keep only their own prior column.
    let isolated_rows = (0..n_pad).chain(code.frozen_set.iter().map(|&f| f + n_pad));
    for i in isolated_rows {
        for j in 0..cols {
            if j != i + n_max {
                masked[i * cols + j] = true;
            }
        }
    }

    // Column-wise: message rows drop padded observations, padded priors, and
    // every message self-column.
    for &a in &code.message_set {
        let i = a + n_pad;
        for j in 0..n_pad {
            masked[i * cols + j] = true; // padded observations
            masked[i * cols + n_max + j] = true; // padded priors
        }
        for &a2 in &code.message_set {
            masked[i * cols + a2 + n_pad + n_max] = true;
        }
    }

    Ok(MaskSet { n_max, n_pad, masked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::PolarCode;

    #[test]
    fn spec_example_n4_k2_in_8() {
        // N=4, k=2, message set {3,4} 1-based -> {2,3} 0-based.
        let code = PolarCode::from_message_set(2, vec![2, 3]).unwrap();
        let mask = build_mask(&code, 8).unwrap();
        assert_eq!(mask.n_pad, 4);
        // Message rows {7,8} 1-based -> {6,7}: attend to observation columns
        // {5..8} 1-based -> {4..8} and frozen prior columns {13,14} -> {12,13}.
        for row in [6, 7] {
            assert_eq!(mask.unmasked_cols(row), vec![4, 5, 6, 7, 12, 13]);
        }
        // Rows 1..6 1-based -> 0..5 keep only column i + 8.
        for row in 0..6 {
            assert_eq!(mask.unmasked_cols(row), vec![row + 8]);
        }
    }

    #[test]
    fn rate_one_masks_only_message_prior_columns() {
        let n_max = 8;
        let code = PolarCode::from_message_set(3, (0..8).collect()).unwrap();
        let mask = build_mask(&code, n_max).unwrap();
        for row in 0..n_max {
            let expect: Vec<usize> = (0..n_max).collect();
            assert_eq!(mask.unmasked_cols(row), expect);
        }
    }

    #[test]
    fn every_row_has_an_unmasked_column() {
        for n in 1..=4usize {
            let len = 1 << n;
            for k in 1..=len {
                let code = PolarCode::from_message_set(n, (len - k..len).collect()).unwrap();
                let mask = build_mask(&code, 16).unwrap();
                for row in 0..mask.rows() {
                    assert!(
                        !mask.unmasked_cols(row).is_empty(),
                        "fully masked row {row} at N={len} k={k}"
                    );
                }
            }
        }
    }

    #[test]
    fn oversized_code_is_rejected() {
        let code = PolarCode::from_message_set(3, vec![7]).unwrap();
        assert!(build_mask(&code, 4).is_err());
    }
}
