//! Causal attention matrices.
//!
//! Only the lower triangle (`j <= i`) is stored. Entries above the diagonal
//! are structurally masked: [`AttentionMatrix::get`] returns `None` for them
//! and no operation can read or write a value there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for per-head weight matrices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Pre-softmax scores or post-softmax weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Score,
    Weight,
}

/// A single head's matrix or the sum over all heads of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    PerHead,
    HeadSummed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    len: usize,
    kind: MatrixKind,
    reduction: Reduction,
    cells: Vec<f64>,
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl AttentionMatrix {
    pub fn zeros(len: usize, kind: MatrixKind, reduction: Reduction) -> Self {
        Self {
            len,
            kind,
            reduction,
            cells: vec![0.0; row_offset(len)],
        }
    }

    /// Builds a score matrix from `f(i, j)` evaluated on every unmasked cell.
    pub fn scores(len: usize, reduction: Reduction, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::filled(len, MatrixKind::Score, reduction, f)
    }

    /// Builds a weight matrix from `f(i, j)`; per-head matrices must have
    /// rows summing to one.
    pub fn weights(
        len: usize,
        reduction: Reduction,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let m = Self::filled(len, MatrixKind::Weight, reduction, f);
        m.check_rows()?;
        Ok(m)
    }

    pub(crate) fn filled(
        len: usize,
        kind: MatrixKind,
        reduction: Reduction,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut cells = Vec::with_capacity(row_offset(len));
        for i in 0..len {
            for j in 0..=i {
                cells.push(f(i, j));
            }
        }
        Self {
            len,
            kind,
            reduction,
            cells,
        }
    }

    /// Builds from a dense row-major `len × len` grid. Entries above the
    /// diagonal are dropped for scores and must be zero for weights.
    pub fn from_dense(
        len: usize,
        kind: MatrixKind,
        reduction: Reduction,
        dense: &[f64],
    ) -> Result<Self> {
        if dense.len() != len * len {
            return Err(Error::PayloadSize {
                expected: len * len,
                found: dense.len(),
            });
        }
        if kind == MatrixKind::Weight {
            for i in 0..len {
                for j in i + 1..len {
                    let value = dense[i * len + j];
                    if value != 0.0 {
                        return Err(Error::CausalityViolation { row: i, col: j, value });
                    }
                }
            }
        }
        let m = Self::filled(len, kind, reduction, |i, j| dense[i * len + j]);
        if kind == MatrixKind::Weight {
            m.check_rows()?;
        }
        Ok(m)
    }

    /// Dense row-major copy with masked cells set to `masked`.
    pub fn to_dense(&self, masked: f64) -> Vec<f64> {
        let mut out = vec![masked; self.len * self.len];
        for i in 0..self.len {
            out[i * self.len..i * self.len + i + 1].copy_from_slice(self.row(i));
        }
        out
    }

    fn check_rows(&self) -> Result<()> {
        if self.kind == MatrixKind::Weight && self.reduction == Reduction::PerHead {
            self.validate_row_sums(1.0, ROW_SUM_TOLERANCE)?;
        }
        Ok(())
    }

    /// Checks that every row sums to `expected` within `tolerance`.
    pub fn validate_row_sums(&self, expected: f64, tolerance: f64) -> Result<()> {
        for i in 0..self.len {
            let sum: f64 = self.row(i).iter().sum();
            if !((sum - expected).abs() <= tolerance) {
                return Err(Error::RowSum {
                    row: i,
                    sum,
                    expected,
                    tolerance,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        j > i
    }

    /// `None` for masked or out-of-range cells.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (i < self.len && j <= i).then(|| self.cells[row_offset(i) + j])
    }

    /// Cell value with masked cells reading as zero.
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.cells[row_offset(i) + j]
        }
    }

    /// Unmasked part of row `i` (columns `0..=i`).
    pub fn row(&self, i: usize) -> &[f64] {
        let start = row_offset(i);
        &self.cells[start..start + i + 1]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let start = row_offset(i);
        &mut self.cells[start..start + i + 1]
    }

    /// Element-wise sum of per-head matrices of the same kind.
    pub fn sum_heads(heads: &[AttentionMatrix]) -> Result<Self> {
        let first = heads.first().ok_or(Error::EmptyInput)?;
        let mut out = Self::zeros(first.len, first.kind, Reduction::HeadSummed);
        for head in heads {
            if head.len != first.len {
                return Err(Error::LayoutMismatch {
                    expected: first.len,
                    found: head.len,
                });
            }
            if head.kind != first.kind {
                return Err(Error::WrongMatrixKind {
                    expected: first.kind,
                    found: head.kind,
                });
            }
            for (acc, v) in out.cells.iter_mut().zip(&head.cells) {
                *acc += v;
            }
        }
        Ok(out)
    }

    /// Element-wise mean of matrices, e.g. across layers.
    pub fn mean(matrices: &[&AttentionMatrix]) -> Result<Self> {
        let first = *matrices.first().ok_or(Error::EmptyInput)?;
        let mut out = Self::zeros(first.len, first.kind, first.reduction);
        for m in matrices {
            if m.len != first.len {
                return Err(Error::LayoutMismatch {
                    expected: first.len,
                    found: m.len,
                });
            }
            for (acc, v) in out.cells.iter_mut().zip(&m.cells) {
                *acc += v;
            }
        }
        let n = matrices.len() as f64;
        out.cells.iter_mut().for_each(|c| *c /= n);
        Ok(out)
    }

    /// Bitwise equality of every stored cell.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.len == other.len
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn expect_kind(&self, kind: MatrixKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongMatrixKind {
                expected: kind,
                found: self.kind,
            })
        }
    }

    pub(crate) fn expect_len(&self, len: usize) -> Result<()> {
        if self.len == len {
            Ok(())
        } else {
            Err(Error::LayoutMismatch {
                expected: len,
                found: self.len,
            })
        }
    }
}
