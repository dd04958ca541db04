//! Dense, masked and block-diagonal kernels with exact multiply-accumulate
//! accounting.
//!
//! Every product accumulates each output element in ascending order of the
//! shared index, starting from zero, so results are reproducible bit for bit
//! in single-threaded mode.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maskgen::{BinaryMask, BlockPattern};
use crate::perm::Permutation;

/// Row-major `rows x cols` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "dense matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Positions of the nonzero entries, row-major.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                if v != 0.0 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Multiply-accumulate counter. Only ever incremented, or explicitly reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MacCounter {
    macs: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, macs: u64) {
        self.macs += macs;
    }

    pub fn get(&self) -> u64 {
        self.macs
    }

    pub fn reset(&mut self) {
        self.macs = 0;
    }
}

/// Dense product `a · x`. Adds `a.rows · a.cols · x.cols` to `counter`.
pub fn gemm(a: &DenseMatrix, x: &DenseMatrix, counter: &mut MacCounter) -> Result<DenseMatrix> {
    if a.cols != x.rows {
        return Err(Error::DimensionMismatch {
            context: "gemm inner dimension",
            expected: a.cols,
            found: x.rows,
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, x.cols);
    gemm_rows(a.as_slice(), a.cols, x.as_slice(), x.cols, out.as_mut_slice());
    counter.add((a.rows * a.cols * x.cols) as u64);
    Ok(out)
}

/// `out[i][j] += Σ_k a[i][k] · x[k][j]` with `k` ascending per element.
/// The loop nest is i-k-j so the innermost loop runs over contiguous memory;
/// the per-element summation order is the same as the textbook i-j-k nest.
fn gemm_rows(a: &[f64], inner: usize, x: &[f64], width: usize, out: &mut [f64]) {
    for (a_row, out_row) in a.chunks_exact(inner).zip(out.chunks_exact_mut(width)) {
        for (&aik, x_row) in a_row.iter().zip(x.chunks_exact(width)) {
            for (o, &xv) in out_row.iter_mut().zip(x_row) {
                *o += aik * xv;
            }
        }
    }
}

/// Elementwise product with a binary mask: entries outside the support
/// become zero, entries inside are copied unchanged.
pub fn hadamard_mask(w: &DenseMatrix, mask: &BinaryMask) -> Result<DenseMatrix> {
    check_mask_shape(w, mask)?;
    let mut out = w.clone();
    apply_mask_in_place(&mut out, mask);
    Ok(out)
}

pub(crate) fn check_mask_shape(w: &DenseMatrix, mask: &BinaryMask) -> Result<()> {
    if w.rows != mask.rows() {
        return Err(Error::DimensionMismatch {
            context: "mask rows",
            expected: mask.rows(),
            found: w.rows,
        });
    }
    if w.cols != mask.cols() {
        return Err(Error::DimensionMismatch {
            context: "mask columns",
            expected: mask.cols(),
            found: w.cols,
        });
    }
    Ok(())
}

pub(crate) fn apply_mask_in_place(w: &mut DenseMatrix, mask: &BinaryMask) {
    let cols = w.cols;
    for r in 0..w.rows {
        for (c, v) in w.data[r * cols..(r + 1) * cols].iter_mut().enumerate() {
            if !mask.contains(r, c) {
                *v = 0.0;
            }
        }
    }
}

/// Whether each axis is moved by the inverse permutation (a gather) or the
/// forward one (a scatter).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transpose {
    pub rows: bool,
    pub cols: bool,
}

impl Transpose {
    /// `out[r][c] = w[p_row[r]][p_col[c]]`: undoes the mask permutations.
    pub const BOTH: Self = Self { rows: true, cols: true };
    /// `out[p_row[r]][p_col[c]] = w[r][c]`: applies the mask permutations.
    pub const NONE: Self = Self { rows: false, cols: false };
}

/// Permutes rows and columns of `w` by index gathers.
pub fn permute_matrix(
    w: &DenseMatrix,
    p_row: &Permutation,
    p_col: &Permutation,
    transpose: Transpose,
) -> Result<DenseMatrix> {
    if p_row.len() != w.rows {
        return Err(Error::DimensionMismatch {
            context: "row permutation",
            expected: w.rows,
            found: p_row.len(),
        });
    }
    if p_col.len() != w.cols {
        return Err(Error::DimensionMismatch {
            context: "column permutation",
            expected: w.cols,
            found: p_col.len(),
        });
    }
    // Scattering by p is gathering by its inverse.
    let row_src = if transpose.rows { p_row.clone() } else { p_row.invert() };
    let col_src = if transpose.cols { p_col.clone() } else { p_col.invert() };
    let mut out = DenseMatrix::zeros(w.rows, w.cols);
    for r in 0..w.rows {
        let src = w.row(row_src[r]);
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = src[col_src[c]];
        }
    }
    Ok(out)
}

/// Block-diagonal matrix with each block stored densely, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagMatrix {
    pattern: BlockPattern,
    blocks: Vec<DenseMatrix>,
}

impl BlockDiagMatrix {
    pub fn new(pattern: BlockPattern, blocks: Vec<DenseMatrix>) -> Result<Self> {
        if blocks.len() != pattern.k() {
            return Err(Error::DimensionMismatch {
                context: "block count",
                expected: pattern.k(),
                found: blocks.len(),
            });
        }
        for (b, block) in blocks.iter().enumerate() {
            let (r, c) = pattern.block_shape(b);
            if block.shape() != (r, c) {
                return Err(Error::DimensionMismatch {
                    context: "block shape",
                    expected: r * c,
                    found: block.rows() * block.cols(),
                });
            }
        }
        Ok(Self { pattern, blocks })
    }

    pub fn pattern(&self) -> &BlockPattern {
        &self.pattern
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows()
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols()
    }

    /// Number of stored values, Σ_b rows_b · cols_b.
    pub fn stored(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows(), self.cols());
        for (b, block) in self.blocks.iter().enumerate() {
            let cols = self.pattern.block_cols(b);
            for (i, r) in self.pattern.block_rows(b).enumerate() {
                out.row_mut(r)[cols.clone()].copy_from_slice(block.row(i));
            }
        }
        out
    }
}

/// Copies each block rectangle of `w` into packed storage. Fails if any
/// nonzero lies outside every block.
pub fn to_block_diagonal(w: &DenseMatrix, pattern: &BlockPattern) -> Result<BlockDiagMatrix> {
    if w.shape() != (pattern.rows(), pattern.cols()) {
        return Err(Error::DimensionMismatch {
            context: "block pattern shape",
            expected: pattern.rows() * pattern.cols(),
            found: w.rows * w.cols,
        });
    }
    let row_blocks = pattern.row_blocks();
    let col_blocks = pattern.col_blocks();
    for r in 0..w.rows {
        for (c, &v) in w.row(r).iter().enumerate() {
            if v != 0.0 && (row_blocks[r].is_none() || row_blocks[r] != col_blocks[c]) {
                return Err(Error::StructureViolation { row: r, col: c });
            }
        }
    }
    let blocks = (0..pattern.k())
        .map(|b| {
            let cols = pattern.block_cols(b);
            let rows = pattern.block_rows(b);
            let mut data = Vec::with_capacity(rows.len() * cols.len());
            for r in rows.clone() {
                data.extend_from_slice(&w.row(r)[cols.clone()]);
            }
            DenseMatrix::from_vec(rows.len(), cols.len(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    BlockDiagMatrix::new(pattern.clone(), blocks)
}

/// `b · x` for a single vector. Adds Σ_b rows_b · cols_b to `counter`.
pub fn block_matvec(b: &BlockDiagMatrix, x: &[f64], counter: &mut MacCounter) -> Result<Vec<f64>> {
    let xm = DenseMatrix::from_vec(x.len(), 1, x.to_vec())?;
    Ok(block_matmul(b, &xm, counter)?.into_vec())
}

/// `b · x` where `x` has one column per sample. Blocks run one after another.
pub fn block_matmul(b: &BlockDiagMatrix, x: &DenseMatrix, counter: &mut MacCounter) -> Result<DenseMatrix> {
    block_matmul_with(b, x, counter, 1)
}

/// As [`block_matmul`], running blocks on up to `threads` workers. Blocks
/// write disjoint row ranges, so the result does not depend on scheduling.
pub fn block_matmul_with(
    b: &BlockDiagMatrix,
    x: &DenseMatrix,
    counter: &mut MacCounter,
    threads: usize,
) -> Result<DenseMatrix> {
    if x.rows != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "block matmul input",
            expected: b.cols(),
            found: x.rows,
        });
    }
    let width = x.cols;
    let mut out = DenseMatrix::zeros(b.rows(), width);
    let pattern = &b.pattern;

    // Split the output into one disjoint slice per block.
    let mut tasks: Vec<(&DenseMatrix, Range<usize>, &mut [f64])> = Vec::with_capacity(pattern.k());
    let mut rest = out.as_mut_slice();
    let mut consumed = 0;
    for (blk, block) in b.blocks.iter().enumerate() {
        let rows = pattern.block_rows(blk);
        let (_, tail) = rest.split_at_mut((rows.start - consumed) * width);
        let (mine, tail) = tail.split_at_mut(rows.len() * width);
        consumed = rows.end;
        rest = tail;
        tasks.push((block, pattern.block_cols(blk), mine));
    }
    let xs = x.as_slice();
    let run = |(block, cols, dst): (&DenseMatrix, Range<usize>, &mut [f64])| {
        gemm_rows(block.as_slice(), block.cols, &xs[cols.start * width..cols.end * width], width, dst);
    };
    if threads > 1 && tasks.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| tasks.into_par_iter().for_each(run));
    } else {
        tasks.into_iter().for_each(run);
    }
    counter.add((pattern.nnz() * width) as u64);
    Ok(out)
}
