//! Block-diagonal patterns and the randomly permuted binary masks built from
//! them.
//!
//! A mask for a `rows x cols` weight matrix starts as a block-diagonal
//! pattern with `k` all-ones blocks. Pattern row `r` is then moved to mask row
//! `p_row[r]` and pattern column `c` to mask column `p_col[c]`. Because the
//! pattern's bipartite row/column graph splits into `k` components, so does
//! the mask's, which is what lets masked weights be packed back into blocks.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::perm::Permutation;

/// Row and column extents of the diagonal blocks.
///
/// Block `b` covers rows `row_bounds[b]..row_bounds[b + 1]` and columns
/// `col_bounds[b]..col_bounds[b + 1]`. Generated patterns tile the full
/// matrix; patterns recovered from an arbitrary support may stop short of
/// `rows`/`cols`, leaving a trailing all-zero region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockPattern {
    rows: usize,
    cols: usize,
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

/// Floor-offset block layout: `row_bounds[b] = floor(b * m / k)`, likewise
/// for columns. Block sizes differ by at most one row/column.
pub fn block_pattern(m: usize, n: usize, k: usize) -> Result<BlockPattern> {
    if k == 0 || k > m.min(n) {
        return Err(Error::InvalidBlockCount { k, rows: m, cols: n });
    }
    let bounds = |len: usize| (0..=k).map(|b| b * len / k).collect::<Vec<_>>();
    Ok(BlockPattern {
        rows: m,
        cols: n,
        row_bounds: bounds(m),
        col_bounds: bounds(n),
    })
}

/// Block count for a target density `s`: `round(1 / s)`, at least 1.
pub fn sparsity_to_k(s: f64) -> Result<usize> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidSparsity(s));
    }
    Ok(((1.0 / s).round() as usize).max(1))
}

impl BlockPattern {
    /// Builds a pattern from explicit offsets. Both offset lists must start at
    /// 0, be nondecreasing, have the same length and end within the matrix.
    pub fn from_bounds(
        rows: usize,
        cols: usize,
        row_bounds: Vec<usize>,
        col_bounds: Vec<usize>,
    ) -> Result<Self> {
        let check = |bounds: &[usize], len: usize, what: &str| -> Result<()> {
            let ok = bounds.first() == Some(&0)
                && bounds.windows(2).all(|w| w[0] <= w[1])
                && bounds.last().is_some_and(|&end| end <= len);
            if ok {
                Ok(())
            } else {
                Err(Error::Malformed(format!("invalid {what} bounds {bounds:?} for length {len}")))
            }
        };
        check(&row_bounds, rows, "row")?;
        check(&col_bounds, cols, "column")?;
        if row_bounds.len() != col_bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "block pattern bounds",
                expected: row_bounds.len(),
                found: col_bounds.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            row_bounds,
            col_bounds,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of blocks.
    pub fn k(&self) -> usize {
        self.row_bounds.len() - 1
    }

    pub fn row_bounds(&self) -> &[usize] {
        &self.row_bounds
    }

    pub fn col_bounds(&self) -> &[usize] {
        &self.col_bounds
    }

    pub fn block_rows(&self, b: usize) -> Range<usize> {
        self.row_bounds[b]..self.row_bounds[b + 1]
    }

    pub fn block_cols(&self, b: usize) -> Range<usize> {
        self.col_bounds[b]..self.col_bounds[b + 1]
    }

    /// `(rows, cols)` of block `b`.
    pub fn block_shape(&self, b: usize) -> (usize, usize) {
        (self.block_rows(b).len(), self.block_cols(b).len())
    }

    /// Σ_b rows_b · cols_b.
    pub fn nnz(&self) -> usize {
        (0..self.k())
            .map(|b| {
                let (r, c) = self.block_shape(b);
                r * c
            })
            .sum()
    }

    /// Exact structural density Σ_b rows_b · cols_b / (rows · cols).
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    /// True when the blocks tile every row and column.
    pub fn is_full_cover(&self) -> bool {
        self.row_bounds[self.k()] == self.rows && self.col_bounds[self.k()] == self.cols
    }

    /// Block index per row, `None` for rows in the trailing zero region.
    pub fn row_blocks(&self) -> Vec<Option<usize>> {
        Self::assign(&self.row_bounds, self.rows)
    }

    /// Block index per column, `None` for columns in the trailing zero region.
    pub fn col_blocks(&self) -> Vec<Option<usize>> {
        Self::assign(&self.col_bounds, self.cols)
    }

    fn assign(bounds: &[usize], len: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; len];
        for (b, w) in bounds.windows(2).enumerate() {
            for slot in &mut out[w[0]..w[1]] {
                *slot = Some(b);
            }
        }
        out
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (0..self.k()).any(|b| self.block_rows(b).contains(&row) && self.block_cols(b).contains(&col))
    }

    /// Block-diagonal support in pattern coordinates, block by block and
    /// row-major within a block.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.k()).flat_map(move |b| {
            self.block_rows(b)
                .flat_map(move |r| self.block_cols(b).map(move |c| (r, c)))
        })
    }
}

const NO_BLOCK: u32 = u32::MAX;

/// Binary mask `M = P_row · B · P_col` over a `rows x cols` weight matrix.
///
/// The support is not stored; membership is answered from per-row and
/// per-column block labels in mask coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pattern: BlockPattern,
    p_row: Permutation,
    p_col: Permutation,
    row_seed: u64,
    col_seed: u64,
    row_block: Vec<u32>,
    col_block: Vec<u32>,
}

/// Generates the permuted mask for one layer.
pub fn make_mask(m: usize, n: usize, k: usize, row_seed: u64, col_seed: u64) -> Result<BinaryMask> {
    let pattern = block_pattern(m, n, k)?;
    let p_row = Permutation::random(m, row_seed)?;
    let p_col = Permutation::random(n, col_seed)?;
    let mut mask = BinaryMask::from_parts(pattern, p_row, p_col)?;
    mask.row_seed = row_seed;
    mask.col_seed = col_seed;
    Ok(mask)
}

/// |support| / (rows · cols).
pub fn mask_density(mask: &BinaryMask) -> f64 {
    mask.pattern.density()
}

impl BinaryMask {
    /// Mask from an explicit pattern and permutations. Seeds are recorded as 0.
    pub fn from_parts(pattern: BlockPattern, p_row: Permutation, p_col: Permutation) -> Result<Self> {
        if p_row.len() != pattern.rows() {
            return Err(Error::DimensionMismatch {
                context: "mask row permutation",
                expected: pattern.rows(),
                found: p_row.len(),
            });
        }
        if p_col.len() != pattern.cols() {
            return Err(Error::DimensionMismatch {
                context: "mask column permutation",
                expected: pattern.cols(),
                found: p_col.len(),
            });
        }
        let label = |blocks: Vec<Option<usize>>, p: &Permutation| {
            let mut out = vec![NO_BLOCK; blocks.len()];
            for (src, b) in blocks.into_iter().enumerate() {
                out[p[src]] = b.map_or(NO_BLOCK, |b| b as u32);
            }
            out
        };
        let row_block = label(pattern.row_blocks(), &p_row);
        let col_block = label(pattern.col_blocks(), &p_col);
        Ok(Self {
            pattern,
            p_row,
            p_col,
            row_seed: 0,
            col_seed: 0,
            row_block,
            col_block,
        })
    }

    /// Block-diagonal mask with identity permutations (the non-permuted
    /// ablation).
    pub fn unpermuted(m: usize, n: usize, k: usize) -> Result<Self> {
        Self::from_parts(
            block_pattern(m, n, k)?,
            Permutation::identity(m),
            Permutation::identity(n),
        )
    }

    /// Replaces the recorded seeds; used when reading a mask back from disk.
    pub fn with_seeds(mut self, row_seed: u64, col_seed: u64) -> Self {
        self.row_seed = row_seed;
        self.col_seed = col_seed;
        self
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows()
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols()
    }

    pub fn k(&self) -> usize {
        self.pattern.k()
    }

    pub fn pattern(&self) -> &BlockPattern {
        &self.pattern
    }

    pub fn p_row(&self) -> &Permutation {
        &self.p_row
    }

    pub fn p_col(&self) -> &Permutation {
        &self.p_col
    }

    pub fn row_seed(&self) -> u64 {
        self.row_seed
    }

    pub fn col_seed(&self) -> u64 {
        self.col_seed
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn density(&self) -> f64 {
        mask_density(self)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let b = self.row_block[row];
        b != NO_BLOCK && b == self.col_block[col]
    }

    /// Support entries in mask coordinates, in pattern order.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pattern
            .support()
            .map(|(r, c)| (self.p_row[r], self.p_col[c]))
    }

    /// Support sorted row-major.
    pub fn support_sorted(&self) -> Vec<(usize, usize)> {
        let (row_ptr, cols) = self.csr();
        (0..self.rows())
            .flat_map(|r| cols[row_ptr[r]..row_ptr[r + 1]].iter().map(move |&c| (r, c)))
            .collect()
    }

    /// Nonzero count of mask row `row`.
    pub fn row_nnz(&self, row: usize) -> usize {
        match self.row_block[row] {
            NO_BLOCK => 0,
            b => self.pattern.block_cols(b as usize).len(),
        }
    }

    /// Compressed-row view of the support: columns of row `r` are
    /// `cols[row_ptr[r]..row_ptr[r + 1]]`, ascending.
    pub fn csr(&self) -> (Vec<usize>, Vec<usize>) {
        let k = self.k();
        let mut block_cols: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (c, &b) in self.col_block.iter().enumerate() {
            if b != NO_BLOCK {
                block_cols[b as usize].push(c);
            }
        }
        let mut row_ptr = Vec::with_capacity(self.rows() + 1);
        let mut cols = Vec::with_capacity(self.nnz());
        row_ptr.push(0);
        for &b in &self.row_block {
            if b != NO_BLOCK {
                cols.extend_from_slice(&block_cols[b as usize]);
            }
            row_ptr.push(cols.len());
        }
        (row_ptr, cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_four_two_blocks() {
        let p = block_pattern(4, 4, 2).unwrap();
        assert_eq!(p.block_rows(0), 0..2);
        assert_eq!(p.block_cols(0), 0..2);
        assert_eq!(p.block_rows(1), 2..4);
        assert_eq!(p.block_cols(1), 2..4);
        assert_eq!(p.nnz(), 8);
    }

    #[test]
    fn lenet_second_layer_pattern() {
        let p = block_pattern(300, 100, 10).unwrap();
        assert_eq!(p.k(), 10);
        for b in 0..10 {
            assert_eq!(p.block_shape(b), (30, 10));
        }
        assert_eq!(p.nnz(), 3000);
        assert!(p.is_full_cover());
    }

    #[test]
    fn non_divisible_floor_offsets() {
        let p = block_pattern(5, 5, 2).unwrap();
        assert_eq!(p.row_bounds(), &[0, 2, 5]);
        assert_eq!(p.col_bounds(), &[0, 2, 5]);
        assert_eq!(p.density(), 13.0 / 25.0);
    }

    #[test]
    fn invalid_block_counts() {
        assert!(matches!(block_pattern(4, 4, 0), Err(Error::InvalidBlockCount { .. })));
        assert!(matches!(block_pattern(4, 3, 4), Err(Error::InvalidBlockCount { .. })));
        assert!(block_pattern(4, 3, 3).is_ok());
    }

    #[test]
    fn sparsity_conversion() {
        assert_eq!(sparsity_to_k(0.10).unwrap(), 10);
        assert_eq!(sparsity_to_k(1.0).unwrap(), 1);
        assert_eq!(sparsity_to_k(0.125).unwrap(), 8);
        assert_eq!(sparsity_to_k(0.2).unwrap(), 5);
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(sparsity_to_k(bad), Err(Error::InvalidSparsity(_))));
        }
    }

    #[test]
    fn identity_permutations_reproduce_pattern() {
        let mask = BinaryMask::unpermuted(7, 5, 3).unwrap();
        let pattern = block_pattern(7, 5, 3).unwrap();
        for r in 0..7 {
            for c in 0..5 {
                assert_eq!(mask.contains(r, c), pattern.contains(r, c));
            }
        }
    }

    #[test]
    fn support_count_is_seed_independent() {
        for seed in 0..20u64 {
            let mask = make_mask(300, 100, 10, seed, seed.wrapping_mul(31) + 1).unwrap();
            assert_eq!(mask.support().count(), 3000);
            assert_eq!(mask.density(), 0.10);
        }
    }

    #[test]
    fn densities() {
        assert_eq!(make_mask(6, 9, 1, 1, 2).unwrap().density(), 1.0);
        assert_eq!(make_mask(5, 5, 2, 1, 2).unwrap().density(), 0.52);
    }

    #[test]
    fn support_matches_membership() {
        let mask = make_mask(13, 11, 4, 77, 78).unwrap();
        let sorted = mask.support_sorted();
        assert_eq!(sorted.len(), mask.nnz());
        let mut expected = Vec::new();
        for r in 0..13 {
            for c in 0..11 {
                if mask.contains(r, c) {
                    expected.push((r, c));
                }
            }
        }
        assert_eq!(sorted, expected);
        let mut from_pattern: Vec<_> = mask.support().collect();
        from_pattern.sort_unstable();
        assert_eq!(from_pattern, expected);
    }

    #[test]
    fn row_nnz_follows_inverse_row_permutation() {
        let mask = make_mask(10, 7, 3, 5, 6).unwrap();
        let inv = mask.p_row().invert();
        for r in 0..10 {
            let pattern_row = inv[r];
            let expected = (0..7).filter(|&c| mask.pattern().contains(pattern_row, c)).count();
            assert_eq!(mask.row_nnz(r), expected);
            assert_eq!((0..7).filter(|&c| mask.contains(r, c)).count(), expected);
        }
    }

    #[test]
    fn hundred_mask_sum_has_mean_ten() {
        let mut sum = vec![0u32; 300 * 100];
        let mut seeds = crate::rng::Rng64::new(6);
        for _ in 0..100 {
            let mask = make_mask(300, 100, 10, seeds.next_u64(), seeds.next_u64()).unwrap();
            for (r, c) in mask.support() {
                sum[r * 100 + c] += 1;
            }
        }
        let total: u32 = sum.iter().sum();
        assert_eq!(total, 300_000);
        assert_eq!(total as f64 / sum.len() as f64, 10.0);
    }

    proptest! {
        #[test]
        fn row_and_column_counts_are_equivariant(
            m in 1usize..80, n in 1usize..80, k_seed: usize, rs: u64, cs: u64
        ) {
            let k = 1 + k_seed % m.min(n);
            let mask = make_mask(m, n, k, rs, cs).unwrap();
            let pattern = mask.pattern().clone();
            let mut mask_rows = vec![0usize; m];
            let mut mask_cols = vec![0usize; n];
            for (r, c) in mask.support() {
                mask_rows[r] += 1;
                mask_cols[c] += 1;
            }
            let mut pat_rows = vec![0usize; m];
            let mut pat_cols = vec![0usize; n];
            for (r, c) in pattern.support() {
                pat_rows[r] += 1;
                pat_cols[c] += 1;
            }
            mask_rows.sort_unstable();
            pat_rows.sort_unstable();
            mask_cols.sort_unstable();
            pat_cols.sort_unstable();
            prop_assert_eq!(mask_rows, pat_rows);
            prop_assert_eq!(mask_cols, pat_cols);
        }
    }
}
