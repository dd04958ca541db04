//! Recovering block structure from a sparse support.
//!
//! Rows and columns are the two vertex sets of a bipartite graph with one edge
//! per nonzero. Each connected component becomes one diagonal block once its
//! rows and columns are made contiguous.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::maskgen::BlockPattern;
use crate::perm::Permutation;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Component {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    pub isolated_rows: Vec<usize>,
    pub isolated_cols: Vec<usize>,
}

fn check_support(m: usize, n: usize, support: &[(usize, usize)]) -> Result<()> {
    match support.iter().find(|&&(r, c)| r >= m || c >= n) {
        Some(&(row, col)) => Err(Error::OutOfBounds {
            row,
            col,
            rows: m,
            cols: n,
        }),
        None => Ok(()),
    }
}

/// Connected components of the row/column graph of `support`.
///
/// Components are ordered by their smallest row index (a component without
/// rows would sort by smallest column + `m`); indices within a component are
/// ascending. Rows and columns with no nonzero are reported as isolated.
pub fn bipartite_components(m: usize, n: usize, support: &[(usize, usize)]) -> Result<ComponentSet> {
    check_support(m, n, support)?;
    let mut uf = UnionFind::new(m + n);
    let mut touched = vec![false; m + n];
    for &(r, c) in support {
        uf.union(r, m + c);
        touched[r] = true;
        touched[m + c] = true;
    }

    // Vertices are visited in ascending order, so rows come before columns
    // and the first time a root is seen fixes the component order.
    let mut slot_of_root = vec![usize::MAX; m + n];
    let mut components: Vec<Component> = Vec::new();
    let mut isolated_rows = Vec::new();
    let mut isolated_cols = Vec::new();
    for v in 0..m + n {
        if !touched[v] {
            if v < m {
                isolated_rows.push(v);
            } else {
                isolated_cols.push(v - m);
            }
            continue;
        }
        let root = uf.find(v);
        if slot_of_root[root] == usize::MAX {
            slot_of_root[root] = components.len();
            components.push(Component {
                rows: Vec::new(),
                cols: Vec::new(),
            });
        }
        let comp = &mut components[slot_of_root[root]];
        if v < m {
            comp.rows.push(v);
        } else {
            comp.cols.push(v - m);
        }
    }
    Ok(ComponentSet {
        components,
        isolated_rows,
        isolated_cols,
    })
}

/// Result of [`blockify`]: permutations in the same convention as a mask's,
/// so `p_row[i]` is the original row placed at block-ordered position `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blockified {
    pub p_row: Permutation,
    pub p_col: Permutation,
    pub pattern: BlockPattern,
}

/// Permutations that make `support` block diagonal.
///
/// Each component's rows and columns are laid out consecutively, in component
/// order, with isolated rows and columns appended after the last block. An
/// irreducible support yields a single block; this never fails on a valid
/// support.
pub fn blockify(m: usize, n: usize, support: &[(usize, usize)]) -> Result<Blockified> {
    let set = bipartite_components(m, n, support)?;
    let mut row_order = Vec::with_capacity(m);
    let mut col_order = Vec::with_capacity(n);
    let mut row_bounds = vec![0];
    let mut col_bounds = vec![0];
    for comp in &set.components {
        row_order.extend_from_slice(&comp.rows);
        col_order.extend_from_slice(&comp.cols);
        row_bounds.push(row_order.len());
        col_bounds.push(col_order.len());
    }
    row_order.extend_from_slice(&set.isolated_rows);
    col_order.extend_from_slice(&set.isolated_cols);
    Ok(Blockified {
        p_row: Permutation::from_vec(row_order)?,
        p_col: Permutation::from_vec(col_order)?,
        pattern: BlockPattern::from_bounds(m, n, row_bounds, col_bounds)?,
    })
}

/// True iff every support entry lies inside one of the pattern's blocks.
pub fn is_block_diagonal(m: usize, n: usize, support: &[(usize, usize)], pattern: &BlockPattern) -> bool {
    if pattern.rows() != m || pattern.cols() != n || check_support(m, n, support).is_err() {
        return false;
    }
    let row_blocks = pattern.row_blocks();
    let col_blocks = pattern.col_blocks();
    support
        .iter()
        .all(|&(r, c)| row_blocks[r].is_some() && row_blocks[r] == col_blocks[c])
}

/// Moves support entries from original coordinates into the block-ordered
/// coordinates of `blocks`.
pub fn permute_support(support: &[(usize, usize)], blocks: &Blockified) -> Vec<(usize, usize)> {
    let inv_row = blocks.p_row.invert();
    let inv_col = blocks.p_col.invert();
    support.iter().map(|&(r, c)| (inv_row[r], inv_col[c])).collect()
}
