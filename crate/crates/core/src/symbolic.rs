//! Symbolic computation of the target sparsity pattern for level-based
//! incomplete Cholesky, IC(l).
//!
//! Levels follow the standard sum-plus-one rule: structural entries have
//! level 0, and a fill entry created at elimination step k gets
//! `level(i,j) = min(level(i,j), level(i,k) + level(j,k) + 1)`.
//! Entries whose final level exceeds `l` are excluded, and excluded entries
//! do not participate in later updates.

use std::collections::BTreeMap;

use crate::sparsecore::LowerStructure;

/// The target pattern S{L}: lower-triangular CSC structure with a fill level
/// per entry. The diagonal is present in every column (level 0, stored
/// first), row indices are sorted, and every level is at most the requested
/// fill bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillPattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub level: Vec<u32>,
}

impl FillPattern {
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_ptr[j]..self.col_ptr[j + 1]
    }

    /// True if (i, j) with i >= j is in the pattern.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let r = self.col_range(j);
        self.row_idx[r].binary_search(&i).is_ok()
    }
}

/// Compute the level-based fill pattern of a lower-triangular structure.
///
/// The structure must carry a full diagonal; symmetry is implied. `level_cap`
/// is the maximum admitted fill level l; `level_cap = 0` reproduces the input
/// structure exactly.
pub fn level_pattern<S: LowerStructure>(structure: &S, level_cap: u32) -> FillPattern {
    let n = structure.dim();
    let col_ptr_in = structure.col_ptr();
    let row_idx_in = structure.row_idx();

    // Row-by-row closure. For row i the working map holds (column -> level)
    // for all candidate entries with column <= i; kept columns (level <=
    // cap) are then appended to their column lists so later rows can merge
    // against them. `cols[k]` lists kept (row, level) pairs of column k in
    // increasing row order.
    let mut cols: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];

    // Row view of the input structure (entries (i,j), j <= i, of row i).
    let mut row_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        for idx in col_ptr_in[j]..col_ptr_in[j + 1] {
            let i = row_idx_in[idx];
            row_lists[i].push(j);
        }
    }

    let mut out_cols: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];

    let mut working: BTreeMap<usize, u32> = BTreeMap::new();
    for i in 0..n {
        working.clear();
        for &j in &row_lists[i] {
            working.insert(j, 0);
        }
        debug_assert!(row_lists[i].contains(&i), "missing diagonal in row {i}");

        // Walk the working row in increasing column order; merges may insert
        // columns ahead of the cursor but never behind it.
        let mut k_cursor = 0usize;
        loop {
            let Some((&k, &lev_ik)) = working.range(k_cursor..).next() else {
                break;
            };
            if k >= i {
                break;
            }
            k_cursor = k + 1;
            if lev_ik > level_cap {
                continue;
            }
            // Fill (i, m) from the pair (i, k), (m, k) for k < m <= i.
            for &(m, lev_mk) in &cols[k] {
                if m > i {
                    break;
                }
                let cand = lev_ik + lev_mk + 1;
                working
                    .entry(m)
                    .and_modify(|l| *l = (*l).min(cand))
                    .or_insert(cand);
            }
        }

        for (&j, &lev) in working.iter() {
            if lev <= level_cap {
                out_cols[j].push((i, lev));
                if j < i {
                    cols[j].push((i, lev));
                }
            }
        }
    }

    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut level = Vec::new();
    col_ptr.push(0);
    for j in 0..n {
        for &(i, lev) in &out_cols[j] {
            row_idx.push(i);
            level.push(lev);
        }
        col_ptr.push(row_idx.len());
    }
    FillPattern {
        n,
        col_ptr,
        row_idx,
        level,
    }
}
