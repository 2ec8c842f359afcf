//! Sparsity patterns for structured feedback gains.
//!
//! A mask `Phi` (`n_b x n_u`) marks which basis rows each control
//! coordinate may use. For column `p`, `S_p` keeps the admissible rows and
//! `S'_p = S_p^T` scatters a reduced column back with zeros elsewhere.

use nalgebra::{DMatrix, DVector};

use crate::error::{PiicError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StructureMask {
    pattern: Vec<Vec<bool>>,
    selections: Vec<Vec<usize>>,
}

impl StructureMask {
    /// From a dense `n_b x n_u` boolean pattern.
    pub fn from_pattern(pattern: Vec<Vec<bool>>) -> Result<Self> {
        let nb = pattern.len();
        if nb == 0 {
            return Err(PiicError::Validation("empty structure pattern".into()));
        }
        let nu = pattern[0].len();
        if pattern.iter().any(|r| r.len() != nu) {
            return Err(PiicError::Dimension("ragged structure pattern".into()));
        }
        let selections: Vec<Vec<usize>> = (0..nu)
            .map(|p| (0..nb).filter(|&i| pattern[i][p]).collect())
            .collect();
        if let Some(p) = selections.iter().position(|s| s.is_empty()) {
            return Err(PiicError::Validation(format!(
                "control coordinate {p} has no admissible basis rows"
            )));
        }
        Ok(Self {
            pattern,
            selections,
        })
    }

    /// Block pattern: basis rows are grouped by subsystem (`row_blocks`
    /// sizes), controls by subcontrol (`col_blocks` sizes); block `(i, j)`
    /// is all ones iff `(i, j)` is in `flow` (0-based).
    pub fn from_blocks(
        row_blocks: &[usize],
        col_blocks: &[usize],
        flow: &[(usize, usize)],
    ) -> Result<Self> {
        let nb: usize = row_blocks.iter().sum();
        let nu: usize = col_blocks.iter().sum();
        let mut pattern = vec![vec![false; nu]; nb];
        let row_off: Vec<usize> = offsets(row_blocks);
        let col_off: Vec<usize> = offsets(col_blocks);
        for &(i, j) in flow {
            if i >= row_blocks.len() || j >= col_blocks.len() {
                return Err(PiicError::Index(format!(
                    "information-flow pair ({i}, {j}) outside {}x{} blocks",
                    row_blocks.len(),
                    col_blocks.len()
                )));
            }
            for r in row_off[i]..row_off[i] + row_blocks[i] {
                for c in col_off[j]..col_off[j] + col_blocks[j] {
                    pattern[r][c] = true;
                }
            }
        }
        Self::from_pattern(pattern)
    }

    pub fn full(nb: usize, nu: usize) -> Self {
        Self::from_pattern(vec![vec![true; nu]; nb]).expect("non-empty full pattern")
    }

    pub fn basis_dim(&self) -> usize {
        self.pattern.len()
    }

    pub fn control_dim(&self) -> usize {
        self.selections.len()
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.pattern[row][col]
    }

    /// Admissible basis rows for control coordinate `p`.
    pub fn selection(&self, p: usize) -> &[usize] {
        &self.selections[p]
    }

    pub fn is_full(&self) -> bool {
        self.pattern.iter().all(|r| r.iter().all(|&b| b))
    }

    /// The 0/1 matrix `Phi`.
    pub fn phi(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.basis_dim(), self.control_dim(), |i, j| {
            if self.pattern[i][j] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `S_p` as an explicit `n~_b x n_b` selector.
    pub fn selector(&self, p: usize) -> DMatrix<f64> {
        let sel = &self.selections[p];
        let mut s = DMatrix::zeros(sel.len(), self.basis_dim());
        for (k, &i) in sel.iter().enumerate() {
            s[(k, i)] = 1.0;
        }
        s
    }

    /// `S_p v`.
    pub fn reduce(&self, p: usize, v: &DVector<f64>) -> DVector<f64> {
        let sel = &self.selections[p];
        DVector::from_iterator(sel.len(), sel.iter().map(|&i| v[i]))
    }

    /// `S_p M S_p^T` for a square `n_b x n_b` matrix.
    pub fn reduce_square(&self, p: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
        let sel = &self.selections[p];
        DMatrix::from_fn(sel.len(), sel.len(), |a, b| m[(sel[a], sel[b])])
    }

    /// `S'_p v~`: scatter back to length `n_b` with exact zeros elsewhere.
    pub fn embed(&self, p: usize, reduced: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.basis_dim());
        for (k, &i) in self.selections[p].iter().enumerate() {
            out[i] = reduced[k];
        }
        out
    }

    /// True when every masked-out entry of `theta` is exactly zero.
    pub fn is_respected_by(&self, theta: &DMatrix<f64>) -> bool {
        (0..self.basis_dim()).all(|i| {
            (0..self.control_dim()).all(|j| self.pattern[i][j] || theta[(i, j)].to_bits() == 0)
        })
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        out.push(acc);
        acc += s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Four scalar subsystems, three scalar controls:
    /// u1 <- {x1, x3}, u2 <- {x1, x2, x4}, u3 <- {x3, x4}.
    fn four_by_three() -> StructureMask {
        StructureMask::from_blocks(
            &[1, 1, 1, 1],
            &[1, 1, 1],
            &[(0, 0), (2, 0), (0, 1), (1, 1), (3, 1), (2, 2), (3, 2)],
        )
        .unwrap()
    }

    #[test]
    fn selector_for_first_control() {
        let m = four_by_three();
        let phi_t = DMatrix::from_row_slice(
            3,
            4,
            &[1., 0., 1., 0., 1., 1., 0., 1., 0., 0., 1., 1.],
        );
        assert_eq!(m.phi(), phi_t.transpose());
        let s1 = DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 0., 1., 0.]);
        assert_eq!(m.selector(0), s1);
        let theta1 = DVector::from_row_slice(&[11.0, 0.0, 31.0, 0.0]);
        assert_eq!(m.reduce(0, &theta1).as_slice(), &[11.0, 31.0]);
        assert_eq!(m.embed(0, &m.reduce(0, &theta1)), theta1);
        // S'_p = S_p^T
        let small = DVector::from_row_slice(&[2.0, 3.0]);
        assert_eq!(m.embed(0, &small), s1.transpose() * small);
    }

    #[test]
    fn embed_then_reduce_is_identity() {
        let m = four_by_three();
        for p in 0..3 {
            let n = m.selection(p).len();
            let v = DVector::from_fn(n, |i, _| i as f64 + 1.0);
            assert_eq!(m.reduce(p, &m.embed(p, &v)), v);
            let sel = m.selector(p);
            let proj = sel.transpose() * &sel;
            for i in 0..4 {
                assert_eq!(proj[(i, i)], if m.allows(i, p) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rejects_empty_column_and_bad_pairs() {
        assert!(StructureMask::from_blocks(&[2], &[1, 1], &[(0, 0)]).is_err());
        assert!(StructureMask::from_blocks(&[2], &[1], &[(1, 0)]).is_err());
        assert!(StructureMask::full(3, 2).is_full());
    }
}
