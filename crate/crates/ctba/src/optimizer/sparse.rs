//! Block-sparse normal equations and the damped SPD solve.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix6, RowVector6, Vector6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::optimizer::ResidualRow;

/// `H = sum w J^T J`, `b = -sum w J^T e` in 6x6 block storage.
///
/// Only the upper triangle (block row <= block column) is stored; the full
/// matrix is mirrored when lowering to a scalar sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseNormalSystem {
    n_knots: usize,
    blocks: HashMap<(usize, usize), Matrix6<f64>>,
    gradient: Vec<Vector6<f64>>,
    fixed: Vec<bool>,
}

/// Per-row slots merged by knot index: a row touching a shared boundary
/// knot contributes a single combined 1x6 block for it.
fn merged_slots(row: &ResidualRow) -> Vec<(usize, RowVector6<f64>)> {
    let mut slots: Vec<(usize, RowVector6<f64>)> = Vec::with_capacity(4);
    for s in 0..4 {
        let mut j6 = RowVector6::zeros();
        j6.fixed_view_mut::<1, 3>(0, 0).copy_from(&row.jac.rot[s]);
        j6.fixed_view_mut::<1, 3>(0, 3).copy_from(&row.jac.trans[s]);
        let knot = row.knots[s];
        match slots.iter_mut().find(|(k, _)| *k == knot) {
            Some((_, existing)) => *existing += j6,
            None => slots.push((knot, j6)),
        }
    }
    slots
}

/// Accumulates residual rows into block-sparse normal equations.
///
/// Rows are folded in input order so the result is bit-reproducible.
/// Gauge-fixed knots are pinned: identity diagonal block, zero gradient,
/// and no coupling blocks.
pub fn assemble(rows: &[ResidualRow], n_knots: usize, fixed: &[bool]) -> SparseNormalSystem {
    assert_eq!(fixed.len(), n_knots);
    let mut system = SparseNormalSystem {
        n_knots,
        blocks: HashMap::new(),
        gradient: vec![Vector6::zeros(); n_knots],
        fixed: fixed.to_vec(),
    };
    for row in rows {
        let slots = merged_slots(row);
        let w = row.weight;
        for (ka, ja) in &slots {
            if fixed[*ka] {
                continue;
            }
            system.gradient[*ka] -= w * ja.transpose() * row.value;
            for (kb, jb) in &slots {
                if fixed[*kb] || ka > kb {
                    continue;
                }
                let block = w * ja.transpose() * jb;
                *system
                    .blocks
                    .entry((*ka, *kb))
                    .or_insert_with(Matrix6::zeros) += block;
            }
        }
    }
    for (k, &is_fixed) in fixed.iter().enumerate() {
        if is_fixed {
            system.blocks.insert((k, k), Matrix6::identity());
            system.gradient[k] = Vector6::zeros();
        }
    }
    system
}

impl SparseNormalSystem {
    pub fn n_knots(&self) -> usize {
        self.n_knots
    }

    pub fn gradient(&self) -> &[Vector6<f64>] {
        &self.gradient
    }

    pub fn is_fixed(&self, knot: usize) -> bool {
        self.fixed[knot]
    }

    /// Number of stored (upper-triangle) blocks.
    pub fn stored_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<Matrix6<f64>> {
        if i <= j {
            self.blocks.get(&(i, j)).copied()
        } else {
            self.blocks.get(&(j, i)).map(|b| b.transpose())
        }
    }

    /// Blocks in deterministic key order.
    pub fn sorted_blocks(&self) -> Vec<((usize, usize), Matrix6<f64>)> {
        let mut v: Vec<_> = self.blocks.iter().map(|(k, b)| (*k, *b)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    /// Dense reconstruction, mostly for oracles and small problems.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let dim = 6 * self.n_knots;
        let mut h = DMatrix::zeros(dim, dim);
        for (&(i, j), block) in &self.blocks {
            h.view_mut((6 * i, 6 * j), (6, 6)).copy_from(block);
            if i != j {
                h.view_mut((6 * j, 6 * i), (6, 6))
                    .copy_from(&block.transpose());
            }
        }
        let mut b = DVector::zeros(dim);
        for (k, g) in self.gradient.iter().enumerate() {
            b.rows_mut(6 * k, 6).copy_from(g);
        }
        (h, b)
    }

    /// Solves `(H + lambda * diag(H)) delta = b` with a sparse Cholesky
    /// factorization. Fixed knots receive a zero update; knots untouched by
    /// any residual are pinned for this solve.
    ///
    /// An indefinite or rank-deficient system reports [`Error::SolverFailure`]
    /// so the caller can escalate the damping.
    pub fn solve(&self, lambda: f64) -> Result<Vec<Vector6<f64>>> {
        assert!(lambda >= 0.0, "damping must be non-negative");
        let dim = 6 * self.n_knots;
        let mut coo = CooMatrix::new(dim, dim);
        // Diagonal entries first: damped, with zero scalars pinned to one so
        // unconstrained directions get a zero update instead of a failure.
        for k in 0..self.n_knots {
            let diag = self.blocks.get(&(k, k));
            for r in 0..6 {
                for c in 0..6 {
                    let v = diag.map_or(0.0, |b| b[(r, c)]);
                    let v = if r == c {
                        if v == 0.0 {
                            1.0
                        } else {
                            v * (1.0 + lambda)
                        }
                    } else {
                        v
                    };
                    if v != 0.0 {
                        coo.push(6 * k + r, 6 * k + c, v);
                    }
                }
            }
        }
        for (&(i, j), block) in &self.blocks {
            if i == j {
                continue;
            }
            for r in 0..6 {
                for c in 0..6 {
                    let v = block[(r, c)];
                    if v != 0.0 {
                        coo.push(6 * i + r, 6 * j + c, v);
                        coo.push(6 * j + c, 6 * i + r, v);
                    }
                }
            }
        }
        let csc = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&csc).map_err(|_| Error::SolverFailure {
            attempts: 1,
            lambda,
        })?;
        let mut rhs = DMatrix::zeros(dim, 1);
        for (k, g) in self.gradient.iter().enumerate() {
            rhs.view_mut((6 * k, 0), (6, 1)).copy_from(g);
        }
        let x = chol.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure {
                attempts: 1,
                lambda,
            });
        }
        let mut out = Vec::with_capacity(self.n_knots);
        for k in 0..self.n_knots {
            if self.fixed[k] {
                out.push(Vector6::zeros());
            } else {
                out.push(Vector6::from_iterator((0..6).map(|r| x[(6 * k + r, 0)])));
            }
        }
        Ok(out)
    }
}
