//! Symmetric sparse matrices over 3×3 node blocks and their Cholesky solver.
//!
//! The pattern stores both triangles of the matrix in compressed-column
//! form. Columns `3l`, `3l+1`, `3l+2` share the row structure of node `l`,
//! so entry `(3k+r, 3l+c)` lives at `col_ptr[3l+c] + 3·pos(k in nbrs(l)) + r`.

use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::LltError;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Side};

use crate::error::{Error, Result};

/// Relative residual accepted by [`CholeskySolver::solve`].
pub const RESIDUAL_TOL: f64 = 1e-12;

/// Maximum number of iterative refinement sweeps after the direct solve.
const REFINEMENT_STEPS: usize = 2;

/// Node-level adjacency expanded to a dof-level compressed-column pattern.
#[derive(Debug, Clone)]
pub struct SymPattern {
    num_nodes: usize,
    node_offsets: Vec<usize>,
    node_neighbors: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SymPattern {
    /// Builds the pattern from groups of mutually coupled nodes (every pair
    /// inside a group, including each node with itself, is a nonzero block).
    pub fn from_groups<'a>(num_nodes: usize, groups: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut adj: Vec<Vec<usize>> = (0..num_nodes).map(|v| vec![v]).collect();
        for group in groups {
            for &a in group {
                for &b in group {
                    adj[a].push(b);
                }
            }
        }
        let mut node_offsets = Vec::with_capacity(num_nodes + 1);
        let mut node_neighbors = Vec::new();
        node_offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            node_neighbors.extend_from_slice(list);
            node_offsets.push(node_neighbors.len());
        }

        let mut col_ptr = Vec::with_capacity(3 * num_nodes + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for l in 0..num_nodes {
            let nbrs = &node_neighbors[node_offsets[l]..node_offsets[l + 1]];
            for _ in 0..3 {
                for &k in nbrs {
                    row_idx.extend([3 * k, 3 * k + 1, 3 * k + 2]);
                }
                col_ptr.push(row_idx.len());
            }
        }
        SymPattern {
            num_nodes,
            node_offsets,
            node_neighbors,
            col_ptr,
            row_idx,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dim(&self) -> usize {
        3 * self.num_nodes
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.node_neighbors[self.node_offsets[node]..self.node_offsets[node + 1]]
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Offset of block `(k, l)` in column `3l`, or `None` outside the pattern.
    fn block_offset(&self, k: usize, l: usize) -> Option<usize> {
        let pos = self.neighbors(l).binary_search(&k).ok()?;
        Some(self.col_ptr[3 * l] + 3 * pos)
    }

    fn column_len(&self, l: usize) -> usize {
        3 * (self.node_offsets[l + 1] - self.node_offsets[l])
    }
}

/// Symmetric matrix with values on a shared [`SymPattern`].
#[derive(Debug, Clone)]
pub struct SymSparse {
    pattern: Arc<SymPattern>,
    values: Vec<f64>,
}

impl SymSparse {
    pub fn zeros(pattern: Arc<SymPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SymSparse { pattern, values }
    }

    pub fn identity(pattern: Arc<SymPattern>) -> Self {
        let mut m = SymSparse::zeros(pattern);
        for v in 0..m.pattern.num_nodes() {
            m.add_block(v, v, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        }
        m
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Adds `block` at block position `(k, l)`; `block[r][c]` is entry `(3k+r, 3l+c)`.
    ///
    /// Panics when the block lies outside the pattern.
    pub fn add_block(&mut self, k: usize, l: usize, block: &[[f64; 3]; 3]) {
        let base = self
            .pattern
            .block_offset(k, l)
            .unwrap_or_else(|| panic!("block ({k}, {l}) outside sparsity pattern"));
        let stride = self.pattern.column_len(l);
        for c in 0..3 {
            for r in 0..3 {
                self.values[base + c * stride + r] += block[r][c];
            }
        }
    }

    /// Adds `s·I₃` at block `(k, l)`.
    pub fn add_scaled_identity(&mut self, k: usize, l: usize, s: f64) {
        let base = self
            .pattern
            .block_offset(k, l)
            .unwrap_or_else(|| panic!("block ({k}, {l}) outside sparsity pattern"));
        let stride = self.pattern.column_len(l);
        for c in 0..3 {
            self.values[base + c * stride + c] += s;
        }
    }

    /// Entry `(i, j)`, zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (k, r, l, c) = (i / 3, i % 3, j / 3, j % 3);
        match self.pattern.block_offset(k, l) {
            Some(base) => self.values[base + c * self.pattern.column_len(l) + r],
            None => 0.0,
        }
    }

    /// `self ← a·self + b·other` on the same pattern.
    pub fn axpby(&mut self, a: f64, b: f64, other: &SymSparse) {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.values.len() == other.values.len());
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x = a * *x + b * y;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut out = vec![0.0; p.dim()];
        for (j, &xj) in x.iter().enumerate() {
            for idx in p.col_ptr[j]..p.col_ptr[j + 1] {
                out[p.row_idx[idx]] += self.values[idx] * xj;
            }
        }
        out
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let mut worst = 0.0f64;
        for j in 0..p.dim() {
            for idx in p.col_ptr[j]..p.col_ptr[j + 1] {
                let i = p.row_idx[idx];
                worst = worst.max((self.values[idx] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Dense copy, row-major (test and small-problem use).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut dense = vec![vec![0.0; n]; n];
        let p = &self.pattern;
        for j in 0..n {
            for idx in p.col_ptr[j]..p.col_ptr[j + 1] {
                dense[p.row_idx[idx]][j] = self.values[idx];
            }
        }
        dense
    }
}

/// A symmetric matrix together with a right-hand side.
#[derive(Debug, Clone)]
pub struct SparseSymSystem {
    pub matrix: SymSparse,
    pub rhs: Vec<f64>,
}

/// Sparse Cholesky solver; the symbolic analysis is computed once per pattern.
#[derive(Debug, Clone)]
pub struct CholeskySolver {
    pattern: Arc<SymPattern>,
    symbolic: SymbolicLlt<usize>,
}

impl CholeskySolver {
    pub fn new(pattern: Arc<SymPattern>) -> Result<Self> {
        let n = pattern.dim();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &pattern.col_ptr, None, &pattern.row_idx);
        let symbolic = SymbolicLlt::try_new(sym, Side::Lower)
            .map_err(|e| Error::InvalidArgument(format!("symbolic factorization failed: {e:?}")))?;
        Ok(CholeskySolver { pattern, symbolic })
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    /// Solves `A x = b`, checking positive definiteness and the residual.
    pub fn solve(&self, matrix: &SymSparse, rhs: &[f64]) -> Result<Vec<f64>> {
        let p = &self.pattern;
        let n = p.dim();
        if matrix.values.len() != p.nnz() || rhs.len() != n {
            return Err(Error::InvalidArgument("system does not match solver pattern".into()));
        }
        if matrix.values.iter().chain(rhs).any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &p.col_ptr, None, &p.row_idx);
        let mat = SparseColMatRef::new(sym, &matrix.values);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Lower).map_err(|e| match e {
            LltError::Numeric(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => {
                Error::NotSpd { pivot: index }
            }
            LltError::Generic(err) => Error::InvalidArgument(format!("factorization failed: {err:?}")),
        })?;

        let solve = |b: &mut [f64]| {
            let len = b.len();
            llt.solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(b, len, 1));
        };
        let rhs_norm = norm(rhs);
        let mut x = rhs.to_vec();
        solve(&mut x);
        for _ in 0..=REFINEMENT_STEPS {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular);
            }
            let ax = matrix.matvec(&x);
            let mut residual: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            if norm(&residual) <= RESIDUAL_TOL * rhs_norm || rhs_norm == 0.0 {
                return Ok(x);
            }
            solve(&mut residual);
            for (xi, di) in x.iter_mut().zip(&residual) {
                *xi += di;
            }
        }
        // Refinement stagnated at round-off; accept if close to the target.
        let ax = matrix.matvec(&x);
        let residual: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        if norm(&residual) <= 1e3 * RESIDUAL_TOL * rhs_norm {
            Ok(x)
        } else {
            Err(Error::Singular)
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-shot solve of a symmetric positive definite system.
pub fn solve_sym_system(system: &SparseSymSystem) -> Result<Vec<f64>> {
    CholeskySolver::new(system.matrix.pattern().clone())?.solve(&system.matrix, &system.rhs)
}
