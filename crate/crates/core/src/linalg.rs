//! Sparse assembly of the discrete operator on interior unknowns and a banded
//! LU factorization with residual-driven iterative refinement.
//!
//! Unknowns are numbered in lattice order, so the 9-point stencil yields a
//! band of half-width about one lattice row. `-L` is an M-matrix for
//! monotone stencils, which admits LU without pivoting.

use crate::calculus::stencil_weights;
use crate::error::{Error, Result};
use crate::field::SymMat;
use crate::geometry::Grid;

/// Target relative residual `|b - Ax|_inf / |b|_inf` of every linear solve.
pub const LINEAR_TOL: f64 = 1e-10;
const REFINE_TARGET: f64 = 1e-13;
const MAX_REFINE: usize = 6;

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

/// Assembles `a_ij D_ij + diag(shift)` restricted to interior unknowns with
/// zero Dirichlet data. `coeff(idx)` gives the matrix used at the `idx`-th
/// interior node.
pub fn assemble(
    grid: &Grid,
    coeff: impl Fn(usize) -> SymMat,
    shift: impl Fn(usize) -> f64,
) -> SparseMatrix {
    let n = grid.interior_len();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(9 * n);
    let mut vals = Vec::with_capacity(9 * n);
    row_ptr.push(0);
    for idx in 0..n {
        let w = stencil_weights(&coeff(idx), grid.h(), grid.dim());
        let st = grid.stencil(idx);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(9);
        for k in 0..9 {
            if w[k] == 0.0 || st[k] == crate::geometry::NO_SLOT {
                continue;
            }
            if let Some(col) = grid.unknown_index(st[k]) {
                let v = if col == idx { w[k] + shift(idx) } else { w[k] };
                entries.push((col, v));
            }
        }
        if !entries.iter().any(|&(c, _)| c == idx) {
            entries.push((idx, shift(idx)));
        }
        entries.sort_by_key(|e| e.0);
        for (c, v) in entries {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    SparseMatrix {
        n,
        row_ptr,
        cols,
        vals,
    }
}

/// LU factors stored in a dense band of half-width `bw`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n();
        let bw = a.bandwidth();
        let width = 2 * bw + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                data[i * width + (j + bw - i)] = v;
            }
        }
        for k in 0..n {
            let pivot = data[k * width + bw];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::LinearSolve { trace: vec![f64::NAN] });
            }
            let last = (k + bw).min(n - 1);
            let row_k_start = k * width + bw + 1;
            let row_len = last - k;
            for i in k + 1..=last {
                let pos = i * width + (k + bw - i);
                let l = data[pos] / pivot;
                if l == 0.0 {
                    continue;
                }
                data[pos] = l;
                // row i entries for columns k+1..=last are contiguous
                let start_i = pos + 1;
                let (head, tail) = data.split_at_mut(start_i);
                let row_k = &head[row_k_start..row_k_start + row_len];
                for (dst, &src) in tail[..row_len].iter_mut().zip(row_k) {
                    *dst -= l * src;
                }
            }
        }
        Ok(BandedLu { n, bw, data })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for i in 0..n {
            let first = i.saturating_sub(bw);
            let mut acc = x[i];
            for j in first..i {
                acc -= self.data[i * width + (j + bw - i)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let last = (i + bw).min(n - 1);
            let mut acc = x[i];
            for j in i + 1..=last {
                acc -= self.data[i * width + (j + bw - i)] * x[j];
            }
            x[i] = acc / self.data[i * width + bw];
        }
    }
}

/// A factorized system together with its matrix, for refinement.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    matrix: SparseMatrix,
    lu: BandedLu,
}

impl LinearSolver {
    pub fn new(matrix: SparseMatrix) -> Result<Self> {
        let lu = BandedLu::factor(&matrix)?;
        Ok(LinearSolver { matrix, lu })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Solves `A x = b`, refining until the relative max-norm residual is
    /// below [`LINEAR_TOL`].
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let b_norm = max_abs(b);
        let mut x = b.to_vec();
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(x);
        }
        self.lu.solve_in_place(&mut x);
        let mut trace = Vec::new();
        for _ in 0..MAX_REFINE {
            let ax = self.matrix.mul_vec(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let rel = max_abs(&r) / b_norm;
            trace.push(rel);
            if !rel.is_finite() {
                break;
            }
            if rel <= REFINE_TARGET {
                return Ok(x);
            }
            self.lu.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
        match trace.iter().copied().fold(f64::INFINITY, f64::min) {
            best if best <= LINEAR_TOL => Ok(x),
            _ => Err(Error::LinearSolve { trace }),
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
