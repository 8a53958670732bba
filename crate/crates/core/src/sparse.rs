//! Compressed sparse column storage with a fixed pattern, used for stiffness matrices, and
//! direct solves backed by faer.

use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::prelude::*;

use crate::error::{Error, Result};

/// Square CSC matrix; row indices are sorted within each column.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// Zero matrix with the block pattern of `blocks` (pairs of coupled unknowns, given as
    /// sorted neighbour lists per block column) expanded to `b × b` dense blocks.
    pub fn from_block_pattern(neighbours: &[Vec<usize>], b: usize) -> Self {
        let nb = neighbours.len();
        let n = nb * b;
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for col in neighbours {
            for _ in 0..b {
                for &g in col {
                    for i in 0..b {
                        row_idx.push(b * g + i);
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        let values = vec![0.0; row_idx.len()];
        Self { n, col_ptr, row_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self { n, col_ptr: (0..=n).collect(), row_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_dense(a: &nalgebra::DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if a[(i, j)] != 0.0 {
                    row_idx.push(i);
                    values.push(a[(i, j)]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Position of entry `(row, col)` in the pattern.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()].binary_search(&row).ok().map(|k| range.start + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.values[k] * xj;
            }
        }
        y
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max |K_ij - K_ji|` relative to `max |K_ij|`.
    pub fn symmetry_error(&self) -> f64 {
        let mut err = 0.0f64;
        let mut max = 0.0f64;
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                max = max.max(self.values[k].abs());
                err = err.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        if max == 0.0 {
            0.0
        } else {
            err / max
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut a = nalgebra::DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                a[(self.row_idx[k], j)] += self.values[k];
            }
        }
        a
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        let symbolic = SymbolicSparseColMat::new_checked(self.n, self.n, self.col_ptr.clone(), None, self.row_idx.clone());
        SparseColMat::new(symbolic, self.values.clone())
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Factorisation kind actually used by [`Factor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factorisation {
    Cholesky,
    Lu,
}

enum FactorInner {
    Llt(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
}

/// Sparse direct factorisation: Cholesky when the matrix is positive definite, LU
/// otherwise. Solves apply one step of iterative refinement.
pub struct Factor<'a> {
    matrix: &'a CscMatrix,
    inner: FactorInner,
}

impl<'a> Factor<'a> {
    pub fn new(k: &'a CscMatrix) -> Result<Self> {
        let a = k.to_faer();
        if let Ok(llt) = a.sp_cholesky(faer::Side::Lower) {
            let f = Self { matrix: k, inner: FactorInner::Llt(llt) };
            // A numerically broken Cholesky (near-singular pivots) is retried with LU.
            let probe: Vec<f64> = (0..k.n).map(|i| 1.0 + (i % 7) as f64).collect();
            if f.solve(&probe).is_ok() {
                return Ok(f);
            }
        }
        let lu = a.sp_lu().map_err(|e| Error::Solver(format!("LU factorisation failed: {e:?}")))?;
        Ok(Self { matrix: k, inner: FactorInner::Lu(lu) })
    }

    pub fn kind(&self) -> Factorisation {
        match self.inner {
            FactorInner::Llt(_) => Factorisation::Cholesky,
            FactorInner::Lu(_) => Factorisation::Lu,
        }
    }

    fn raw(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Col::<f64>::from_fn(b.len(), |i| b[i]);
        let x = match &self.inner {
            FactorInner::Llt(f) => f.solve(&rhs),
            FactorInner::Lu(f) => f.solve(&rhs),
        };
        (0..b.len()).map(|i| x[i]).collect()
    }

    /// Solves `K x = f`; fails when the relative residual exceeds `1e-6`.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let k = self.matrix;
        if f.len() != k.n {
            return Err(Error::Solver(format!("right-hand side of length {} for a system of size {}", f.len(), k.n)));
        }
        let fnorm = norm(f);
        if fnorm == 0.0 {
            return Ok(vec![0.0; k.n]);
        }
        let mut x = self.raw(f);
        let r: Vec<f64> = k.mul_vec(&x).iter().zip(f).map(|(a, b)| b - a).collect();
        let dx = self.raw(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("singular system".into()));
        }
        let rel = norm(&k.mul_vec(&x).iter().zip(f).map(|(a, b)| a - b).collect::<Vec<_>>()) / fnorm;
        if rel > 1e-6 {
            return Err(Error::Solver(format!("singular or ill-conditioned system, relative residual {rel:e}")));
        }
        Ok(x)
    }
}

/// Solves `K x = f` with a fresh factorisation.
pub fn solve(k: &CscMatrix, f: &[f64]) -> Result<(Vec<f64>, Factorisation)> {
    if f.len() != k.n {
        return Err(Error::Solver(format!("right-hand side of length {} for a system of size {}", f.len(), k.n)));
    }
    let fac = Factor::new(k)?;
    Ok((fac.solve(f)?, fac.kind()))
}
