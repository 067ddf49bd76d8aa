//! Dense vectors and matrices used by the problem oracles.
//!
//! Everything here is row-major and summed in index order so that repeated
//! calls with the same inputs are bitwise reproducible.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A dense parameter vector `w` in R^p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(entries: Vec<f64>) -> Self {
        Weights(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        Weights(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Weights) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn dist_sq(&self, other: &Weights) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `self + alpha * x`
    pub fn add_scaled(&self, alpha: f64, x: &Weights) -> Weights {
        Weights(self.0.iter().zip(&x.0).map(|(a, b)| a + alpha * b).collect())
    }

    /// `self - x`
    pub fn sub(&self, x: &Weights) -> Weights {
        Weights(self.0.iter().zip(&x.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, x: &Weights) -> Weights {
        Weights(self.0.iter().zip(&x.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, alpha: f64) -> Weights {
        Weights(self.0.iter().map(|a| alpha * a).collect())
    }

    /// In-place `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &Weights) {
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(invalid(format!(
                "dimension mismatch: expected {dim}, got {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Weights {
    fn from(v: Vec<f64>) -> Self {
        Weights(v)
    }
}

impl From<&[f64]> for Weights {
    fn from(v: &[f64]) -> Self {
        Weights(v.to_vec())
    }
}

impl Deref for Weights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Weights {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major dense matrix. Deserializes from a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(invalid("matrix rows have unequal lengths"));
        }
        Ok(DenseMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Weights {
        Weights((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn matvec(&self, x: &[f64]) -> Weights {
        Weights((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self^T x`
    pub fn matvec_t(&self, x: &[f64]) -> Weights {
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Weights(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| alpha * a).collect(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| *x == 0.0)
    }

    /// Solves `self x = b` by LU factorization with partial pivoting.
    /// Returns `None` when the matrix is numerically singular.
    pub fn solve(&self, b: &[f64]) -> Option<Weights> {
        if !self.is_square() || b.len() != self.rows {
            return None;
        }
        let n = self.rows;
        let a = nalgebra::DMatrix::from_row_slice(n, n, &self.data);
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lu = a.lu();
        let u = lu.u();
        let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if n == 0 || !(min_pivot > 1e-13 * scale.max(1e-300)) {
            return None;
        }
        let x = lu.solve(&nalgebra::DVector::from_column_slice(b))?;
        Some(Weights(x.iter().copied().collect()))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        DenseMatrix::from_rows(rows)
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

/// Relative tolerance on successive eigenvalue estimates.
pub const POWER_ITERATION_TOL: f64 = 1e-10;
/// Iteration cap for [`power_iteration`].
pub const POWER_ITERATION_MAX: usize = 10_000;

/// Largest eigenvalue of a symmetric positive semidefinite operator.
///
/// Starts from the fixed unit vector `1/sqrt(p)` so results are deterministic.
/// Stops once the Rayleigh quotient changes by less than
/// [`POWER_ITERATION_TOL`] relative to its magnitude.
pub fn power_iteration<F>(dim: usize, apply: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Weights,
{
    if dim == 0 {
        return Err(invalid("power iteration on an empty operator"));
    }
    let mut x = Weights(vec![1.0 / (dim as f64).sqrt(); dim]);
    let mut estimate = 0.0f64;
    for k in 1..=POWER_ITERATION_MAX {
        let y = apply(&x);
        let rayleigh = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            // start vector in the null space: retry once from a generic direction
            if k == 1 {
                x = Weights((0..dim).map(|i| 1.0 + i as f64).collect());
                let n = x.norm();
                x = x.scale(1.0 / n);
                continue;
            }
            return Ok(0.0);
        }
        let converged = (rayleigh - estimate).abs() <= POWER_ITERATION_TOL * rayleigh.abs().max(1e-300);
        estimate = rayleigh;
        x = y.scale(1.0 / norm);
        if converged && k > 1 {
            return Ok(estimate);
        }
    }
    Err(Error::NumericFailure {
        what: "power iteration".into(),
        iterations: POWER_ITERATION_MAX,
    })
}
