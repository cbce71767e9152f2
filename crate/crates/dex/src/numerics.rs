//! Dense linear-algebra substrate: row-major matrices, symmetric matrices
//! with an exact-by-construction symmetric representation, a Cholesky
//! factorization for sampling, and stable reductions.
//!
//! Everything is `f64`. The tolerances downstream (1e-9 golden values,
//! finite-difference gradient checks at 1e-6 relative error) leave no room
//! for single precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Rejects shape mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "matrix buffer has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(n, cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// self += scale * other (same shape).
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean distance between two equal-length slices.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Storage mode of a symmetric matrix: full (packed lower triangle) or
/// diagonal-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymMode {
    Full,
    Diagonal,
}

/// Symmetric matrix. The full mode stores only the lower triangle packed
/// row by row, so symmetry holds exactly by construction; the diagonal mode
/// stores just the diagonal and treats every off-diagonal entry as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    mode: SymMode,
    /// Full: dim*(dim+1)/2 packed lower-triangle entries; Diagonal: dim entries.
    data: Vec<f64>,
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    // requires j <= i
    i * (i + 1) / 2 + j
}

impl SymMatrix {
    pub fn zeros(dim: usize, mode: SymMode) -> Self {
        let len = match mode {
            SymMode::Full => dim * (dim + 1) / 2,
            SymMode::Diagonal => dim,
        };
        SymMatrix {
            dim,
            mode,
            data: vec![0.0; len],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = SymMatrix::zeros(dim, SymMode::Full);
        for i in 0..dim {
            s.data[tri_index(i, i)] = 1.0;
        }
        s
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix {
            dim: diag.len(),
            mode: SymMode::Diagonal,
            data: diag.to_vec(),
        }
    }

    /// Build a full-mode matrix from `rows` interpreted as a symmetric
    /// matrix; only the lower triangle is read.
    pub fn from_lower(dim: usize, entries: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                data.push(entries(i, j));
            }
        }
        SymMatrix {
            dim,
            mode: SymMode::Full,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> SymMode {
        self.mode
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        match self.mode {
            SymMode::Full => self.data[tri_index(i, j)],
            SymMode::Diagonal => {
                if i == j {
                    self.data[i]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        match self.mode {
            SymMode::Full => self.data[tri_index(i, j)] = v,
            SymMode::Diagonal => {
                assert_eq!(i, j, "off-diagonal write to a diagonal SymMatrix");
                self.data[i] = v;
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Number of stored scalars (used by the memory accounting).
    pub fn stored_scalars(&self) -> usize {
        self.data.len()
    }

    /// self += scale * x xᵀ. In diagonal mode only the diagonal of the
    /// outer product is accumulated.
    pub fn add_scaled_outer(&mut self, x: &[f64], scale: f64) {
        debug_assert_eq!(x.len(), self.dim);
        match self.mode {
            SymMode::Full => {
                for i in 0..self.dim {
                    let xi = x[i];
                    let base = i * (i + 1) / 2;
                    for j in 0..=i {
                        self.data[base + j] += scale * xi * x[j];
                    }
                }
            }
            SymMode::Diagonal => {
                for i in 0..self.dim {
                    self.data[i] += scale * x[i] * x[i];
                }
            }
        }
    }

    /// self += scale * other (same dim and mode).
    pub fn add_scaled(&mut self, other: &SymMatrix, scale: f64) {
        debug_assert_eq!(self.dim, other.dim);
        debug_assert_eq!(self.mode, other.mode);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        let mut out = self.clone();
        for a in &mut out.data {
            *a *= s;
        }
        out
    }

    /// y = S x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        match self.mode {
            SymMode::Diagonal => self.data.iter().zip(x).map(|(d, v)| d * v).collect(),
            SymMode::Full => {
                let mut y = vec![0.0; self.dim];
                for i in 0..self.dim {
                    let base = i * (i + 1) / 2;
                    let mut acc = 0.0;
                    for j in 0..i {
                        let s = self.data[base + j];
                        acc += s * x[j];
                        y[j] += s * x[i];
                    }
                    acc += self.data[base + i] * x[i];
                    y[i] += acc;
                }
                y
            }
        }
    }

    /// Frobenius norm, accounting for the mirrored off-diagonal entries.
    pub fn frobenius_norm(&self) -> f64 {
        match self.mode {
            SymMode::Diagonal => self.data.iter().map(|x| x * x).sum::<f64>().sqrt(),
            SymMode::Full => {
                let mut acc = 0.0;
                for i in 0..self.dim {
                    let base = i * (i + 1) / 2;
                    for j in 0..=i {
                        let v = self.data[base + j];
                        acc += if i == j { v * v } else { 2.0 * v * v };
                    }
                }
                acc.sqrt()
            }
        }
    }
}

/// uᵀ S v. Diagonal mode runs in O(dim); full mode walks the packed
/// triangle once.
pub fn quadratic_form(u: &[f64], s: &SymMatrix, v: &[f64]) -> Result<f64> {
    if u.len() != s.dim() || v.len() != s.dim() {
        return Err(Error::DimMismatch(format!(
            "quadratic form: |u|={}, |v|={}, S is {}x{}",
            u.len(),
            v.len(),
            s.dim(),
            s.dim()
        )));
    }
    Ok(match s.mode() {
        SymMode::Diagonal => u
            .iter()
            .zip(v)
            .zip(s.data.iter())
            .map(|((ui, vi), d)| ui * d * vi)
            .sum(),
        SymMode::Full => {
            let mut acc = 0.0;
            for i in 0..s.dim {
                let base = i * (i + 1) / 2;
                for j in 0..i {
                    // S_ij contributes u_i S v_j and u_j S v_i
                    acc += s.data[base + j] * (u[i] * v[j] + u[j] * v[i]);
                }
                acc += s.data[base + i] * u[i] * v[i];
            }
            acc
        }
    })
}

/// Jitter added to the diagonal before a Cholesky factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    None,
    Fixed(f64),
    /// Scale-aware default: 1e-9 * trace(S) / dim.
    Auto,
}

impl Jitter {
    pub fn resolve(self, s: &SymMatrix) -> f64 {
        match self {
            Jitter::None => 0.0,
            Jitter::Fixed(j) => j,
            Jitter::Auto => {
                if s.dim() == 0 {
                    0.0
                } else {
                    1e-9 * s.trace() / s.dim() as f64
                }
            }
        }
    }
}

/// Lower-triangular Cholesky factor of S + jitter·I.
///
/// For a diagonal matrix the factor is the elementwise square root. A
/// non-positive pivot aborts with the failing index.
#[derive(Debug, Clone)]
pub struct CholFactor {
    dim: usize,
    mode: SymMode,
    /// Full: packed lower triangle of L; Diagonal: sqrt of the diagonal.
    data: Vec<f64>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            return 0.0;
        }
        match self.mode {
            SymMode::Full => self.data[tri_index(i, j)],
            SymMode::Diagonal => {
                if i == j {
                    self.data[i]
                } else {
                    0.0
                }
            }
        }
    }

    /// y = L z.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.dim);
        match self.mode {
            SymMode::Diagonal => self.data.iter().zip(z).map(|(l, v)| l * v).collect(),
            SymMode::Full => {
                let mut y = vec![0.0; self.dim];
                for i in 0..self.dim {
                    let base = i * (i + 1) / 2;
                    y[i] = (0..=i).map(|j| self.data[base + j] * z[j]).sum();
                }
                y
            }
        }
    }

    /// L Lᵀ as a full symmetric matrix (used by reconstruction tests).
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_lower(self.dim, |i, j| {
            (0..=j.min(i)).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }
}

/// Cholesky factorization of S + jitter·I.
pub fn cholesky(s: &SymMatrix, jitter: Jitter) -> Result<CholFactor> {
    let dim = s.dim();
    let eps = jitter.resolve(s);
    match s.mode() {
        SymMode::Diagonal => {
            let mut data = Vec::with_capacity(dim);
            for (i, &d) in s.data.iter().enumerate() {
                let p = d + eps;
                if p <= 0.0 {
                    return Err(Error::NotPositiveDefinite { index: i, value: p });
                }
                data.push(p.sqrt());
            }
            Ok(CholFactor {
                dim,
                mode: SymMode::Diagonal,
                data,
            })
        }
        SymMode::Full => {
            let mut l = vec![0.0; dim * (dim + 1) / 2];
            for i in 0..dim {
                for j in 0..=i {
                    let mut sum = s.get(i, j);
                    if i == j {
                        sum += eps;
                    }
                    for k in 0..j {
                        sum -= l[tri_index(i, k)] * l[tri_index(j, k)];
                    }
                    if i == j {
                        if sum <= 0.0 {
                            return Err(Error::NotPositiveDefinite {
                                index: i,
                                value: sum,
                            });
                        }
                        l[tri_index(i, j)] = sum.sqrt();
                    } else {
                        l[tri_index(i, j)] = sum / l[tri_index(j, j)];
                    }
                }
            }
            Ok(CholFactor {
                dim,
                mode: SymMode::Full,
                data: l,
            })
        }
    }
}

/// log Σ exp(x_k) with max subtraction; never overflows for |x| ≤ 700.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("log_sum_exp over an empty sequence"));
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    Ok(m + sum.ln())
}
