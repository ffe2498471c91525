//! Dense/sparse real matrices and the handful of kernels the solvers need.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_len, Error, Result};

/// Default relative tolerance for spectral estimates.
pub const SPECTRAL_TOL: f64 = 1e-8;
/// Target relative residual of [`solve_spd`].
pub const SOLVE_TOL: f64 = 1e-10;
/// Iteration cap for the power-iteration family.
pub const MAX_POWER_ITERS: usize = 20_000;
/// Largest side for which spectra come from a dense eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 64;

pub mod vecops {
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm_sq(a: &[f64]) -> f64 {
        dot(a, a)
    }

    pub fn norm(a: &[f64]) -> f64 {
        norm_sq(a).sqrt()
    }

    pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// y += alpha * x
    pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn scale(alpha: f64, a: &[f64]) -> Vec<f64> {
        a.iter().map(|x| alpha * x).collect()
    }

    pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(a: &[f64]) -> bool {
        a.iter().all(|v| v.is_finite())
    }
}

/// Row-major dense storage.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("dense matrix storage", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// out += alpha * M v, no dimension checks.
    pub fn mul_add_into(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o += alpha * vecops::dot(self.row(i), v);
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_add_into(1.0, v, &mut out);
        out
    }

    /// vᵀ M v for square M.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        (0..self.rows).map(|i| v[i] * vecops::dot(self.row(i), v)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Compressed sparse rows, compiled from coordinate triplets.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::InvalidProblem(format!(
                    "triplet ({i}, {j}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|i| self.row_entries(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }
}

/// A real `rows × cols` matrix in dense or sparse storage.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum RealMatrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl RealMatrix {
    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        DenseMatrix::new(rows, cols, data).map(RealMatrix::Dense)
    }

    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        CsrMatrix::from_triplets(rows, cols, triplets).map(RealMatrix::Sparse)
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, alpha: f64) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, alpha)).collect();
        Self::from_triplets(n, n, &t).expect("diagonal triplets are in range")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_triplets(rows, cols, &[]).expect("empty triplets")
    }

    pub fn diag(d: &[f64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t).expect("diagonal triplets are in range")
    }

    pub fn rows(&self) -> usize {
        match self {
            RealMatrix::Dense(m) => m.rows,
            RealMatrix::Sparse(m) => m.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            RealMatrix::Dense(m) => m.cols,
            RealMatrix::Sparse(m) => m.cols,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match self {
            RealMatrix::Dense(m) => (0..m.rows)
                .flat_map(|i| (0..m.cols).map(move |j| (i, j, m.get(i, j))))
                .filter(|t| t.2 != 0.0)
                .collect(),
            RealMatrix::Sparse(m) => m.triplets(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            RealMatrix::Dense(m) => m.clone(),
            RealMatrix::Sparse(m) => {
                let mut d = DenseMatrix::zeros(m.rows, m.cols);
                for (i, j, v) in m.triplets() {
                    d.set(i, j, v);
                }
                d
            }
        }
    }

    pub fn to_sparse(&self) -> RealMatrix {
        RealMatrix::from_triplets(self.rows(), self.cols(), &self.triplets())
            .expect("entries of an existing matrix are in range")
    }

    pub fn transpose(&self) -> RealMatrix {
        match self {
            RealMatrix::Dense(m) => RealMatrix::Dense(DenseMatrix::from_fn(m.cols, m.rows, |i, j| m.get(j, i))),
            RealMatrix::Sparse(m) => {
                let t: Vec<_> = m.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
                RealMatrix::from_triplets(m.cols, m.rows, &t).expect("transposed entries are in range")
            }
        }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&RealMatrix]) -> Result<RealMatrix> {
        let cols = blocks.first().map_or(0, |b| b.cols());
        let mut triplets = Vec::new();
        let mut offset = 0;
        for b in blocks {
            check_len("vstack columns", cols, b.cols())?;
            triplets.extend(b.triplets().into_iter().map(|(i, j, v)| (i + offset, j, v)));
            offset += b.rows();
        }
        RealMatrix::from_triplets(offset, cols, &triplets)
    }

    /// True when the matrix is exactly `-I`.
    pub fn is_neg_identity(&self) -> bool {
        self.rows() == self.cols() && {
            let t = self.triplets();
            t.len() == self.rows() && t.iter().all(|&(i, j, v)| i == j && v == -1.0)
        }
    }

    /// out += alpha * M v, no dimension checks.
    pub fn mul_add_into(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        match self {
            RealMatrix::Dense(m) => m.mul_add_into(alpha, v, out),
            RealMatrix::Sparse(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let s: f64 = m.row_entries(i).map(|(j, a)| a * v[j]).sum();
                    *o += alpha * s;
                }
            }
        }
    }

    /// out += alpha * Mᵀ v, no dimension checks.
    pub fn tr_mul_add_into(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        match self {
            RealMatrix::Dense(m) => {
                for (i, &vi) in v.iter().enumerate() {
                    vecops::axpy(alpha * vi, m.row(i), out);
                }
            }
            RealMatrix::Sparse(m) => {
                for (i, &vi) in v.iter().enumerate() {
                    for (j, a) in m.row_entries(i) {
                        out[j] += alpha * a * vi;
                    }
                }
            }
        }
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("mat_vec operand", self.cols(), v.len())?;
        let mut out = vec![0.0; self.rows()];
        self.mul_add_into(1.0, v, &mut out);
        Ok(out)
    }

    pub fn tr_mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("transpose mat_vec operand", self.rows(), v.len())?;
        let mut out = vec![0.0; self.cols()];
        self.tr_mul_add_into(1.0, v, &mut out);
        Ok(out)
    }

    /// Dense MᵀM.
    pub fn gram_cols(&self) -> DenseMatrix {
        let n = self.cols();
        let mut g = DenseMatrix::zeros(n, n);
        for i in 0..self.rows() {
            let row: Vec<(usize, f64)> = match self {
                RealMatrix::Dense(m) => m.row(i).iter().copied().enumerate().filter(|e| e.1 != 0.0).collect(),
                RealMatrix::Sparse(m) => m.row_entries(i).collect(),
            };
            for &(j, a) in &row {
                for &(k, b) in &row {
                    g.data[j * n + k] += a * b;
                }
            }
        }
        g
    }

    /// Dense MMᵀ.
    pub fn gram_rows(&self) -> DenseMatrix {
        self.transpose().gram_cols()
    }
}

/// Free-function form of [`RealMatrix::mat_vec`].
pub fn mat_vec(m: &RealMatrix, v: &[f64]) -> Result<Vec<f64>> {
    m.mat_vec(v)
}

/// Extreme eigenvalues of `AAᵀ` and the operator norm of `AᵀA`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralSummary {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub op_norm_gram: f64,
}

/// All eigenvalues of a symmetric dense matrix, ascending.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(m.to_nalgebra());
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Largest eigenvalue of a PSD operator by power iteration.
fn power_iteration(
    dim: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iters: usize,
    what: &'static str,
) -> Result<f64> {
    if dim == 0 {
        return Ok(0.0);
    }
    // deterministic start with all components excited
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.1 * ((i as f64) * 0.618).sin()).collect();
    let n0 = vecops::norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let w = apply(&v);
        let next = vecops::dot(&v, &w);
        let nw = vecops::norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NoConvergence {
        what,
        iterations: max_iters,
        best: lambda,
    })
}

/// σ_min/σ_max of `AAᵀ` and `‖AᵀA‖₂`.
///
/// When the smaller side is at most [`DENSE_EIGEN_LIMIT`] the spectrum comes
/// from a dense eigensolve of the smaller Gram matrix; otherwise σ_max uses
/// power iteration and σ_min shifted power iteration. A tall `A` has a
/// singular `AAᵀ`, so σ_min is exactly zero there.
pub fn spectral_extremes(m: &RealMatrix, tol: f64, max_iters: usize) -> Result<SpectralSummary> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidProblem("spectral_extremes on an empty matrix".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("spectral tolerance must be positive, got {tol}")));
    }
    let (rows, cols) = (m.rows(), m.cols());
    let tall = rows > cols;
    if rows.min(cols) <= DENSE_EIGEN_LIMIT {
        let gram = if tall { m.gram_cols() } else { m.gram_rows() };
        let eig = symmetric_eigenvalues(&gram);
        let max = eig.last().copied().unwrap_or(0.0).max(0.0);
        let min = if tall { 0.0 } else { eig[0].max(0.0) };
        return Ok(SpectralSummary {
            sigma_min: min,
            sigma_max: max,
            op_norm_gram: max,
        });
    }

    let mt = m.transpose();
    let apply_aat = |v: &[f64]| {
        let t = mt.mat_vec(v).expect("dims");
        m.mat_vec(&t).expect("dims")
    };
    let apply_ata = |v: &[f64]| {
        let t = m.mat_vec(v).expect("dims");
        mt.mat_vec(&t).expect("dims")
    };
    let sigma_max = if tall {
        power_iteration(cols, apply_ata, tol, max_iters, "power iteration for sigma_max")?
    } else {
        power_iteration(rows, apply_aat, tol, max_iters, "power iteration for sigma_max")?
    };
    let sigma_min = if tall {
        0.0
    } else {
        let shift = sigma_max;
        let shifted = |v: &[f64]| {
            let w = apply_aat(v);
            v.iter().zip(w).map(|(a, b)| shift * a - b).collect::<Vec<_>>()
        };
        let top = power_iteration(rows, shifted, tol, max_iters, "shifted power iteration for sigma_min")
            .map_err(|e| match e {
                Error::NoConvergence { what, iterations, best } => Error::NoConvergence {
                    what,
                    iterations,
                    best: (shift - best).max(0.0),
                },
                other => other,
            })?;
        (shift - top).max(0.0)
    };
    Ok(SpectralSummary {
        sigma_min,
        sigma_max,
        op_norm_gram: sigma_max,
    })
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    source: DenseMatrix,
}

impl Cholesky {
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        check_len("cholesky (square)", m.rows, m.cols)?;
        let n = m.rows;
        let scale = m.data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        if m.max_asymmetry() > 1e-10 * scale {
            return Err(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN });
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self {
            n,
            l,
            source: m.clone(),
        })
    }

    fn substitute(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    /// Solves with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("cholesky right-hand side", self.n, b.len())?;
        let mut x = self.substitute(b);
        let r: Vec<f64> = vecops::sub(b, &self.source.mul_vec(&x));
        let dx = self.substitute(&r);
        vecops::axpy(1.0, &dx, &mut x);
        Ok(x)
    }
}

/// Solves `Mx = b` for symmetric positive definite `M`.
pub fn solve_spd(m: &RealMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len("solve_spd right-hand side", m.rows(), b.len())?;
    Cholesky::factor(&m.to_dense())?.solve(b)
}
