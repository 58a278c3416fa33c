//! Sparse storage, Cholesky factorization and covariance extraction.
//!
//! Two factorization back ends sit behind [`CholFactor`]: a dense one backed by
//! nalgebra and an envelope (skyline) factorization for banded or otherwise
//! narrow-profile sparse matrices. The envelope factor has no fill outside the
//! profile, which covers random walks, IID blocks with a few fixed effects
//! appended at the end, and small lattices.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative ridge used when a prior precision is singular.
pub const RIDGE_EPS: f64 = 1e-8;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates
    /// and dropping exact zeros.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows, ncols, indptr, indices, values })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let trips: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(n, n, &trips).expect("diagonal indices are in range")
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trips = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    trips.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trips).expect("dense indices are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero entries of row `i` as `(col, value)` pairs in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out.push((i, j, v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let trips: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trips).expect("transpose keeps indices in range")
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, vector has length {}",
                self.ncols,
                x.len()
            )));
        }
        Ok((0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect())
    }

    /// Sparse times dense.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.nrows,
                self.ncols,
                x.nrows(),
                x.ncols()
            )));
        }
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for i in 0..self.nrows {
            for (k, v) in self.row(i) {
                for j in 0..x.ncols() {
                    out[(i, j)] += v * x[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · diag(w) · self`; `w = None` means unit weights.
    pub fn weighted_gram(&self, w: Option<&[f64]>) -> Result<Self> {
        if let Some(w) = w {
            if w.len() != self.nrows {
                return Err(Error::DimensionMismatch(format!(
                    "weight length {} for {} rows",
                    w.len(),
                    self.nrows
                )));
            }
        }
        let mut trips = Vec::new();
        for i in 0..self.nrows {
            let wi = w.map_or(1.0, |w| w[i]);
            let row: Vec<_> = self.row(i).collect();
            for &(a, va) in &row {
                for &(b, vb) in &row {
                    trips.push((a, b, wi * va * vb));
                }
            }
        }
        Self::from_triplets(self.ncols, self.ncols, &trips)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut trips = Vec::new();
        for (k, &i) in rows.iter().enumerate() {
            if i >= self.nrows {
                return Err(Error::DimensionMismatch(format!("row {i} of {}", self.nrows)));
            }
            trips.extend(self.row(i).map(|(j, v)| (k, j, v)));
        }
        Self::from_triplets(rows.len(), self.ncols, &trips)
    }

    /// Returns a copy with `ncols` columns whose column `j` is column
    /// `j - offset` of `self`.
    pub fn embed_columns(&self, ncols: usize, offset: usize) -> Result<Self> {
        if offset + self.ncols > ncols {
            return Err(Error::DimensionMismatch(format!(
                "cannot place {} columns at offset {offset} in {ncols}",
                self.ncols
            )));
        }
        let trips: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j + offset, v)).collect();
        Self::from_triplets(self.nrows, ncols, &trips)
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(blocks: &[&SparseMatrix]) -> Self {
        let nrows = blocks.iter().map(|b| b.nrows).sum();
        let ncols = blocks.iter().map(|b| b.ncols).sum();
        let mut trips = Vec::new();
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            trips.extend(b.triplets().into_iter().map(|(i, j, v)| (i + r0, j + c0, v)));
            r0 += b.nrows;
            c0 += b.ncols;
        }
        Self::from_triplets(nrows, ncols, &trips).expect("block offsets are in range")
    }

    /// Horizontal concatenation `[self other]`.
    pub fn hcat(&self, other: &SparseMatrix) -> Result<Self> {
        if self.nrows != other.nrows {
            return Err(Error::DimensionMismatch(format!(
                "hcat of {} and {} rows",
                self.nrows, other.nrows
            )));
        }
        let mut trips = self.triplets();
        trips.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j + self.ncols, v)));
        Self::from_triplets(self.nrows, self.ncols + other.ncols, &trips)
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch("matrix sum".into()));
        }
        let mut trips = self.triplets();
        trips.extend(other.triplets());
        Self::from_triplets(self.nrows, self.ncols, &trips)
    }
}

/// Symmetric matrix in dense or sparse storage.
#[derive(Debug, Clone)]
pub enum SymMatrix {
    Dense(DMatrix<f64>),
    Sparse(SparseMatrix),
}

impl SymMatrix {
    pub fn order(&self) -> usize {
        match self {
            SymMatrix::Dense(m) => m.nrows(),
            SymMatrix::Sparse(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Dense(m) => m.clone(),
            SymMatrix::Sparse(m) => m.to_dense(),
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        match self {
            SymMatrix::Dense(m) => m.diagonal().iter().copied().collect(),
            SymMatrix::Sparse(m) => (0..m.nrows()).map(|i| m.get(i, i)).collect(),
        }
    }

    /// Checks squareness, finiteness and symmetry to 1e-12 relative.
    pub fn validate(&self) -> Result<()> {
        let (nr, nc) = match self {
            SymMatrix::Dense(m) => (m.nrows(), m.ncols()),
            SymMatrix::Sparse(m) => (m.nrows(), m.ncols()),
        };
        if nr != nc {
            return Err(Error::DimensionMismatch(format!("{nr}x{nc} matrix is not square")));
        }
        let trips = match self {
            SymMatrix::Dense(m) => SparseMatrix::from_dense(m).triplets(),
            SymMatrix::Sparse(m) => m.triplets(),
        };
        let scale = trips.iter().fold(0.0_f64, |a, t| a.max(t.2.abs()));
        let lookup = |i: usize, j: usize| match self {
            SymMatrix::Dense(m) => m[(i, j)],
            SymMatrix::Sparse(m) => m.get(i, j),
        };
        for (i, j, v) in trips {
            if !v.is_finite() {
                return Err(Error::NumericalBreakdown(format!("non-finite entry at ({i}, {j})")));
            }
            if (v - lookup(j, i)).abs() > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
        Ok(())
    }

    pub fn add_diagonal(&self, r: f64) -> SymMatrix {
        match self {
            SymMatrix::Dense(m) => {
                let mut m = m.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += r;
                }
                SymMatrix::Dense(m)
            }
            SymMatrix::Sparse(m) => SymMatrix::Sparse(
                m.add(&SparseMatrix::diagonal(&vec![r; m.nrows()])).expect("same shape"),
            ),
        }
    }
}

#[derive(Debug, Clone)]
struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl Envelope {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.start[i] + j - self.first[i]]
    }

    fn diag(&self, i: usize) -> f64 {
        self.values[self.start[i] + i - self.first[i]]
    }
}

fn envelope_profile(m: &SparseMatrix) -> Vec<usize> {
    (0..m.nrows()).map(|i| m.row(i).map(|(j, _)| j).next().map_or(i, |j| j.min(i))).collect()
}

fn envelope_factor(m: &SparseMatrix) -> Result<Envelope> {
    let n = m.nrows();
    let first = envelope_profile(m);
    let mut start = Vec::with_capacity(n + 1);
    let mut total = 0;
    for i in 0..n {
        start.push(total);
        total += i - first[i] + 1;
    }
    start.push(total);
    let mut values = vec![0.0; total];
    for i in 0..n {
        for (j, v) in m.row(i) {
            if j <= i {
                values[start[i] + j - first[i]] = v;
            }
        }
    }
    let floor = pivot_floor(&(0..n).map(|i| m.get(i, i)).collect::<Vec<_>>());
    for i in 0..n {
        let fi = first[i];
        for j in fi..i {
            let fj = first[j];
            let k0 = fi.max(fj);
            let mut s = values[start[i] + j - fi];
            for k in k0..j {
                s -= values[start[i] + k - fi] * values[start[j] + k - fj];
            }
            values[start[i] + j - fi] = s / values[start[j] + j - fj];
        }
        let mut d = values[start[i] + i - fi];
        for k in fi..i {
            let l = values[start[i] + k - fi];
            d -= l * l;
        }
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { row: i, pivot: d });
        }
        values[start[i] + i - fi] = d.sqrt();
    }
    Ok(Envelope { first, start, values })
}

fn pivot_floor(diag: &[f64]) -> f64 {
    let max = diag.iter().fold(0.0_f64, |a, &d| a.max(d.abs()));
    1e-13 * max
}

#[derive(Debug, Clone)]
enum Backend {
    Dense(DMatrix<f64>),
    Envelope(Envelope),
}

/// Cholesky factor `M = L Lᵀ`. The ordering is the identity permutation.
#[derive(Debug, Clone)]
pub struct CholFactor {
    order: usize,
    backend: Backend,
    ridge: f64,
}

/// Factorizes a symmetric positive definite matrix.
///
/// Sparse inputs whose envelope holds fewer than a third of the lower
/// triangle are factored in envelope storage; everything else is densified.
pub fn cholesky(m: &SymMatrix) -> Result<CholFactor> {
    let n = m.order();
    let backend = match m {
        SymMatrix::Sparse(s) if prefers_envelope(s) => Backend::Envelope(envelope_factor(s)?),
        _ => Backend::Dense(dense_factor(&m.to_dense())?),
    };
    Ok(CholFactor { order: n, backend, ridge: 0.0 })
}

/// Factorizes `m`, retrying once with `RIDGE_EPS · mean(diag)` added to the
/// diagonal when the plain factorization fails.
pub fn cholesky_with_ridge(m: &SymMatrix) -> Result<CholFactor> {
    match cholesky(m) {
        Ok(f) => Ok(f),
        Err(Error::NotPositiveDefinite { .. }) => {
            let r = ridge_for(m);
            let mut f = cholesky(&m.add_diagonal(r))?;
            f.ridge = r;
            Ok(f)
        }
        Err(e) => Err(e),
    }
}

/// The ridge `RIDGE_EPS · mean(diag(m))`.
pub fn ridge_for(m: &SymMatrix) -> f64 {
    let d = m.diag();
    let n = d.len().max(1) as f64;
    RIDGE_EPS * d.iter().sum::<f64>() / n
}

fn prefers_envelope(s: &SparseMatrix) -> bool {
    let n = s.nrows();
    if n < 64 {
        return false;
    }
    let first = envelope_profile(s);
    let size: usize = (0..n).map(|i| i - first[i] + 1).sum();
    3 * size < n * (n + 1) / 2
}

fn dense_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let floor = pivot_floor(&m.diagonal().iter().copied().collect::<Vec<_>>());
    let l = nalgebra::Cholesky::new(m.clone())
        .ok_or(Error::NotPositiveDefinite { row: 0, pivot: f64::NAN })?
        .unpack();
    for i in 0..l.nrows() {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > floor) {
            return Err(Error::NotPositiveDefinite { row: i, pivot });
        }
    }
    Ok(l)
}

impl CholFactor {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Ridge added to the diagonal before factorization (0 when none).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn logdet(&self) -> f64 {
        let s: f64 = match &self.backend {
            Backend::Dense(l) => l.diagonal().iter().map(|d| d.ln()).sum(),
            Backend::Envelope(e) => (0..self.order).map(|i| e.diag(i).ln()).sum(),
        };
        2.0 * s
    }

    /// Dense copy of `L`.
    pub fn lower(&self) -> DMatrix<f64> {
        match &self.backend {
            Backend::Dense(l) => l.clone(),
            Backend::Envelope(e) => {
                let mut l = DMatrix::zeros(self.order, self.order);
                for i in 0..self.order {
                    for j in e.first[i]..=i {
                        l[(i, j)] = e.at(i, j);
                    }
                }
                l
            }
        }
    }

    /// Solves `L x = b` in place.
    pub fn solve_l_in_place(&self, x: &mut [f64]) {
        let n = self.order;
        match &self.backend {
            Backend::Dense(l) => {
                for i in 0..n {
                    let mut s = x[i];
                    for k in 0..i {
                        s -= l[(i, k)] * x[k];
                    }
                    x[i] = s / l[(i, i)];
                }
            }
            Backend::Envelope(e) => {
                for i in 0..n {
                    let fi = e.first[i];
                    let row = &e.values[e.start[i]..e.start[i + 1]];
                    let mut s = x[i];
                    for k in fi..i {
                        s -= row[k - fi] * x[k];
                    }
                    x[i] = s / row[i - fi];
                }
            }
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_lt_in_place(&self, x: &mut [f64]) {
        let n = self.order;
        match &self.backend {
            Backend::Dense(l) => {
                for i in (0..n).rev() {
                    let mut s = x[i];
                    for k in i + 1..n {
                        s -= l[(k, i)] * x[k];
                    }
                    x[i] = s / l[(i, i)];
                }
            }
            Backend::Envelope(e) => {
                for i in (0..n).rev() {
                    let fi = e.first[i];
                    let row = &e.values[e.start[i]..e.start[i + 1]];
                    x[i] /= row[i - fi];
                    let xi = x[i];
                    for k in fi..i {
                        x[k] -= row[k - fi] * xi;
                    }
                }
            }
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.order {
            return Err(Error::DimensionMismatch(format!(
                "rhs length {} for order {}",
                b.len(),
                self.order
            )));
        }
        let mut x = b.to_vec();
        self.solve_l_in_place(&mut x);
        self.solve_lt_in_place(&mut x);
        Ok(x)
    }
}

/// Solves `M X = rhs` column by column.
pub fn solve(f: &CholFactor, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.nrows() != f.order {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} rows for order {}",
            rhs.nrows(),
            f.order
        )));
    }
    let cols: Vec<Vec<f64>> = (0..rhs.ncols())
        .into_par_iter()
        .map(|j| f.solve_vec(rhs.column(j).as_slice()).expect("length checked"))
        .collect();
    let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for (j, c) in cols.into_iter().enumerate() {
        out.set_column(j, &DVector::from_vec(c));
    }
    Ok(out)
}

/// Computes `left · M⁻¹ · rightᵀ`.
pub fn posterior_cov_block(
    f: &CholFactor,
    left: &SparseMatrix,
    right: &SparseMatrix,
) -> Result<DMatrix<f64>> {
    if left.ncols() != f.order || right.ncols() != f.order {
        return Err(Error::DimensionMismatch(format!(
            "blocks with {} and {} columns for order {}",
            left.ncols(),
            right.ncols(),
            f.order
        )));
    }
    let cols: Vec<Vec<f64>> = (0..right.nrows())
        .into_par_iter()
        .map(|k| {
            let mut x = vec![0.0; f.order];
            for (j, v) in right.row(k) {
                x[j] = v;
            }
            f.solve_l_in_place(&mut x);
            f.solve_lt_in_place(&mut x);
            left.mul_vec(&x).expect("length checked")
        })
        .collect();
    let mut out = DMatrix::zeros(left.nrows(), right.nrows());
    for (k, c) in cols.into_iter().enumerate() {
        for (i, v) in c.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(out)
}

/// Diagonal of `left · M⁻¹ · leftᵀ`.
pub fn quadratic_diag(f: &CholFactor, left: &SparseMatrix) -> Result<Vec<f64>> {
    if left.ncols() != f.order {
        return Err(Error::DimensionMismatch("quadratic form".into()));
    }
    Ok((0..left.nrows())
        .into_par_iter()
        .map(|k| {
            let mut x = vec![0.0; f.order];
            for (j, v) in left.row(k) {
                x[j] = v;
            }
            f.solve_l_in_place(&mut x);
            x.iter().map(|v| v * v).sum()
        })
        .collect())
}

/// Pairwise summation, used where reductions must not depend on thread count.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}
