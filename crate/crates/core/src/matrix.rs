//! Small dense matrix algebra.
//!
//! Everything here operates on [`Mat`], a row-major `f64` matrix. The sizes
//! that show up in practice are tiny (the state dimension is rarely above 8,
//! and Kronecker products square it), so there is no blocking and no sparse
//! storage. All functions are pure.
//!
//! `vec` stacks columns, and every Kronecker identity used elsewhere in the
//! crate relies on that ordering: `vec(A B C) = (Cᵀ ⊗ A) vec(B)`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix must have at least one row and one column")]
    Empty,
    #[error("ragged rows: row {row} has {found} entries, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite: leading minor {minor} has non-positive pivot {pivot:e}")]
    NotPositiveDefinite { minor: usize, pivot: f64 },
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix exponential overflowed (norm {0:e})")]
    Overflow(f64),
    #[error("spectrum has a complex eigenvalue {re} + {im}i")]
    ComplexSpectrum { re: f64, im: f64 },
    #[error("matrix is not diagonalizable (eigenvalue {0} is defective)")]
    Defective(f64),
}

/// Row-major dense real matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let r = rows.len();
        if r == 0 || rows[0].is_empty() {
            return Err(MatrixError::Empty);
        }
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(MatrixError::Ragged { row: i, expected: c, found: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MatrixError::NonFinite { row: i, col: j });
                }
                data.push(v);
            }
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn column(v: &[f64]) -> Self {
        Mat { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced 1-norm (max absolute column sum).
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Spectral norm (largest singular value).
    pub fn norm_2(&self) -> f64 {
        to_na(self).singular_values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Symmetric within `tol`, relative to the largest entry (absolute below 1).
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.max_asymmetry() <= tol * self.max_abs().max(1.0)
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self[(i, j)] == 0.0))
    }

    /// Submatrix `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat {
        let mut b = Mat::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    /// LU solve of `self * X = rhs` with partial pivoting.
    pub fn solve(&self, rhs: &Mat) -> Result<Mat, MatrixError> {
        if !self.is_square() {
            return Err(MatrixError::NotSquare { rows: self.rows, cols: self.cols });
        }
        if rhs.rows != self.rows {
            return Err(MatrixError::Dimension(format!(
                "solve: lhs is {}x{}, rhs has {} rows",
                self.rows, self.cols, rhs.rows
            )));
        }
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.clone();
        let mut b = rhs.clone();
        let scale = a.max_abs();
        if scale == 0.0 {
            return Err(MatrixError::Singular);
        }
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pv <= f64::EPSILON * scale * n as f64 {
                return Err(MatrixError::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                for j in 0..m {
                    b.data.swap(k * m + j, p * m + j);
                }
            }
            let piv = a[(k, k)];
            for i in (k + 1)..n {
                let f = a[(i, k)] / piv;
                if f == 0.0 {
                    continue;
                }
                a[(i, k)] = 0.0;
                for j in (k + 1)..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
                for j in 0..m {
                    b[(i, j)] -= f * b[(k, j)];
                }
            }
        }
        for j in 0..m {
            for i in (0..n).rev() {
                let mut s = b[(i, j)];
                for k in (i + 1)..n {
                    s -= a[(i, k)] * b[(k, j)];
                }
                b[(i, j)] = s / a[(i, i)];
            }
        }
        Ok(b)
    }

    pub fn inverse(&self) -> Result<Mat, MatrixError> {
        self.solve(&Mat::identity(self.rows))
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimension mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimension mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Mat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

fn from_na(m: &DMatrix<f64>) -> Mat {
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

/// Kronecker product: block `(i, j)` of the result is `a[i,j] * b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (p, q, r, s) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = Mat::zeros(p * r, q * s);
    for i in 0..p {
        for j in 0..q {
            let aij = a[(i, j)];
            for k in 0..r {
                for l in 0..s {
                    out[(i * r + k, j * s + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker sum `A ⊗ I_q + I_p ⊗ B`.
pub fn kron_sum(a: &Mat, b: &Mat) -> Result<Mat, MatrixError> {
    for m in [a, b] {
        if !m.is_square() {
            return Err(MatrixError::NotSquare { rows: m.rows, cols: m.cols });
        }
    }
    Ok(&kron(a, &Mat::identity(b.rows)) + &kron(&Mat::identity(a.rows), b))
}

/// Stacks the columns of `a` into a column vector.
pub fn vec(a: &Mat) -> Mat {
    let mut out = Vec::with_capacity(a.rows * a.cols);
    for j in 0..a.cols {
        for i in 0..a.rows {
            out.push(a[(i, j)]);
        }
    }
    Mat::column(&out)
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Mat, MatrixError> {
    if v.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(MatrixError::Dimension(format!(
            "unvec: {} entries cannot fill a {}x{} matrix",
            v.len(),
            rows,
            cols
        )));
    }
    let mut out = Mat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = v[j * rows + i];
        }
    }
    Ok(out)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const PADE13_THETA: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &Mat) -> Result<Mat, MatrixError> {
    if !a.is_square() {
        return Err(MatrixError::NotSquare { rows: a.rows, cols: a.cols });
    }
    let n = a.rows;
    let norm = a.norm_1();
    if !norm.is_finite() {
        return Err(MatrixError::Overflow(norm));
    }
    if norm == 0.0 {
        return Ok(Mat::identity(n));
    }
    let s = if norm > PADE13_THETA { (norm / PADE13_THETA).log2().ceil() as i32 } else { 0 };
    if s > 1000 {
        return Err(MatrixError::Overflow(norm));
    }
    let a = a.scale(2f64.powi(-s));
    let id = Mat::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let lin = |c6: f64, c4: f64, c2: f64, c0: f64| {
        &(&(&a6.scale(c6) + &a4.scale(c4)) + &a2.scale(c2)) + &id.scale(c0)
    };
    let inner_u = &(&a6.scale(b[13]) + &a4.scale(b[11])) + &a2.scale(b[9]);
    let u = &a * &(&(&a6 * &inner_u) + &lin(b[7], b[5], b[3], b[1]));
    let inner_v = &(&a6.scale(b[12]) + &a4.scale(b[10])) + &a2.scale(b[8]);
    let v = &(&a6 * &inner_v) + &lin(b[6], b[4], b[2], b[0]);
    let mut r = (&v - &u).solve(&(&v + &u)).map_err(|_| MatrixError::Overflow(norm))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.is_finite() {
        return Err(MatrixError::Overflow(norm));
    }
    Ok(r)
}

/// Lower-triangular `L` with positive diagonal and `L Lᵀ = s`.
pub fn cholesky(s: &Mat) -> Result<Mat, MatrixError> {
    if !s.is_square() {
        return Err(MatrixError::NotSquare { rows: s.rows, cols: s.cols });
    }
    if !s.is_symmetric(1e-10) {
        return Err(MatrixError::NotSymmetric(s.max_asymmetry()));
    }
    let n = s.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(MatrixError::NotPositiveDefinite { minor: j + 1, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = 0.5 * (s[(i, j)] + s[(j, i)]);
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Eigen-decomposition `A = P diag(λ) P⁻¹` of a real diagonalizable matrix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Sorted ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are unit-norm eigenvectors, in eigenvalue order.
    pub modal: Mat,
    pub inverse_modal: Mat,
}

impl Spectrum {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("spectrum is never empty")
    }

    /// `P diag(f(λ)) P⁻¹`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.eigenvalues.len();
        let mut pd = self.modal.clone();
        for j in 0..n {
            let fj = f(self.eigenvalues[j]);
            for i in 0..n {
                pd[(i, j)] *= fj;
            }
        }
        &pd * &self.inverse_modal
    }

    pub fn reconstruct(&self) -> Mat {
        self.apply(|l| l)
    }

    /// `‖P‖₂ ‖P⁻¹‖₂`; exactly 1 for the orthonormal bases of symmetric inputs.
    pub fn condition(&self) -> f64 {
        if self.modal.transpose() == self.inverse_modal {
            return 1.0;
        }
        self.modal.norm_2() * self.inverse_modal.norm_2()
    }
}

const SPECTRUM_SYMMETRY_TOL: f64 = 1e-10;
const SPECTRUM_IMAG_TOL: f64 = 1e-9;
const SPECTRUM_RECON_TOL: f64 = 1e-10;

/// Real spectrum of a diagonalizable matrix. Complex or defective spectra are errors.
pub fn spectrum(a: &Mat) -> Result<Spectrum, MatrixError> {
    if !a.is_square() {
        return Err(MatrixError::NotSquare { rows: a.rows, cols: a.cols });
    }
    if !a.is_finite() {
        return Err(MatrixError::NonFinite { row: 0, col: 0 });
    }
    let n = a.rows;
    let scale = a.max_abs().max(1.0);

    let spec = if a.is_symmetric(SPECTRUM_SYMMETRY_TOL) {
        let sym = (&a.clone() + &a.transpose()).scale(0.5);
        let eig = to_na(&sym).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let vecs = from_na(&eig.eigenvectors);
        let mut modal = Mat::zeros(n, n);
        for (k, &src) in order.iter().enumerate() {
            for i in 0..n {
                modal[(i, k)] = vecs[(i, src)];
            }
        }
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let inverse_modal = modal.transpose();
        Spectrum { eigenvalues, modal, inverse_modal }
    } else {
        general_spectrum(a, scale)?
    };

    let recon = spec.reconstruct();
    let err = (&recon - a).frobenius_norm();
    let denom = a.frobenius_norm();
    let ok = if denom > 0.0 { err <= SPECTRUM_RECON_TOL * denom } else { err <= SPECTRUM_RECON_TOL };
    if !ok {
        return Err(MatrixError::Defective(spec.lambda_min()));
    }
    Ok(spec)
}

fn general_spectrum(a: &Mat, scale: f64) -> Result<Spectrum, MatrixError> {
    let n = a.rows;
    let na = to_na(a);
    let complex = na.clone().complex_eigenvalues();
    let mut vals = Vec::with_capacity(n);
    for z in complex.iter() {
        if z.im.abs() > SPECTRUM_IMAG_TOL * scale {
            return Err(MatrixError::ComplexSpectrum { re: z.re, im: z.im });
        }
        vals.push(z.re);
    }
    vals.sort_by(f64::total_cmp);

    // Group numerically repeated eigenvalues and take the null space of
    // (A - λI) for each group; a short null space means a Jordan block.
    let cluster_tol = 1e-7 * scale;
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for v in vals {
        match groups.last_mut() {
            Some(g) if (v - g[g.len() - 1]).abs() <= cluster_tol => g.push(v),
            _ => groups.push(vec![v]),
        }
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut modal = Mat::zeros(n, n);
    let mut col = 0;
    for g in groups {
        let k = g.len();
        let lambda = g.iter().sum::<f64>() / k as f64;
        let shifted = &na - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        for &i in idx.iter().take(k) {
            if svd.singular_values[i] > 1e-6 * scale {
                return Err(MatrixError::Defective(lambda));
            }
        }
        for &i in idx.iter().take(k) {
            let row = v_t.row(i);
            let norm = row.norm();
            for r in 0..n {
                modal[(r, col)] = row[r] / norm;
            }
            eigenvalues.push(if k == 1 { g[0] } else { lambda });
            col += 1;
        }
    }
    // Refine each eigenvalue by its Rayleigh-type quotient against the computed vector.
    let inverse_modal = modal.inverse().map_err(|_| MatrixError::Defective(eigenvalues[0]))?;
    let refined = &(&inverse_modal * a) * &modal;
    for (i, ev) in eigenvalues.iter_mut().enumerate() {
        *ev = refined[(i, i)];
    }
    Ok(Spectrum { eigenvalues, modal, inverse_modal })
}
