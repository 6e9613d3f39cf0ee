//! Dense row-major matrices.
//!
//! Products go through `matrixmultiply`; decompositions (SVD, symmetric
//! eigendecomposition, QR) are delegated to `nalgebra` and converted back.
//! Every decomposition returned from here is sorted by decreasing singular
//! value / eigenvalue and sign-normalised so that the largest-magnitude entry
//! of each left vector is positive, which makes results reproducible.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, `r = min(m, n)`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `m × r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// `r × n`, orthonormal rows.
    pub vt: Matrix,
}

impl Svd {
    /// Default cutoff below which singular values count as zero.
    pub fn cutoff(&self) -> f64 {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        smax * self.u.rows.max(self.vt.cols) as f64 * f64::EPSILON
    }

    /// Number of singular values above [`Svd::cutoff`].
    pub fn rank(&self) -> usize {
        let tol = self.cutoff();
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// `C = alpha·A·B + beta·C` on strided buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last_c = (m - 1) * rsc + (n - 1) * csc;
    assert!(last_c < c.len(), "gemm: output buffer too small");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let cij = &mut c[i * rsc + j * csc];
                *cij = if beta == 0.0 { 0.0 } else { beta * *cij };
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs buffer too small");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs buffer too small");
    // SAFETY: the three asserts above bound every offset the kernel touches,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Matrix::from_vec(r, c, rows.concat())
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// The first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        assert!(k <= self.cols);
        Matrix::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    fn same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            &self.data,
            self.cols,
            1,
            &other.data,
            other.cols,
            1,
            0.0,
            &mut out.data,
            other.cols,
            1,
        );
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply transpose of {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            1.0,
            &self.data,
            1,
            self.cols,
            &other.data,
            other.cols,
            1,
            0.0,
            &mut out.data,
            other.cols,
            1,
        );
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {:?} by transpose of {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            1.0,
            &self.data,
            self.cols,
            1,
            &other.data,
            1,
            other.cols,
            0.0,
            &mut out.data,
            other.rows,
            1,
        );
        Ok(out)
    }

    /// `‖AᵀA − I‖_F`
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.t_matmul(self).expect("square gram");
        gram.sub(&Matrix::identity(self.cols))
            .expect("same shape")
            .frobenius_norm()
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }

    pub fn svd(&self) -> Result<Svd> {
        self.ensure_finite("matrix passed to svd")?;
        let r = self.rows.min(self.cols);
        if r == 0 {
            return Ok(Svd {
                u: Matrix::zeros(self.rows, 0),
                singular_values: Vec::new(),
                vt: Matrix::zeros(0, self.cols),
            });
        }
        let svd = nalgebra::linalg::SVD::try_new(self.to_nalgebra(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let s = svd.singular_values;
        let order = descending_order(s.as_slice());

        let mut out_u = Matrix::zeros(self.rows, r);
        let mut out_vt = Matrix::zeros(r, self.cols);
        let mut values = Vec::with_capacity(r);
        for (dst, &src) in order.iter().enumerate() {
            let sign = sign_of_dominant(u.column(src).iter().copied());
            for i in 0..self.rows {
                out_u[(i, dst)] = sign * u[(i, src)];
            }
            for j in 0..self.cols {
                out_vt[(dst, j)] = sign * vt[(src, j)];
            }
            values.push(s[src]);
        }
        Ok(Svd {
            u: out_u,
            singular_values: values,
            vt: out_vt,
        })
    }

    pub fn singular_values(&self) -> Result<Vec<f64>> {
        self.ensure_finite("matrix passed to svd")?;
        if self.rows.min(self.cols) == 0 {
            return Ok(Vec::new());
        }
        let svd = nalgebra::linalg::SVD::try_new(self.to_nalgebra(), false, false, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }

    /// Moore–Penrose pseudoinverse with cutoff `σ_max·max(m, n)·ε`.
    pub fn pinv(&self) -> Result<Matrix> {
        let svd = self.svd()?;
        let tol = svd.cutoff();
        let mut out = Matrix::zeros(self.cols, self.rows);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= tol {
                break;
            }
            let inv = 1.0 / s;
            for i in 0..self.cols {
                let vik = svd.vt[(k, i)] * inv;
                if vik == 0.0 {
                    continue;
                }
                for j in 0..self.rows {
                    out.data[i * self.rows + j] += vik * svd.u[(j, k)];
                }
            }
        }
        Ok(out)
    }

    /// Eigendecomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`
    /// sorted by decreasing eigenvalue, eigenvectors as columns.
    pub fn symmetric_eigen(&self) -> Result<(Vec<f64>, Matrix)> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch("symmetric_eigen needs a square matrix".into()));
        }
        self.ensure_finite("matrix passed to symmetric_eigen")?;
        let n = self.rows;
        let eig = nalgebra::linalg::SymmetricEigen::try_new(self.to_nalgebra(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
        let order = descending_order(eig.eigenvalues.as_slice());
        let mut vectors = Matrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        for (dst, &src) in order.iter().enumerate() {
            let sign = sign_of_dominant(eig.eigenvectors.column(src).iter().copied());
            for i in 0..n {
                vectors[(i, dst)] = sign * eig.eigenvectors[(i, src)];
            }
            values.push(eig.eigenvalues[src]);
        }
        Ok((values, vectors))
    }

    /// The `k` dominant left singular vectors.
    ///
    /// Wide matrices (and requests beyond `min(m, n)`) go through the
    /// eigendecomposition of `A·Aᵀ`, which also yields a full orthonormal
    /// completion when `k` exceeds the rank.
    pub fn leading_left_singular_vectors(&self, k: usize) -> Result<Matrix> {
        if k > self.rows {
            return Err(Error::RankOutOfRange(format!(
                "cannot take {k} singular vectors of a matrix with {} rows",
                self.rows
            )));
        }
        if self.cols >= 2 * self.rows || k > self.cols {
            let gram = self.matmul_t(self)?;
            let (_, vectors) = gram.symmetric_eigen()?;
            Ok(vectors.leading_columns(k))
        } else {
            Ok(self.svd()?.u.leading_columns(k))
        }
    }

    /// Lower-triangular `L` with `A = L·Lᵀ` for symmetric positive definite `A`.
    pub fn cholesky(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch("cholesky needs a square matrix".into()));
        }
        self.ensure_finite("matrix passed to cholesky")?;
        let chol = nalgebra::linalg::Cholesky::new(self.to_nalgebra())
            .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
        Ok(Matrix::from_nalgebra(&chol.l()))
    }

    /// Orthonormal basis of the column space via thin QR, with the signs
    /// chosen so that the diagonal of R is non-negative.
    pub fn orthonormalize_columns(&self) -> Result<Matrix> {
        if self.cols > self.rows {
            return Err(Error::ShapeMismatch(
                "cannot orthonormalize more columns than rows".into(),
            ));
        }
        self.ensure_finite("matrix passed to QR")?;
        let qr = self.to_nalgebra().qr();
        let q = qr.q();
        let r = qr.r();
        let mut out = Matrix::from_nalgebra(&q);
        for j in 0..self.cols {
            if r[(j, j)] < 0.0 {
                for i in 0..self.rows {
                    out[(i, j)] = -out[(i, j)];
                }
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Kronecker product `A ⊗ B`: block `(i, j)` is `a_ij·B`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, n) = a.shape();
    let (r, s) = b.shape();
    Matrix::from_fn(m * r, n * s, |row, col| a[(row / r, col / s)] * b[(row % r, col % s)])
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// +1 or −1 so that the largest-magnitude entry (first on ties) is positive.
fn sign_of_dominant(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for v in values {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix {
        Matrix::from_rows(&[
            vec![4.0, 1.0, -2.0],
            vec![0.5, 3.0, 1.0],
            vec![-1.0, 2.0, 0.0],
            vec![2.0, -1.0, 5.0],
        ])
        .unwrap()
    }

    fn naive_product(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    #[test]
    fn products_agree_with_triple_loop() {
        let a = sample();
        let b = sample().transpose();
        let expected = naive_product(&a, &b);
        assert!(a.matmul(&b).unwrap().sub(&expected).unwrap().frobenius_norm() < 1e-12);
        assert!(a.matmul_t(&a).unwrap().sub(&expected).unwrap().frobenius_norm() < 1e-12);
        let ata = naive_product(&b, &a);
        assert!(a.t_matmul(&a).unwrap().sub(&ata).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn product_shape_mismatch_is_an_error() {
        assert!(sample().matmul(&sample()).is_err());
    }

    #[test]
    fn kronecker_block_layout() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let k = kronecker(&a, &b);
        let expected = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.0, 2.0],
            vec![1.0, 0.0, 2.0, 0.0],
            vec![0.0, 3.0, 0.0, 4.0],
            vec![3.0, 0.0, 4.0, 0.0],
        ])
        .unwrap();
        assert_eq!(k, expected);
        assert_eq!(kronecker(&Matrix::identity(1), &b), b);
        assert_eq!(
            kronecker(&Matrix::identity(2), &Matrix::identity(3)),
            Matrix::identity(6)
        );
    }

    #[test]
    fn svd_reconstructs_and_is_sign_normalised() {
        let a = sample();
        let svd = a.svd().unwrap();
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let us = Matrix::from_fn(4, 3, |i, j| svd.u[(i, j)] * svd.singular_values[j]);
        let back = us.matmul(&svd.vt).unwrap();
        assert!(back.sub(&a).unwrap().frobenius_norm() < 1e-12);
        assert!(svd.u.orthonormality_error() < 1e-12);
        for j in 0..3 {
            let col = svd.u.column(j);
            let dom = col
                .iter()
                .copied()
                .fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(dom > 0.0);
        }
    }

    #[test]
    fn pinv_of_rank_deficient_matrix_satisfies_penrose_identity() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let p = a.pinv().unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        assert!(apa.sub(&a).unwrap().frobenius_norm() < 1e-12);
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        assert!(pap.sub(&p).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn leading_vectors_complete_beyond_rank() {
        let a = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![0.0]]).unwrap();
        let u = a.leading_left_singular_vectors(3).unwrap();
        assert!(u.orthonormality_error() < 1e-12);
        let first = u.column(0);
        let s = 0.5f64.sqrt();
        assert!((first[0] - s).abs() < 1e-12 && (first[1] - s).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_gives_orthonormal_columns() {
        let q = sample().orthonormalize_columns().unwrap();
        assert_eq!(q.shape(), (4, 3));
        assert!(q.orthonormality_error() < 1e-12);
    }
}
