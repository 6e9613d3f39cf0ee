//! Dense N-way arrays and the multilinear operations built on them.
//!
//! Values are stored lexicographically with the last mode varying fastest.
//! Modes are numbered from zero. Matricizations follow the usual convention
//! in which, inside each group of modes, the first-listed mode varies
//! fastest; with that ordering
//! `unfold(C ×_1 U_1 ⋯ ×_n U_n, k) = U_k · C_(k) · (U_n ⊗ ⋯ ⊗ U_1)ᵀ`
//! (the Kronecker factors skip `k`).

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Partition of a tensor's modes into row and column groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSplit {
    pub row_modes: Vec<usize>,
    pub col_modes: Vec<usize>,
}

/// A Tucker decomposition `core ×_0 U_0 ⋯ ×_{n-1} U_{n-1}`.
#[derive(Clone, Debug)]
pub struct Tucker {
    pub core: Tensor,
    pub factors: Vec<Matrix>,
}

impl ModeSplit {
    pub fn new(row_modes: Vec<usize>, col_modes: Vec<usize>) -> Self {
        ModeSplit { row_modes, col_modes }
    }

    fn validate(&self, order: usize, allow_empty: bool) -> Result<()> {
        if !allow_empty && (self.row_modes.is_empty() || self.col_modes.is_empty()) {
            return Err(Error::InvalidSplit(
                "row and column groups must both be non-empty".into(),
            ));
        }
        let mut seen = vec![false; order];
        for &m in self.row_modes.iter().chain(&self.col_modes) {
            if m >= order {
                return Err(Error::ModeOutOfRange { mode: m, order });
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidSplit(format!("mode {m} listed twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidSplit("every mode must be assigned".into()));
        }
        Ok(())
    }

    fn mode_j(j: usize, order: usize) -> ModeSplit {
        ModeSplit {
            row_modes: vec![j],
            col_modes: (0..order).filter(|&k| k != j).collect(),
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::ShapeMismatch("a tensor needs at least one mode".into()));
        }
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in buffer order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for m in (0..shape.len()).rev() {
                idx[m] += 1;
                if idx[m] < shape[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// A matrix viewed as an order-2 tensor.
    pub fn from_matrix(m: &Matrix) -> Self {
        Tensor {
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index order mismatch");
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index out of bounds");
            acc * n + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Slices `indices` along mode 0, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Tensor> {
        let m = self.shape[0];
        let stride = self.data.len() / m;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= m {
                return Err(Error::ShapeMismatch(format!("sample {i} out of range (M = {m})")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Mode-`j` unfolding: `I_j × Π_{k≠j} I_k`.
    pub fn unfold(&self, j: usize) -> Result<Matrix> {
        if j >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode: j,
                order: self.order(),
            });
        }
        Ok(matricize(self, &ModeSplit::mode_j(j, self.order())))
    }

    pub fn unfold_general(&self, split: &ModeSplit) -> Result<Matrix> {
        split.validate(self.order(), false)?;
        Ok(matricize(self, split))
    }

    /// `self ×_j a`
    pub fn mode_product(&self, a: &Matrix, j: usize) -> Result<Tensor> {
        mode_product_impl(self, a, false, j)
    }

    /// `self ×_j aᵀ`, without forming the transpose.
    pub fn mode_product_transposed(&self, a: &Matrix, j: usize) -> Result<Tensor> {
        mode_product_impl(self, a, true, j)
    }

    /// Applies `(matrix, mode)` products in the given order.
    pub fn multi_mode_product(&self, factors: &[(&Matrix, usize)]) -> Result<Tensor> {
        check_distinct(factors.iter().map(|f| f.1), self.order())?;
        let mut out = self.clone();
        for &(a, j) in factors {
            out = out.mode_product(a, j)?;
        }
        Ok(out)
    }

    /// Same as [`Tensor::multi_mode_product`] but with every factor transposed.
    pub fn multi_mode_product_transposed(&self, factors: &[(&Matrix, usize)]) -> Result<Tensor> {
        check_distinct(factors.iter().map(|f| f.1), self.order())?;
        let mut out = self.clone();
        for &(a, j) in factors {
            out = out.mode_product_transposed(a, j)?;
        }
        Ok(out)
    }

    /// View as `shape[0] × rest`, rows in buffer order.
    pub fn sample_matrix(&self) -> Matrix {
        let rows = self.shape[0];
        Matrix::from_vec(rows, self.data.len() / rows, self.data.clone()).expect("consistent sizes")
    }
}

/// Inverse of [`Tensor::unfold`].
pub fn fold(m: &Matrix, j: usize, shape: &[usize]) -> Result<Tensor> {
    if j >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode: j,
            order: shape.len(),
        });
    }
    fold_split(m, &ModeSplit::mode_j(j, shape.len()), shape)
}

/// Inverse of [`Tensor::unfold_general`].
pub fn fold_general(m: &Matrix, split: &ModeSplit, shape: &[usize]) -> Result<Tensor> {
    split.validate(shape.len(), false)?;
    fold_split(m, split, shape)
}

// A mode-j split of an order-1 tensor has no column modes, so `fold` skips
// the non-empty check that `fold_general` applies.
fn fold_split(m: &Matrix, split: &ModeSplit, shape: &[usize]) -> Result<Tensor> {
    let rows: usize = split.row_modes.iter().map(|&k| shape[k]).product();
    let cols: usize = split.col_modes.iter().map(|&k| shape[k]).product();
    if m.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "matrix {:?} does not fold into {shape:?} (expected {rows}x{cols})",
            m.shape()
        )));
    }
    let mut out = Tensor::zeros(shape);
    let strides = split_strides(shape, split, cols);
    let src = m.as_slice();
    let last = *shape.last().expect("non-empty shape");
    let ls = strides[shape.len() - 1];
    visit_fibers(shape, &strides, |lin, off| {
        for i in 0..last {
            out.data[lin + i] = src[off + i * ls];
        }
    });
    Tensor::new(shape.to_vec(), out.data)
}

/// Contraction over all modes of `x`: `b`'s leading modes must equal
/// `x.shape()`; the result carries `b`'s trailing modes.
pub fn contract(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let l = x.order();
    if b.order() <= l || b.shape[..l] != x.shape[..] {
        return Err(Error::ShapeMismatch(format!(
            "cannot contract {:?} with {:?}",
            x.shape, b.shape
        )));
    }
    let n = x.len();
    let rest = b.len() / n;
    let mut out = vec![0.0; rest];
    gemm(1, n, rest, 1.0, &x.data, n, 1, &b.data, rest, 1, 0.0, &mut out, rest, 1);
    Tensor::new(b.shape[l..].to_vec(), out)
}

/// Per-sample contraction: `x` is `M × P…`, `b` is `P… × Q…`, result `M × Q…`.
pub fn contract_samples(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let l = x.order() - 1;
    if b.order() <= l || b.shape[..l] != x.shape[1..] {
        return Err(Error::ShapeMismatch(format!(
            "cannot contract samples of {:?} with {:?}",
            x.shape, b.shape
        )));
    }
    let m = x.shape[0];
    let n = x.len() / m;
    let rest = b.len() / n;
    let mut out = vec![0.0; m * rest];
    gemm(m, n, rest, 1.0, &x.data, n, 1, &b.data, rest, 1, 0.0, &mut out, rest, 1);
    let mut shape = vec![m];
    shape.extend_from_slice(&b.shape[l..]);
    Tensor::new(shape, out)
}

/// Truncated higher-order SVD.
pub fn tucker(t: &Tensor, ranks: &[usize]) -> Result<Tucker> {
    if ranks.len() != t.order() {
        return Err(Error::RankOutOfRange(format!(
            "{} ranks given for an order-{} tensor",
            ranks.len(),
            t.order()
        )));
    }
    let modes: Vec<usize> = (0..t.order()).collect();
    let factors = hosvd_factors(t, &modes, ranks)?;
    let pairs: Vec<(&Matrix, usize)> = factors.iter().zip(&modes).map(|(u, &k)| (u, k)).collect();
    let core = t.multi_mode_product_transposed(&pairs)?;
    Ok(Tucker { core, factors })
}

impl Tucker {
    pub fn reconstruct(&self) -> Result<Tensor> {
        let pairs: Vec<(&Matrix, usize)> = self.factors.iter().enumerate().map(|(k, u)| (u, k)).collect();
        self.core.multi_mode_product(&pairs)
    }
}

/// Leading left singular vectors of the unfolding along each listed mode.
pub fn hosvd_factors(t: &Tensor, modes: &[usize], ranks: &[usize]) -> Result<Vec<Matrix>> {
    if modes.len() != ranks.len() {
        return Err(Error::RankOutOfRange("one rank per mode is required".into()));
    }
    modes
        .iter()
        .zip(ranks)
        .map(|(&k, &r)| {
            let extent = *t.shape.get(k).ok_or(Error::ModeOutOfRange {
                mode: k,
                order: t.order(),
            })?;
            if r == 0 || r > extent {
                return Err(Error::RankOutOfRange(format!(
                    "rank {r} for mode {k} of extent {extent}"
                )));
            }
            t.unfold(k)?.leading_left_singular_vectors(r)
        })
        .collect()
}

fn check_distinct(modes: impl Iterator<Item = usize>, order: usize) -> Result<()> {
    let mut seen = vec![false; order];
    for m in modes {
        if m >= order {
            return Err(Error::ModeOutOfRange { mode: m, order });
        }
        if std::mem::replace(&mut seen[m], true) {
            return Err(Error::InvalidSplit(format!("mode {m} used twice")));
        }
    }
    Ok(())
}

/// Destination offset strides of every tensor mode inside the matricized
/// buffer with `cols` columns.
fn split_strides(shape: &[usize], split: &ModeSplit, cols: usize) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut s = 1;
    for &m in &split.row_modes {
        strides[m] = s * cols;
        s *= shape[m];
    }
    let mut s = 1;
    for &m in &split.col_modes {
        strides[m] = s;
        s *= shape[m];
    }
    strides
}

/// Walks the tensor one last-mode fiber at a time, passing the fiber's
/// linear start and its mapped offset under `strides`.
fn visit_fibers(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = shape.len();
    let last = shape[n - 1];
    let fibers: usize = shape[..n - 1].iter().product();
    let mut idx = vec![0usize; n - 1];
    let mut off = 0usize;
    for fiber in 0..fibers {
        f(fiber * last, off);
        for m in (0..n - 1).rev() {
            idx[m] += 1;
            off += strides[m];
            if idx[m] < shape[m] {
                break;
            }
            off -= strides[m] * shape[m];
            idx[m] = 0;
        }
    }
}

/// Matricization; one of the groups may be empty (yielding a single row or
/// column).
pub(crate) fn matricize(t: &Tensor, split: &ModeSplit) -> Matrix {
    let rows: usize = split.row_modes.iter().map(|&k| t.shape[k]).product();
    let cols: usize = split.col_modes.iter().map(|&k| t.shape[k]).product();
    let strides = split_strides(&t.shape, split, cols);
    let mut out = vec![0.0; t.len()];
    let n = t.order();
    let last = t.shape[n - 1];
    let ls = strides[n - 1];
    visit_fibers(&t.shape, &strides, |lin, off| {
        for i in 0..last {
            out[off + i * ls] = t.data[lin + i];
        }
    });
    Matrix::from_vec(rows, cols, out).expect("consistent sizes")
}

fn mode_product_impl(t: &Tensor, a: &Matrix, transpose: bool, j: usize) -> Result<Tensor> {
    if j >= t.order() {
        return Err(Error::ModeOutOfRange {
            mode: j,
            order: t.order(),
        });
    }
    // op(a) is out_rows × in_cols
    let (out_rows, in_cols, rs, cs) = if transpose {
        (a.cols(), a.rows(), 1, a.cols())
    } else {
        (a.rows(), a.cols(), a.cols(), 1)
    };
    if in_cols != t.shape[j] {
        return Err(Error::ShapeMismatch(format!(
            "mode-{j} product: factor has {in_cols} columns, tensor extent is {}",
            t.shape[j]
        )));
    }
    let left: usize = t.shape[..j].iter().product();
    let right: usize = t.shape[j + 1..].iter().product();
    let mut shape = t.shape.clone();
    shape[j] = out_rows;
    let mut out = vec![0.0; left * out_rows * right];
    if out_rows == 0 {
        return Tensor::new(shape, out);
    }
    let a_data = a.as_slice();
    if right == 1 {
        // out (left × R) = T (left × I_j) · op(a)ᵀ
        gemm(
            left, in_cols, out_rows, 1.0, &t.data, in_cols, 1, a_data, cs, rs, 0.0, &mut out, out_rows, 1,
        );
    } else {
        let in_block = in_cols * right;
        let out_block = out_rows * right;
        for l in 0..left {
            gemm(
                out_rows,
                in_cols,
                right,
                1.0,
                a_data,
                rs,
                cs,
                &t.data[l * in_block..(l + 1) * in_block],
                right,
                1,
                0.0,
                &mut out[l * out_block..(l + 1) * out_block],
                right,
                1,
            );
        }
    }
    Tensor::new(shape, out)
}
