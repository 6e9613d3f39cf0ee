//! Principal component regression baseline.
//!
//! Every input is flattened per sample and the blocks are concatenated
//! column-wise. Inputs and response are column-centred, each is reduced to
//! the leading principal components explaining a fraction `v` of its
//! variance, and the response scores are regressed on the input scores (with
//! intercept) by least squares.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Svd};
use crate::solver::Dataset;
use crate::tensor::Tensor;
use crate::tuning::fold_assignment;

/// Candidate retained-variance fractions.
pub const VARIANCE_GRID: [f64; 5] = [0.85, 0.90, 0.95, 0.99, 0.995];

#[derive(Clone, Debug, PartialEq)]
pub struct PcrModel {
    pub input_mean: Vec<f64>,
    /// `n_x × G_x`, orthonormal columns.
    pub input_loadings: Matrix,
    pub output_mean: Vec<f64>,
    /// `n_y × G_y`, orthonormal columns.
    pub output_loadings: Matrix,
    /// `(G_x + 1) × G_y`, intercept row first.
    pub coefficients: Matrix,
    pub v: f64,
    /// Non-sample shapes of the inputs.
    pub input_shapes: Vec<Vec<usize>>,
    pub output_shape: Vec<usize>,
}

impl PcrModel {
    pub fn input_components(&self) -> usize {
        self.input_loadings.cols()
    }

    pub fn output_components(&self) -> usize {
        self.output_loadings.cols()
    }

    pub fn predict(&self, xs: &[Tensor]) -> Result<Tensor> {
        pcr_predict(self, xs)
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.input_mean.len();
        let ny = self.output_mean.len();
        let gx = self.input_loadings.cols();
        let gy = self.output_loadings.cols();
        let nx_shapes: usize = self.input_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let ny_shape: usize = self.output_shape.iter().product();
        if self.input_loadings.rows() != nx
            || self.output_loadings.rows() != ny
            || self.coefficients.shape() != (gx + 1, gy)
            || nx != nx_shapes
            || ny != ny_shape
        {
            return Err(Error::ShapeMismatch("inconsistent PCR model".into()));
        }
        Ok(())
    }
}

/// Concatenated per-sample flattening of all inputs.
fn design(xs: &[Tensor]) -> Matrix {
    let m = xs[0].shape()[0];
    let widths: Vec<usize> = xs.iter().map(|x| x.len() / m).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(m * total);
    for i in 0..m {
        for (x, &w) in xs.iter().zip(&widths) {
            data.extend_from_slice(&x.as_slice()[i * w..(i + 1) * w]);
        }
    }
    Matrix::from_vec(m, total, data).expect("consistent sizes")
}

fn column_means(a: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for (m, v) in mean.iter_mut().zip(a.row(i)) {
            *m += v;
        }
    }
    let n = a.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn center(a: &Matrix, mean: &[f64]) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] - mean[j])
}

/// Smallest number of leading components whose squared singular values
/// reach fraction `v` of the total (at least one).
pub fn retained_components(singular_values: &[f64], v: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1;
    }
    let goal = v * total - 1e-12 * total;
    let mut acc = 0.0;
    for (k, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= goal {
            return k + 1;
        }
    }
    singular_values.len().max(1)
}

/// Centred data and its SVD, reused across candidate fractions.
struct Decomposition {
    mean: Vec<f64>,
    svd: Svd,
}

impl Decomposition {
    fn new(a: &Matrix) -> Result<Self> {
        let mean = column_means(a);
        let svd = center(a, &mean).svd()?;
        Ok(Decomposition { mean, svd })
    }

    fn components(&self, v: f64) -> usize {
        retained_components(&self.svd.singular_values, v).min(self.svd.singular_values.len())
    }

    fn loadings(&self, g: usize) -> Matrix {
        Matrix::from_fn(self.svd.vt.cols(), g, |i, k| self.svd.vt[(k, i)])
    }

    /// Scores of the training rows on the first `g` components.
    fn scores(&self, g: usize) -> Matrix {
        Matrix::from_fn(self.svd.u.rows(), g, |i, k| {
            self.svd.u[(i, k)] * self.svd.singular_values[k]
        })
    }
}

fn with_intercept(t: &Matrix) -> Matrix {
    Matrix::from_fn(t.rows(), t.cols() + 1, |i, j| if j == 0 { 1.0 } else { t[(i, j - 1)] })
}

fn build_model(
    xd: &Decomposition,
    yd: &Decomposition,
    v: f64,
    input_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
) -> Result<PcrModel> {
    let gx = xd.components(v);
    let gy = yd.components(v);
    let design = with_intercept(&xd.scores(gx));
    let coefficients = design.pinv()?.matmul(&yd.scores(gy))?;
    Ok(PcrModel {
        input_mean: xd.mean.clone(),
        input_loadings: xd.loadings(gx),
        output_mean: yd.mean.clone(),
        output_loadings: yd.loadings(gy),
        coefficients,
        v,
        input_shapes,
        output_shape,
    })
}

fn shapes(data: &Dataset) -> (Vec<Vec<usize>>, Vec<usize>) {
    (
        data.xs.iter().map(|x| x.shape()[1..].to_vec()).collect(),
        data.output_shape().to_vec(),
    )
}

fn check_fraction(v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("variance fraction {v} outside (0, 1]")))
    }
}

pub fn pcr_fit(data: &Dataset, v: f64) -> Result<PcrModel> {
    check_fraction(v)?;
    if data.samples() < 2 {
        return Err(Error::InvalidConfig("PCR needs at least two samples".into()));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("dataset contains NaN or infinite values".into()));
    }
    let xd = Decomposition::new(&design(&data.xs))?;
    let yd = Decomposition::new(&data.y.sample_matrix())?;
    let (input_shapes, output_shape) = shapes(data);
    build_model(&xd, &yd, v, input_shapes, output_shape)
}

pub fn pcr_predict(model: &PcrModel, xs: &[Tensor]) -> Result<Tensor> {
    if xs.len() != model.input_shapes.len()
        || xs
            .iter()
            .zip(&model.input_shapes)
            .any(|(x, s)| x.order() < 2 || x.shape()[1..] != s[..] || x.shape()[0] != xs[0].shape()[0])
    {
        return Err(Error::ShapeMismatch("inputs do not match the PCR model".into()));
    }
    let x = center(&design(xs), &model.input_mean);
    let scores = with_intercept(&x.matmul(&model.input_loadings)?);
    let out_scores = scores.matmul(&model.coefficients)?;
    let y = out_scores.matmul_t(&model.output_loadings)?;
    let m = xs[0].shape()[0];
    let mut values = y.into_vec();
    let n = model.output_mean.len();
    for i in 0..m {
        for (v, mu) in values[i * n..(i + 1) * n].iter_mut().zip(&model.output_mean) {
            *v += mu;
        }
    }
    let mut shape = vec![m];
    shape.extend_from_slice(&model.output_shape);
    Tensor::new(shape, values)
}

#[derive(Clone, Debug)]
pub struct PcrSelection {
    pub v: f64,
    /// `(v, held-out mean squared error)` per candidate.
    pub scores: Vec<(f64, f64)>,
    pub model: PcrModel,
}

/// Chooses `v` from `grid` by `k`-fold cross-validation (ties go to the
/// smaller fraction) and refits on all samples.
pub fn pcr_cv(data: &Dataset, grid: &[f64], k: usize, seed: u64) -> Result<PcrSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty variance grid".into()));
    }
    for &v in grid {
        check_fraction(v)?;
    }
    let m = data.samples();
    if k < 2 || m < k {
        return Err(Error::InvalidConfig(format!("cannot split {m} samples into {k} folds")));
    }
    let folds = fold_assignment(m, k, seed);
    let mut sq = vec![0.0; grid.len()];
    let mut count = 0usize;
    for f in 0..k {
        let train_idx: Vec<usize> = (0..m).filter(|&i| folds[i] != f).collect();
        let test_idx: Vec<usize> = (0..m).filter(|&i| folds[i] == f).collect();
        let train = data.select(&train_idx)?;
        let test = data.select(&test_idx)?;
        if train.samples() < 2 {
            return Err(Error::InvalidConfig(
                "PCR folds need at least two training samples".into(),
            ));
        }
        let xd = Decomposition::new(&design(&train.xs))?;
        let yd = Decomposition::new(&train.y.sample_matrix())?;
        let (input_shapes, output_shape) = shapes(&train);
        for (s, &v) in sq.iter_mut().zip(grid) {
            let model = build_model(&xd, &yd, v, input_shapes.clone(), output_shape.clone())?;
            *s += test.y.sub(&pcr_predict(&model, &test.xs)?)?.norm_sq();
        }
        count += test.y.len();
    }
    let scores: Vec<(f64, f64)> = grid.iter().zip(&sq).map(|(&v, &s)| (v, s / count as f64)).collect();
    let best = scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .expect("non-empty grid")
        .0;
    let model = pcr_fit(data, best)?;
    Ok(PcrSelection { v: best, scores, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_problem(seed: u64, m: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = Tensor::from_fn(&[m, 2, 2], |_| rng.random_range(-1.0..1.0));
        let x2 = Tensor::from_fn(&[m, 1], |_| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = design(&[x1.clone(), x2.clone()]).matmul(&w).unwrap();
        let y = Tensor::new(vec![m, 3], y.into_vec()).unwrap();
        Dataset::new(y, vec![x1, x2]).unwrap()
    }

    #[test]
    fn retained_component_counts() {
        assert_eq!(retained_components(&[3.0, 1.0, 0.1], 0.85), 1);
        assert_eq!(retained_components(&[3.0, 1.0, 0.1], 0.95), 2);
        assert_eq!(retained_components(&[3.0, 1.0, 0.1], 1.0), 3);
        assert_eq!(retained_components(&[0.0, 0.0], 0.9), 1);
    }

    #[test]
    fn exact_linear_system_is_reproduced() {
        let data = linear_problem(1, 30);
        let model = pcr_fit(&data, 1.0).unwrap();
        assert_eq!(model.input_components(), 5);
        let pred = model.predict(&data.xs).unwrap();
        assert!(pred.sub(&data.y).unwrap().frobenius_norm() < 1e-8 * data.y.frobenius_norm());
        for c in [&model.input_loadings, &model.output_loadings] {
            assert!(c.orthonormality_error() < 1e-10);
        }
    }

    #[test]
    fn constant_response_predicts_the_mean() {
        let mut data = linear_problem(2, 20);
        data.y = Tensor::from_fn(&[20, 3], |i| i[1] as f64 + 0.5);
        let model = pcr_fit(&data, 0.9).unwrap();
        assert_eq!(model.output_components(), 1);
        let pred = model.predict(&data.xs).unwrap();
        assert!(pred.sub(&data.y).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn mean_input_maps_to_mean_output() {
        let data = linear_problem(3, 25);
        let model = pcr_fit(&data, 0.9).unwrap();
        let x1 = Tensor::new(vec![1, 2, 2], model.input_mean[..4].to_vec()).unwrap();
        let x2 = Tensor::new(vec![1, 1], model.input_mean[4..].to_vec()).unwrap();
        let pred = model.predict(&[x1, x2]).unwrap();
        for (a, b) in pred.as_slice().iter().zip(&model.output_mean) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let data = linear_problem(4, 10);
        assert!(pcr_fit(&data, 0.0).is_err());
        assert!(pcr_fit(&data.select(&[0]).unwrap(), 0.9).is_err());
        let model = pcr_fit(&data, 0.9).unwrap();
        assert!(model.predict(&data.xs[..1]).is_err());
    }

    #[test]
    fn single_candidate_is_selected() {
        let data = linear_problem(5, 20);
        let sel = pcr_cv(&data, &[0.95], 5, 1).unwrap();
        assert_eq!(sel.v, 0.95);
        assert_eq!(sel.scores.len(), 1);
    }
}
