//! Waveform surfaces driven by a profile and an image.
//!
//! Inputs and coefficients are built from trigonometric bases: column `t`
//! (one-based) of a basis on `n` points is `cos(2π t j/n)` for odd `t` and
//! `sin(2π t j/n)` for even `t`, `j = 1..n`. Each input is a random core
//! expanded in its bases, each coefficient tensor is a fixed random core
//! expanded in the input and output bases and scaled by the quadrature
//! weight `Π_k 1/P_k`, so a contraction behaves like an integral over the
//! input domain.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{fixed_stream, noisy, sample_stream, split_sizes, SimData, SimSpec};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::solver::Dataset;
use crate::tensor::{contract_samples, Tensor};

pub const PROFILE_LEN: usize = 60;
pub const IMAGE_SIDE: usize = 50;
pub const OUTPUT_SHAPE: [usize; 2] = [60, 40];
pub const PROFILE_RANK: usize = 2;
pub const IMAGE_RANK: usize = 3;
pub const OUTPUT_RANK: usize = 3;

/// `n × r` trigonometric basis.
pub fn fourier_basis(n: usize, r: usize) -> Matrix {
    Matrix::from_fn(n, r, |j, t| {
        let x = (j + 1) as f64 / n as f64;
        let freq = (t + 1) as f64;
        let arg = 2.0 * std::f64::consts::PI * freq * x;
        if (t + 1) % 2 == 1 {
            arg.cos()
        } else {
            arg.sin()
        }
    })
}

/// Ground-truth structure shared by all samples.
#[derive(Clone, Debug)]
pub struct WaveformTruth {
    /// Input bases per input, one per input mode.
    pub u: Vec<Vec<Matrix>>,
    /// Output bases.
    pub v: Vec<Matrix>,
    /// Coefficient cores, shape `[R_k, …, R_k, R, …, R]`.
    pub cores: Vec<Tensor>,
    /// Quadrature weight applied to each coefficient tensor.
    pub weights: Vec<f64>,
}

impl WaveformTruth {
    pub fn new(spec: &SimSpec) -> Self {
        let u = vec![
            vec![fourier_basis(PROFILE_LEN, PROFILE_RANK)],
            vec![fourier_basis(IMAGE_SIDE, IMAGE_RANK); 2],
        ];
        let v = OUTPUT_SHAPE.iter().map(|&q| fourier_basis(q, OUTPUT_RANK)).collect();
        let mut rng = fixed_stream(spec, 1);
        let mut cores = Vec::new();
        for factors in &u {
            let mut shape: Vec<usize> = factors.iter().map(Matrix::cols).collect();
            shape.extend([OUTPUT_RANK; 2]);
            cores.push(Tensor::from_fn(&shape, |_| rng.sample(StandardNormal)));
        }
        let weights = u
            .iter()
            .map(|f| 1.0 / f.iter().map(|m| m.rows() as f64).product::<f64>())
            .collect();
        WaveformTruth { u, v, cores, weights }
    }

    /// Full coefficient tensor `B_k` of shape `[P_k…, Q_1, Q_2]`.
    pub fn coefficient(&self, k: usize) -> Result<Tensor> {
        let l = self.u[k].len();
        let mut pairs: Vec<(&Matrix, usize)> = self.u[k].iter().enumerate().map(|(m, f)| (f, m)).collect();
        pairs.extend(self.v.iter().enumerate().map(|(i, v)| (v, l + i)));
        Ok(self.cores[k].multi_mode_product(&pairs)?.scale(self.weights[k]))
    }

    /// Noiseless response for input cores `d[k]` (shape `M × R_k…`).
    fn response(&self, d: &[Tensor]) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (k, dk) in d.iter().enumerate() {
            // X * B = (D ×_m UᵀU) * C, then expand in the output bases
            let mut e = dk.clone();
            for (m, f) in self.u[k].iter().enumerate() {
                e = e.mode_product(&f.t_matmul(f)?, m + 1)?;
            }
            let part = contract_samples(&e, &self.cores[k])?.scale(self.weights[k]);
            match acc.as_mut() {
                Some(a) => a.axpy(1.0, &part)?,
                None => acc = Some(part),
            }
        }
        let mut y = acc.expect("two inputs");
        for (i, v) in self.v.iter().enumerate() {
            y = y.mode_product(v, i + 1)?;
        }
        Ok(y)
    }
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    let truth = WaveformTruth::new(spec);
    let mut parts = Vec::new();
    for (split, m) in split_sizes(spec) {
        if m == 0 {
            parts.push(None);
            continue;
        }
        let ranks: Vec<Vec<usize>> = truth.u.iter().map(|f| f.iter().map(Matrix::cols).collect()).collect();
        let mut d_data: Vec<Vec<f64>> = vec![Vec::new(); ranks.len()];
        for i in 0..m {
            let mut rng = sample_stream(spec, split, i);
            for (dst, r) in d_data.iter_mut().zip(&ranks) {
                let n: usize = r.iter().product();
                dst.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
        }
        let mut d = Vec::new();
        let mut xs = Vec::new();
        for ((data, r), factors) in d_data.into_iter().zip(&ranks).zip(&truth.u) {
            let mut shape = vec![m];
            shape.extend(r);
            let dk = Tensor::new(shape, data)?;
            let pairs: Vec<(&Matrix, usize)> = factors.iter().enumerate().map(|(k, f)| (f, k + 1)).collect();
            xs.push(dk.multi_mode_product(&pairs)?);
            d.push(dk);
        }
        let clean = truth.response(&d)?;
        let y = noisy(spec, split, &clean);
        parts.push(Some((Dataset::new(y, xs)?, clean)));
    }
    let test = parts.pop().expect("two splits");
    let (train, train_clean) = parts.pop().flatten().expect("training split is non-empty");
    let (test, test_clean) = match test {
        Some((d, c)) => (Some(d), Some(c)),
        None => (None, None),
    };
    Ok(SimData {
        train,
        test,
        train_clean: Some(train_clean),
        test_clean,
        input_names: vec!["profile".into(), "image".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::SimKind;
    use crate::tuning::numerical_rank;

    fn small_spec() -> SimSpec {
        SimSpec {
            n_train: 12,
            n_test: 4,
            sigma: 0.0,
            ..SimSpec::new(SimKind::Waveform)
        }
    }

    #[test]
    fn basis_columns() {
        let b = fourier_basis(4, 2);
        let pi = std::f64::consts::PI;
        assert!((b[(0, 0)] - (2.0 * pi * 0.25).cos()).abs() < 1e-15);
        assert!((b[(1, 1)] - (4.0 * pi * 0.5).sin()).abs() < 1e-15);
    }

    #[test]
    fn shapes_and_image_rank() {
        let data = generate(&small_spec()).unwrap();
        assert_eq!(data.train.xs[0].shape(), &[12, 60]);
        assert_eq!(data.train.xs[1].shape(), &[12, 50, 50]);
        assert_eq!(data.train.y.shape(), &[12, 60, 40]);
        let r = numerical_rank(&data.train.xs[1].unfold(1).unwrap()).unwrap();
        assert_eq!(r, 3);
    }

    #[test]
    fn response_equals_contraction_with_true_coefficients() {
        let spec = small_spec();
        let data = generate(&spec).unwrap();
        let truth = WaveformTruth::new(&spec);
        let mut pred = Tensor::zeros(data.train.y.shape());
        for k in 0..2 {
            let b = truth.coefficient(k).unwrap();
            pred.axpy(1.0, &contract_samples(&data.train.xs[k], &b).unwrap())
                .unwrap();
        }
        let err = pred.sub(&data.train.y).unwrap().frobenius_norm();
        assert!(err < 1e-10 * data.train.y.frobenius_norm());
    }
}
