//! Curves built from two cubic B-spline bases: a coarse one with dense
//! uniform coefficients and a fine one activated on a random run of five
//! consecutive basis functions.

use rand::Rng;

use super::{bspline_basis, noisy, sample_stream, split_sizes, SimData, SimSpec};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::solver::Dataset;
use crate::tensor::Tensor;

pub const GRID: usize = 200;
pub const ORDER: usize = 4;
pub const COARSE_KNOTS: usize = 1;
pub const FINE_KNOTS: usize = 47;
pub const RUN: usize = 5;

/// `t_i = i / (GRID − 1)`, covering `[0, 1]`.
pub fn grid() -> Vec<f64> {
    (0..GRID).map(|i| i as f64 / (GRID - 1) as f64).collect()
}

pub fn bases() -> Result<(Matrix, Matrix)> {
    let g = grid();
    Ok((
        bspline_basis(ORDER, COARSE_KNOTS, &g)?,
        bspline_basis(ORDER, FINE_KNOTS, &g)?,
    ))
}

/// Number of admissible start positions for the run of ones.
pub fn run_starts() -> usize {
    FINE_KNOTS + ORDER - RUN + 1
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    let (b1, b2) = bases()?;
    let (n1, n2) = (b1.cols(), b2.cols());
    let mut parts = Vec::new();
    for (split, m) in split_sizes(spec) {
        if m == 0 {
            parts.push(None);
            continue;
        }
        let mut x1 = Vec::with_capacity(m * n1);
        let mut x2 = vec![0.0; m * n2];
        for i in 0..m {
            let mut rng = sample_stream(spec, split, i);
            x1.extend((0..n1).map(|_| rng.random::<f64>()));
            let start = rng.random_range(0..run_starts());
            x2[i * n2 + start..i * n2 + start + RUN]
                .iter_mut()
                .for_each(|v| *v = 1.0);
        }
        let x1 = Matrix::from_vec(m, n1, x1)?;
        let x2 = Matrix::from_vec(m, n2, x2)?;
        let clean = x1.matmul_t(&b1)?.add(&x2.matmul_t(&b2)?)?;
        let clean = Tensor::new(vec![m, GRID], clean.into_vec())?;
        let y = noisy(spec, split, &clean);
        let xs = vec![Tensor::from_matrix(&x1), Tensor::from_matrix(&x2)];
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
        input_names: vec!["coarse".into(), "fine".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::SimKind;

    #[test]
    fn shapes_and_sparsity() {
        let spec = SimSpec {
            n_train: 10,
            n_test: 2,
            ..SimSpec::new(SimKind::Jump)
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.train.xs[0].shape(), &[10, 5]);
        assert_eq!(data.train.xs[1].shape(), &[10, 51]);
        assert_eq!(data.train.y.shape(), &[10, 200]);
        for i in 0..10 {
            let row = &data.train.xs[1].as_slice()[i * 51..(i + 1) * 51];
            assert_eq!(row.iter().sum::<f64>(), 5.0);
            let first = row.iter().position(|&v| v == 1.0).unwrap();
            assert!(row[first..first + 5].iter().all(|&v| v == 1.0));
        }
        assert_eq!(run_starts(), 47);
    }

    #[test]
    fn no_run_gives_smooth_coarse_curve() {
        let (b1, _) = bases().unwrap();
        let x = Matrix::from_vec(1, 5, vec![0.2, 0.9, 0.1, 0.5, 0.4]).unwrap();
        let y = x.matmul_t(&b1).unwrap();
        // a cubic spline with one knot has no jumps between neighbours
        let max_step = y.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_step < 0.05);
    }
}
