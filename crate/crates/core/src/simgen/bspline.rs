//! Clamped B-spline bases on `[0, 1]` with uniform interior knots.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Evaluates all `n_interior + order` basis functions of the given order
/// (degree `order − 1`) at each grid point; one row per point.
pub fn bspline_basis(order: usize, n_interior: usize, grid: &[f64]) -> Result<Matrix> {
    if order == 0 {
        return Err(Error::InvalidConfig("B-spline order must be at least 1".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidConfig(format!("grid point {t} outside [0, 1]")));
    }
    let mut knots = vec![0.0; order];
    knots.extend((1..=n_interior).map(|k| k as f64 / (n_interior + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, order));
    let n_basis = n_interior + order;

    let mut out = Matrix::zeros(grid.len(), n_basis);
    let mut vals = vec![0.0; knots.len() - 1];
    for (row, &t) in grid.iter().enumerate() {
        // order-1 indicators; the right end belongs to the last non-empty span
        vals.iter_mut().for_each(|v| *v = 0.0);
        let span = if t >= 1.0 {
            n_basis - 1
        } else {
            (0..knots.len() - 1)
                .find(|&i| knots[i] <= t && t < knots[i + 1])
                .expect("t lies in some span")
        };
        vals[span] = 1.0;
        for k in 2..=order {
            for i in 0..knots.len() - k {
                let left = knots[i + k - 1] - knots[i];
                let right = knots[i + k] - knots[i + 1];
                let a = if left > 0.0 {
                    (t - knots[i]) / left * vals[i]
                } else {
                    0.0
                };
                let b = if right > 0.0 {
                    (knots[i + k] - t) / right * vals[i + 1]
                } else {
                    0.0
                };
                vals[i] = a + b;
            }
        }
        for j in 0..n_basis {
            out[(row, j)] = vals[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_spline() {
        let b = bspline_basis(1, 0, &grid(7)).unwrap();
        assert_eq!(b.shape(), (7, 1));
        assert!(b.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn counts_and_partition_of_unity() {
        let g = grid(200);
        for (knots, cols) in [(1, 5), (47, 51)] {
            let b = bspline_basis(4, knots, &g).unwrap();
            assert_eq!(b.cols(), cols);
            for i in 0..b.rows() {
                let s: f64 = b.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(b.row(i).iter().all(|&v| v >= -1e-15));
            }
        }
    }

    #[test]
    fn linear_hat_functions() {
        // order 2 with one knot at 0.5: hats centred at 0, 0.5, 1
        let b = bspline_basis(2, 1, &[0.0, 0.25, 0.5, 1.0]).unwrap();
        let expected = [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for (i, row) in expected.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((b[(i, j)] - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bspline_basis(0, 1, &[0.5]).is_err());
        assert!(bspline_basis(4, 1, &[1.5]).is_err());
    }
}
