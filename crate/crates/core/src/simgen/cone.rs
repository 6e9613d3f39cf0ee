//! Truncated cones in cylindrical coordinates.
//!
//! The radius on an `(φ, z)` grid is
//! `r(φ, z) = (r₀ + z·tan θ) / sqrt(1 − e² cos² φ) + c(z² − z) + ε`.
//! The inputs are the scalar `r₀` and the profiles `z·tan θ`, `e² cos² φ`
//! and `c(z² − z)`. Training samples are the full factorial over three
//! levels of each parameter; test samples draw the parameters uniformly.

use std::f64::consts::PI;

use rand::Rng;

use super::{noisy, sample_stream, SimData, SimSpec, Split};
use crate::error::Result;
use crate::solver::Dataset;
use crate::tensor::Tensor;

pub const R0_LEVELS: [f64; 3] = [1.1, 1.3, 1.5];
pub const THETA_LEVELS: [f64; 3] = [0.0, PI / 8.0, PI / 4.0];
pub const E_LEVELS: [f64; 3] = [0.0, 0.3, 0.5];
pub const C_LEVELS: [f64; 3] = [-1.0, 0.0, 1.0];
pub const FACTORIAL_RUNS: usize = 81;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeParams {
    pub r0: f64,
    pub theta: f64,
    pub e: f64,
    pub c: f64,
}

/// `φ_i = 2π i / n`, `i = 1..n`.
pub fn phi_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

/// `z_j = j / n`, `j = 1..n`.
pub fn z_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| j as f64 / n as f64).collect()
}

pub fn cone_radius(p: &ConeParams, phi: f64, z: f64) -> f64 {
    let ecos = p.e * phi.cos();
    (p.r0 + z * p.theta.tan()) / (1.0 - ecos * ecos).sqrt() + p.c * (z * z - z)
}

pub fn factorial_design() -> Vec<ConeParams> {
    let mut out = Vec::with_capacity(FACTORIAL_RUNS);
    for &r0 in &R0_LEVELS {
        for &theta in &THETA_LEVELS {
            for &e in &E_LEVELS {
                for &c in &C_LEVELS {
                    out.push(ConeParams { r0, theta, e, c });
                }
            }
        }
    }
    out
}

fn random_params<R: Rng>(rng: &mut R) -> ConeParams {
    ConeParams {
        r0: rng.random_range(1.1..=1.5),
        theta: rng.random_range(0.0..=PI / 4.0),
        e: rng.random_range(0.0..=0.5),
        c: rng.random_range(-1.0..=1.0),
    }
}

fn build(spec: &SimSpec, split: Split, params: &[ConeParams]) -> Result<(Dataset, Tensor)> {
    let n = spec.cone_grid;
    let (phi, z) = (phi_grid(n), z_grid(n));
    let m = params.len();
    let mut x1 = Vec::with_capacity(m);
    let mut x2 = Vec::with_capacity(m * n);
    let mut x3 = Vec::with_capacity(m * n);
    let mut x4 = Vec::with_capacity(m * n);
    let mut y = Vec::with_capacity(m * n * n);
    for p in params {
        x1.push(p.r0);
        x2.extend(z.iter().map(|z| z * p.theta.tan()));
        x3.extend(phi.iter().map(|f| (p.e * f.cos()).powi(2)));
        x4.extend(z.iter().map(|z| p.c * (z * z - z)));
        for &f in &phi {
            y.extend(z.iter().map(|&zz| cone_radius(p, f, zz)));
        }
    }
    let clean = Tensor::new(vec![m, n, n], y)?;
    let noisy = noisy(spec, split, &clean);
    let xs = vec![
        Tensor::new(vec![m, 1], x1)?,
        Tensor::new(vec![m, n], x2)?,
        Tensor::new(vec![m, n], x3)?,
        Tensor::new(vec![m, n], x4)?,
    ];
    Ok((Dataset::new(noisy, xs)?, clean))
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    let (train, train_clean) = build(spec, Split::Train, &factorial_design())?;
    let (test, test_clean) = if spec.n_test > 0 {
        let params: Vec<ConeParams> = (0..spec.n_test)
            .map(|i| random_params(&mut sample_stream(spec, Split::Test, i)))
            .collect();
        let (d, c) = build(spec, Split::Test, &params)?;
        (Some(d), Some(c))
    } else {
        (None, None)
    };
    Ok(SimData {
        train,
        test,
        train_clean: Some(train_clean),
        test_clean,
        input_names: vec!["r0".into(), "slope".into(), "eccentricity".into(), "curvature".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::SimKind;

    #[test]
    fn degenerate_cone_is_constant() {
        let p = ConeParams {
            r0: 1.3,
            theta: 0.0,
            e: 0.0,
            c: 0.0,
        };
        for &f in &phi_grid(8) {
            for &z in &z_grid(8) {
                assert_eq!(cone_radius(&p, f, z), 1.3);
            }
        }
    }

    #[test]
    fn eccentric_slice_at_zero_height() {
        let p = ConeParams {
            r0: 1.2,
            theta: 0.3,
            e: 0.5,
            c: 0.7,
        };
        for &f in &phi_grid(16) {
            let expected = 1.2 / (1.0 - 0.25 * f.cos().powi(2)).sqrt();
            assert!((cone_radius(&p, f, 0.0) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn factorial_training_set() {
        let spec = SimSpec {
            cone_grid: 10,
            n_test: 3,
            sigma: 0.0,
            ..SimSpec::new(SimKind::Cone)
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.train.samples(), 81);
        assert_eq!(data.train.y.shape(), &[81, 10, 10]);
        assert_eq!(data.train.xs[0].shape(), &[81, 1]);
        assert_eq!(data.test.unwrap().samples(), 3);
        assert_eq!(data.train.xs[0].get(&[0, 0]), 1.1);
        assert_eq!(data.train.xs[0].get(&[80, 0]), 1.5);
    }
}
