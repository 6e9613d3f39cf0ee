//! Curve-on-curve regression: functional and scalar predictors, functional
//! response.
//!
//! Predictors live on 100 equispaced midpoints of `(0, 2)`, the response on
//! 100 midpoints of `(0, 1)`. The response is
//! `y(t) = Σ_m α_m(t) u_m + Σ_i ∫ B_i(s, t) x_i(s) ds + ε(t)`
//! with the integral taken as a Riemann sum.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{add_noise, fixed_stream, sample_stream, split_sizes, GpSampler, Kernel, SimData, SimSpec};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::solver::Dataset;
use crate::tensor::Tensor;

pub const GRID: usize = 100;
pub const SCALARS: usize = 5;
const SCALAR_CORRELATION: f64 = 0.5;
const COMPONENTS: usize = 3;

pub fn s_grid() -> Vec<f64> {
    (0..GRID).map(|i| 2.0 * (i as f64 + 0.5) / GRID as f64).collect()
}

pub fn t_grid() -> Vec<f64> {
    (0..GRID).map(|i| (i as f64 + 0.5) / GRID as f64).collect()
}

fn equicorrelation(n: usize, rho: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
}

struct Structure {
    /// `coef[i]` is `B_i` sampled as `s × t`, already multiplied by `Δs`.
    coef: Vec<Matrix>,
    /// `alpha[m][t]`
    alpha: Vec<Vec<f64>>,
    mixing: Matrix,
    scalar_mixing: Matrix,
    smooth: Option<GpSampler>,
}

impl Structure {
    fn new(spec: &SimSpec) -> Result<Self> {
        let p = spec.curve_predictors;
        let ds = 2.0 / GRID as f64;
        let (s, t) = (s_grid(), t_grid());
        let constant = spec.constant_fields;
        let draw = |sampler: &Option<GpSampler>, rng: &mut rand_chacha::ChaCha8Rng| match sampler {
            Some(g) => g.sample(rng),
            None => vec![1.0; GRID],
        };
        let (rough_s, rough_t, coef_kernel, smooth) = if constant {
            (None, None, None, None)
        } else {
            (
                Some(GpSampler::new(Kernel::ROUGH, &s)?),
                Some(GpSampler::new(Kernel::ROUGH, &t)?),
                Some(GpSampler::new(Kernel::SCALAR_COEFFICIENT, &t)?),
                Some(GpSampler::new(Kernel::SMOOTH, &s)?),
            )
        };
        let mut rng = fixed_stream(spec, 1);
        let mut coef = Vec::with_capacity(p);
        for _ in 0..p {
            let mut b = Matrix::zeros(GRID, GRID);
            for _ in 0..COMPONENTS {
                let gamma = draw(&rough_t, &mut rng);
                let psi = draw(&rough_s, &mut rng);
                for a in 0..GRID {
                    for c in 0..GRID {
                        b[(a, c)] += psi[a] * gamma[c];
                    }
                }
            }
            coef.push(b.scale(ds / (p * p) as f64));
        }
        let alpha = (0..SCALARS).map(|_| draw(&coef_kernel, &mut rng)).collect();
        Ok(Structure {
            coef,
            alpha,
            mixing: equicorrelation(p, spec.curve_correlation).cholesky()?,
            scalar_mixing: equicorrelation(SCALARS, SCALAR_CORRELATION).cholesky()?,
            smooth,
        })
    }
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    let p = spec.curve_predictors;
    let structure = Structure::new(spec)?;
    let mut parts = Vec::new();
    for (split, m) in split_sizes(spec) {
        if m == 0 {
            parts.push(None);
            continue;
        }
        let mut xs: Vec<Vec<f64>> = vec![Vec::with_capacity(m * GRID); p];
        let mut us = Vec::with_capacity(m * SCALARS);
        let mut clean = Vec::with_capacity(m * GRID);
        for i in 0..m {
            let mut rng = sample_stream(spec, split, i);
            let w: Vec<Vec<f64>> = (0..p)
                .map(|_| match &structure.smooth {
                    Some(g) => g.sample(&mut rng),
                    None => vec![1.0; GRID],
                })
                .collect();
            let z: Vec<f64> = (0..SCALARS).map(|_| rng.sample(StandardNormal)).collect();
            let u: Vec<f64> = (0..SCALARS)
                .map(|a| (0..=a).map(|b| structure.scalar_mixing[(a, b)] * z[b]).sum())
                .collect();
            let x: Vec<Vec<f64>> = (0..p)
                .map(|a| {
                    (0..GRID)
                        .map(|k| (0..=a).map(|b| structure.mixing[(a, b)] * w[b][k]).sum())
                        .collect()
                })
                .collect();
            let mut y = vec![0.0; GRID];
            for (t, yt) in y.iter_mut().enumerate() {
                let mut acc: f64 = (0..SCALARS).map(|a| structure.alpha[a][t] * u[a]).sum();
                for (xi, b) in x.iter().zip(&structure.coef) {
                    acc += (0..GRID).map(|s| b[(s, t)] * xi[s]).sum::<f64>();
                }
                *yt = acc;
            }
            for (dst, src) in xs.iter_mut().zip(&x) {
                dst.extend_from_slice(src);
            }
            us.extend_from_slice(&u);
            clean.extend_from_slice(&y);
        }
        let clean = Tensor::new(vec![m, GRID], clean)?;
        let mut noisy = clean.clone();
        for (i, block) in noisy.as_mut_slice().chunks_mut(GRID).enumerate() {
            add_noise(spec, split, i, block);
        }
        let mut inputs = xs
            .into_iter()
            .map(|x| Tensor::new(vec![m, GRID], x))
            .collect::<Result<Vec<_>>>()?;
        inputs.push(Tensor::new(vec![m, SCALARS], us)?);
        parts.push(Some((Dataset::new(noisy, inputs)?, clean)));
    }
    let test = parts.pop().expect("two splits");
    let (train, train_clean) = parts.pop().flatten().expect("training split is non-empty");
    let (test, test_clean) = match test {
        Some((d, c)) => (Some(d), Some(c)),
        None => (None, None),
    };
    let mut input_names: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
    input_names.push("u".into());
    Ok(SimData {
        train,
        test,
        train_clean: Some(train_clean),
        test_clean,
        input_names,
    })
}
