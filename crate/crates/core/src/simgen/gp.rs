//! Zero-mean Gaussian-process sampling on a fixed grid.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::matrix::Matrix;

/// Stationary covariance functions of the lag `|z − z'|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    /// `(1 + a + a²/3)·e^{−a}` with `a = rate·|Δ|` (Matérn 5/2).
    Matern52 { rate: f64 },
    /// `e^{−(scale·|Δ|)²}`
    SquaredExp { scale: f64 },
}

impl Kernel {
    /// The rough kernel used for coefficient surfaces.
    pub const ROUGH: Kernel = Kernel::Matern52 { rate: 20.0 };
    /// The smooth kernel used for functional predictors.
    pub const SMOOTH: Kernel = Kernel::SquaredExp { scale: 2.0 };
    /// The kernel used for scalar-predictor coefficient curves.
    pub const SCALAR_COEFFICIENT: Kernel = Kernel::SquaredExp { scale: 5.0 };

    pub fn eval(&self, lag: f64) -> f64 {
        let d = lag.abs();
        match *self {
            Kernel::Matern52 { rate } => {
                let a = rate * d;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            Kernel::SquaredExp { scale } => (-(scale * d).powi(2)).exp(),
        }
    }

    pub fn gram(&self, grid: &[f64]) -> Matrix {
        Matrix::from_fn(grid.len(), grid.len(), |i, j| self.eval(grid[i] - grid[j]))
    }
}

/// Draws `N(0, K)` vectors through `K = Q Λ Qᵀ`, with negative eigenvalues
/// (round-off on near-singular grams) clamped to zero.
#[derive(Clone, Debug)]
pub struct GpSampler {
    /// `Q·Λ^{1/2}`
    factor: Matrix,
}

impl GpSampler {
    pub fn new(kernel: Kernel, grid: &[f64]) -> Result<Self> {
        let (values, vectors) = kernel.gram(grid).symmetric_eigen()?;
        let n = grid.len();
        let factor = Matrix::from_fn(n, n, |i, k| vectors[(i, k)] * values[k].max(0.0).sqrt());
        Ok(GpSampler { factor })
    }

    pub fn len(&self) -> usize {
        self.factor.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.rows() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.rows();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| self.factor.row(i).iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// One draw on `grid` from a stream seeded with `seed`.
pub fn gp_sample(kernel: Kernel, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    let sampler = GpSampler::new(kernel, grid)?;
    Ok(sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}
