//! Seeded data generators for the simulation studies.
//!
//! Every generator is a pure function of its [`SimSpec`]. Random structure
//! (cores, curves, shape parameters) and observation noise come from
//! separate streams, and each sample draws from its own derived stream, so
//! changing the noise seed leaves the signal untouched and sample `i` never
//! depends on how many other samples were requested.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::solver::Dataset;
use crate::tensor::Tensor;

pub mod bspline;
pub mod cone;
pub mod curve;
pub mod gp;
pub mod jump;
pub mod wafer;
pub mod waveform;

pub use bspline::bspline_basis;
pub use gp::{gp_sample, GpSampler, Kernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    CurveOnCurve,
    Waveform,
    Cone,
    Jump,
    Wafer,
}

impl SimKind {
    pub const ALL: [SimKind; 5] = [
        SimKind::CurveOnCurve,
        SimKind::Waveform,
        SimKind::Cone,
        SimKind::Jump,
        SimKind::Wafer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimKind::CurveOnCurve => "curve_on_curve",
            SimKind::Waveform => "waveform",
            SimKind::Cone => "cone",
            SimKind::Jump => "jump",
            SimKind::Wafer => "wafer",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for SimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown simulation kind '{s}'")))
    }
}

/// Which in-plane coordinate the wafer response describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub kind: SimKind,
    /// Standard deviation of the additive response noise.
    pub sigma: f64,
    pub seed: u64,
    /// Seed of the noise stream; defaults to `seed`.
    pub noise_seed: Option<u64>,
    pub n_train: usize,
    pub n_test: usize,
    /// Number of functional predictors (curve-on-curve).
    pub curve_predictors: usize,
    /// Correlation between functional predictors (curve-on-curve).
    pub curve_correlation: f64,
    /// Replace every Gaussian-process draw by the constant 1 (curve-on-curve).
    pub constant_fields: bool,
    /// Points per axis of the cone surface grid.
    pub cone_grid: usize,
    /// Radial and angular resolution of the wafer images.
    pub polar_grid: (usize, usize),
    /// Cartesian grid spacing in mm used for the wafer derivatives.
    pub wafer_spacing: f64,
    pub wafer_axis: Axis,
}

impl SimSpec {
    /// Default sizes for `kind`.
    pub fn new(kind: SimKind) -> Self {
        let (n_train, n_test) = match kind {
            SimKind::CurveOnCurve => (400, 100),
            SimKind::Waveform => (160, 40),
            SimKind::Cone => (cone::FACTORIAL_RUNS, 100),
            SimKind::Jump => (400, 100),
            SimKind::Wafer => (500, 100),
        };
        SimSpec {
            kind,
            sigma: match kind {
                SimKind::CurveOnCurve => 0.1f64.sqrt(),
                SimKind::Wafer => 0.0,
                _ => 0.1,
            },
            seed: 0,
            noise_seed: None,
            n_train,
            n_test,
            curve_predictors: 1,
            curve_correlation: 0.0,
            constant_fields: false,
            cone_grid: 200,
            polar_grid: (100, 200),
            wafer_spacing: 0.5,
            wafer_axis: Axis::X,
        }
    }

    /// Reduced wafer study: 50 × 100 polar images, 100 / 25 samples.
    pub fn wafer_desk() -> Self {
        SimSpec {
            n_train: 100,
            n_test: 25,
            polar_grid: (50, 100),
            ..SimSpec::new(SimKind::Wafer)
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        if self.n_train == 0 {
            return bad("n_train must be positive".into());
        }
        match self.kind {
            SimKind::CurveOnCurve => {
                let p = self.curve_predictors;
                let rho = self.curve_correlation;
                if p == 0 {
                    return bad("curve_predictors must be positive".into());
                }
                let lower = if p > 1 { -1.0 / (p - 1) as f64 } else { -1.0 };
                if !(rho > lower && rho < 1.0) {
                    return bad(format!("correlation {rho} does not give a positive definite matrix"));
                }
            }
            SimKind::Cone => {
                if self.n_train != cone::FACTORIAL_RUNS {
                    return bad(format!(
                        "the cone training set is the {}-run factorial design",
                        cone::FACTORIAL_RUNS
                    ));
                }
                if self.cone_grid < 2 {
                    return bad("cone_grid must be at least 2".into());
                }
            }
            SimKind::Wafer => {
                if self.polar_grid.0 == 0 || self.polar_grid.1 == 0 {
                    return bad("polar grid extents must be positive".into());
                }
                if !(self.wafer_spacing > 0.0 && self.wafer_spacing <= wafer::RADIUS / 2.0) {
                    return bad(format!("wafer spacing {} out of range", self.wafer_spacing));
                }
            }
            SimKind::Waveform | SimKind::Jump => {}
        }
        Ok(())
    }

    fn noise_seed(&self) -> u64 {
        self.noise_seed.unwrap_or(self.seed)
    }
}

/// A generated train/test pair.
#[derive(Clone, Debug)]
pub struct SimData {
    pub train: Dataset,
    /// `None` when `n_test` is zero.
    pub test: Option<Dataset>,
    /// Noiseless responses (absent for the wafer study).
    pub train_clean: Option<Tensor>,
    pub test_clean: Option<Tensor>,
    pub input_names: Vec<String>,
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    spec.validate()?;
    match spec.kind {
        SimKind::CurveOnCurve => curve::generate(spec),
        SimKind::Waveform => waveform::generate(spec),
        SimKind::Cone => cone::generate(spec),
        SimKind::Jump => jump::generate(spec),
        SimKind::Wafer => wafer::generate(spec),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Split {
    Train,
    Test,
}

/// Stream for the random structure of sample `i`.
pub(crate) fn sample_stream(spec: &SimSpec, split: Split, i: usize) -> ChaCha8Rng {
    rng::stream(spec.seed, &[spec.kind.tag(), split as u64, i as u64])
}

/// Stream for quantities fixed across the whole dataset.
pub(crate) fn fixed_stream(spec: &SimSpec, tag: u64) -> ChaCha8Rng {
    rng::stream(spec.seed, &[spec.kind.tag(), 0x0066_6978_6564, tag])
}

/// Adds `N(0, σ²)` noise to every entry of sample block `i`.
pub(crate) fn add_noise(spec: &SimSpec, split: Split, i: usize, block: &mut [f64]) {
    if spec.sigma == 0.0 {
        return;
    }
    let mut rng = rng::stream(
        spec.noise_seed(),
        &[spec.kind.tag(), 0x006e_6f69_7365, split as u64, i as u64],
    );
    let normal = Normal::new(0.0, spec.sigma).expect("valid sigma");
    for v in block {
        *v += normal.sample(&mut rng);
    }
}

/// Noisy copy of a clean response tensor, sample by sample.
pub(crate) fn noisy(spec: &SimSpec, split: Split, clean: &Tensor) -> Tensor {
    let mut y = clean.clone();
    let m = y.shape()[0];
    let stride = y.len() / m;
    for (i, block) in y.as_mut_slice().chunks_mut(stride).enumerate() {
        add_noise(spec, split, i, block);
    }
    y
}

pub(crate) fn split_sizes(spec: &SimSpec) -> [(Split, usize); 2] {
    [(Split::Train, spec.n_train), (Split::Test, spec.n_test)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in SimKind::ALL {
            assert_eq!(k.name().parse::<SimKind>().unwrap(), k);
        }
        assert!("cylinder".parse::<SimKind>().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SimSpec::new(SimKind::Jump).with_sigma(-1.0).validate().is_err());
        let mut s = SimSpec::new(SimKind::CurveOnCurve);
        s.curve_predictors = 3;
        s.curve_correlation = -0.6;
        assert!(s.validate().is_err());
        let mut s = SimSpec::new(SimKind::Cone);
        s.n_train = 10;
        assert!(s.validate().is_err());
        assert!(SimSpec::wafer_desk().validate().is_ok());
    }
}
