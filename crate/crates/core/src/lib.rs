//! Multiple tensor-on-tensor (MTOT) regression.
//!
//! A response tensor is modelled as a sum of contractions of several
//! heterogeneous input tensors (scalars, curves, images) with coefficient
//! tensors that carry a Tucker structure: fixed input bases taken from the
//! HOSVD of each input, learned orthonormal output bases shared by all
//! inputs, and per-input core tensors. Estimation alternates closed-form
//! least-squares core updates with orthogonal Procrustes basis updates.
//!
//! Besides the solver the crate ships the rank-grid cross-validation used to
//! tune it, a principal component regression baseline, seeded generators for
//! the simulation studies and the wafer overlay surrogate, error metrics, and
//! the text formats used by the command-line tool.

pub mod bench;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod pcr;
pub mod rng;
pub mod simgen;
pub mod solver;
pub mod tensor;
pub mod tuning;

pub use error::{Error, Result};
pub use matrix::{kronecker, Matrix, Svd};
pub use solver::{fit, predict, Dataset, FitConfig, MtotModel};
pub use tensor::{contract, fold, fold_general, tucker, ModeSplit, Tensor, Tucker};
