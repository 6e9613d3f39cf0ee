//! Model fitting and prediction.
//!
//! The response `Y` (`M × Q_1 × ⋯ × Q_d`) is regressed on inputs `X_j`
//! (`M × P_j1 × ⋯ × P_jl`) through coefficient tensors
//! `B_j = C_j ×_1 U_j1 ⋯ ×_l U_jl ×_{l+1} V_1 ⋯ ×_{l+d} V_d`.
//! The input bases `U_jk` are fixed up front; the cores and the shared
//! output bases `V_i` are estimated by block coordinate descent: every core
//! update is an exact least-squares solve and every basis update is an
//! orthogonal Procrustes problem, so the loss never increases.
//!
//! Cores are stored in reshaped form `C̃_j` whose leading mode enumerates
//! the input-rank multi-index with the first input mode varying fastest.
//!
//! The free functions ([`input_projection`], [`update_core`],
//! [`update_basis`], [`loss`]) implement each step on full-size tensors.
//! [`fit`] runs the same iteration in a compressed space: each `Z_j` is
//! replaced by an orthonormal basis of its column space, so every sweep
//! works on tensors whose leading extent is `rank(Z_j)` instead of `M`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::tensor::{contract_samples, hosvd_factors, Tensor};

/// One response tensor and `p` input tensors, sample mode first.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: Tensor,
    pub xs: Vec<Tensor>,
}

impl Dataset {
    pub fn new(y: Tensor, xs: Vec<Tensor>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidConfig("at least one input is required".into()));
        }
        if y.order() < 2 {
            return Err(Error::ShapeMismatch(
                "the response needs a sample mode and at least one output mode".into(),
            ));
        }
        let m = y.shape()[0];
        for (j, x) in xs.iter().enumerate() {
            if x.order() < 2 {
                return Err(Error::ShapeMismatch(format!(
                    "input {j} must have order >= 2 (store scalars as M x 1)"
                )));
            }
            if x.shape()[0] != m {
                return Err(Error::ShapeMismatch(format!(
                    "input {j} has {} samples, response has {m}",
                    x.shape()[0]
                )));
            }
        }
        Ok(Dataset { y, xs })
    }

    pub fn samples(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.y.shape()[1..]
    }

    pub fn input_shape(&self, j: usize) -> &[usize] {
        &self.xs[j].shape()[1..]
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            y: self.y.select_samples(indices)?,
            xs: self
                .xs
                .iter()
                .map(|x| x.select_samples(indices))
                .collect::<Result<_>>()?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.xs.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBasis {
    /// Leading singular vectors of each input unfolding.
    Tucker,
    /// Leading columns of the identity.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputInit {
    /// Leading singular vectors of each response unfolding.
    Hosvd,
    /// Orthonormalised Gaussian matrices drawn from `seed`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// One rank per input, shared by all of that input's modes.
    pub input_ranks: Vec<usize>,
    /// Rank shared by all output modes.
    pub output_rank: usize,
    /// Stop once a sweep changes the loss by at most `tol · w_0`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub input_basis: InputBasis,
    pub output_init: OutputInit,
}

impl FitConfig {
    pub fn new(input_ranks: Vec<usize>, output_rank: usize) -> Self {
        FitConfig {
            input_ranks,
            output_rank,
            tol: 1e-6,
            max_iter: 100,
            seed: 0,
            input_basis: InputBasis::Tucker,
            output_init: OutputInit::Hosvd,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let p = data.xs.len();
        if self.input_ranks.len() != p {
            return Err(Error::InvalidConfig(format!(
                "{} input ranks given for {p} inputs",
                self.input_ranks.len()
            )));
        }
        for (j, &r) in self.input_ranks.iter().enumerate() {
            let bound = data.input_shape(j).iter().copied().min().unwrap_or(0);
            if r == 0 || r > bound {
                return Err(Error::RankOutOfRange(format!(
                    "input {j}: rank {r} outside 1..={bound}"
                )));
            }
        }
        let bound = data.output_shape().iter().copied().min().unwrap_or(0);
        if self.output_rank == 0 || self.output_rank > bound {
            return Err(Error::RankOutOfRange(format!(
                "output rank {} outside 1..={bound}",
                self.output_rank
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig("tol must be positive and finite".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fitted model.
#[derive(Clone, Debug, PartialEq)]
pub struct MtotModel {
    /// Input bases, `u[j][k]` is `P_jk × P̃_j`.
    pub u: Vec<Vec<Matrix>>,
    /// Output bases, `Q_i × Q̃`.
    pub v: Vec<Matrix>,
    /// Reshaped cores, shape `[Π_k P̃_j, Q̃, …, Q̃]`.
    pub cores: Vec<Tensor>,
    /// Loss before the first sweep followed by the loss after each sweep.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    /// Number of basis updates that kept the previous basis because the
    /// Procrustes target vanished.
    pub stagnations: usize,
}

impl MtotModel {
    pub fn inputs(&self) -> usize {
        self.u.len()
    }

    pub fn output_modes(&self) -> usize {
        self.v.len()
    }

    pub fn input_shape(&self, j: usize) -> Vec<usize> {
        self.u[j].iter().map(Matrix::rows).collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.v.iter().map(Matrix::rows).collect()
    }

    pub fn input_ranks(&self) -> Vec<usize> {
        self.u.iter().map(|f| f[0].cols()).collect()
    }

    pub fn output_rank(&self) -> usize {
        self.v[0].cols()
    }

    pub fn iterations(&self) -> usize {
        self.loss_trace.len().saturating_sub(1)
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }

    pub fn predict(&self, xs: &[Tensor]) -> Result<Tensor> {
        predict(self, xs)
    }

    /// Checks internal shape consistency (used after deserialisation).
    pub fn validate(&self) -> Result<()> {
        if self.u.is_empty() || self.v.is_empty() || self.cores.len() != self.u.len() {
            return Err(Error::ShapeMismatch("model has inconsistent part counts".into()));
        }
        let q = self.output_rank();
        if self.v.iter().any(|v| v.cols() != q || v.rows() < q) {
            return Err(Error::ShapeMismatch("output bases disagree on rank".into()));
        }
        for (j, (factors, core)) in self.u.iter().zip(&self.cores).enumerate() {
            if factors.is_empty() {
                return Err(Error::ShapeMismatch(format!("input {j} has no factors")));
            }
            let mut expected = vec![factors.iter().map(Matrix::cols).product::<usize>()];
            expected.extend(std::iter::repeat_n(q, self.v.len()));
            if core.shape() != expected.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "core {j} has shape {:?}, expected {expected:?}",
                    core.shape()
                )));
            }
        }
        if self.loss_trace.is_empty() {
            return Err(Error::ShapeMismatch("empty loss trace".into()));
        }
        Ok(())
    }
}

/// Result of a Procrustes basis update.
#[derive(Clone, Debug)]
pub struct BasisUpdate {
    pub basis: Matrix,
    /// The target matrix was zero and the previous basis was kept.
    pub stagnated: bool,
}

/// `Z = X_(1) (U_l ⊗ ⋯ ⊗ U_1)`, computed as `unfold(X ×_2 U_1ᵀ ⋯, 0)`.
pub fn input_projection(x: &Tensor, u: &[Matrix]) -> Result<Matrix> {
    if u.len() + 1 != x.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} factors for an input of order {}",
            u.len(),
            x.order()
        )));
    }
    let pairs: Vec<(&Matrix, usize)> = u.iter().enumerate().map(|(k, f)| (f, k + 1)).collect();
    x.multi_mode_product_transposed(&pairs)?.unfold(0)
}

/// Contribution of one input to the prediction: `C̃ ×_0 Z ×_1 V_1 ⋯ ×_d V_d`.
pub fn predict_component(core: &Tensor, z: &Matrix, v: &[Matrix]) -> Result<Tensor> {
    let mut t = core.mode_product(z, 0)?;
    for (i, vi) in v.iter().enumerate() {
        t = t.mode_product(vi, i + 1)?;
    }
    Ok(t)
}

/// `R_j = Y − Σ_{k≠j} C̃_k ×_0 Z_k ×_1 V_1 ⋯`
pub fn residual(y: &Tensor, cores: &[Tensor], zs: &[Matrix], v: &[Matrix], j: usize) -> Result<Tensor> {
    let mut r = y.clone();
    for (k, (core, z)) in cores.iter().zip(zs).enumerate() {
        if k != j {
            r.axpy(-1.0, &predict_component(core, z, v)?)?;
        }
    }
    Ok(r)
}

/// Least-squares core given the partial residual:
/// `C̃_j = R_j ×_0 Z_j⁺ ×_1 V_1ᵀ ⋯ ×_d V_dᵀ`.
pub fn update_core(r: &Tensor, z: &Matrix, v: &[Matrix]) -> Result<Tensor> {
    if r.order() != v.len() + 1 || r.shape()[0] != z.rows() {
        return Err(Error::ShapeMismatch(format!(
            "residual {:?} incompatible with Z {:?} and {} bases",
            r.shape(),
            z.shape(),
            v.len()
        )));
    }
    let mut c = r.mode_product(&z.pinv()?, 0)?;
    for (i, vi) in v.iter().enumerate() {
        c = c.mode_product_transposed(vi, i + 1)?;
    }
    Ok(c)
}

/// Procrustes update of output basis `i` with all cores and the other bases
/// held fixed.
pub fn update_basis(y: &Tensor, cores: &[Tensor], zs: &[Matrix], v: &[Matrix], i: usize) -> Result<BasisUpdate> {
    if i >= v.len() {
        return Err(Error::ModeOutOfRange {
            mode: i,
            order: v.len(),
        });
    }
    let mut a: Option<Tensor> = None;
    for (core, z) in cores.iter().zip(zs) {
        let t = core.mode_product(z, 0)?;
        match a.as_mut() {
            Some(acc) => acc.axpy(1.0, &t)?,
            None => a = Some(t),
        }
    }
    let mut a = a.ok_or_else(|| Error::InvalidConfig("no cores".into()))?;
    for (k, vk) in v.iter().enumerate() {
        if k != i {
            a = a.mode_product(vk, k + 1)?;
        }
    }
    let target = y.unfold(i + 1)?.matmul_t(&a.unfold(i + 1)?)?;
    procrustes(&target, &v[i])
}

/// Column-orthonormal `V` maximising `tr(Vᵀ target)`.
fn procrustes(target: &Matrix, previous: &Matrix) -> Result<BasisUpdate> {
    if target.frobenius_norm() == 0.0 {
        return Ok(BasisUpdate {
            basis: previous.clone(),
            stagnated: true,
        });
    }
    let svd = target.svd()?;
    Ok(BasisUpdate {
        basis: svd.u.matmul(&svd.vt)?,
        stagnated: false,
    })
}

/// `B_j` as a full tensor of shape `[P_j1, …, P_jl, Q_1, …, Q_d]`.
pub fn assemble_coefficients(model: &MtotModel, j: usize) -> Result<Tensor> {
    let factors = model
        .u
        .get(j)
        .ok_or_else(|| Error::InvalidConfig(format!("no input {j}")))?;
    let core = &model.cores[j];
    let l = factors.len();
    let ranks: Vec<usize> = factors.iter().map(Matrix::cols).collect();
    let mut shape = ranks.clone();
    shape.extend_from_slice(&core.shape()[1..]);
    let unfolded = Tensor::from_fn(&shape, |idx| {
        let mut lead = 0;
        let mut stride = 1;
        for k in 0..l {
            lead += idx[k] * stride;
            stride *= ranks[k];
        }
        let mut src = Vec::with_capacity(1 + idx.len() - l);
        src.push(lead);
        src.extend_from_slice(&idx[l..]);
        core.get(&src)
    });
    let mut pairs: Vec<(&Matrix, usize)> = factors.iter().enumerate().map(|(k, u)| (u, k)).collect();
    pairs.extend(model.v.iter().enumerate().map(|(i, v)| (v, l + i)));
    unfolded.multi_mode_product(&pairs)
}

/// `‖Y − Σ_j X_j * B_j‖²` with per-sample contraction.
pub fn loss(y: &Tensor, xs: &[Tensor], coefficients: &[Tensor]) -> Result<f64> {
    if xs.len() != coefficients.len() {
        return Err(Error::ShapeMismatch("one coefficient tensor per input".into()));
    }
    let mut r = y.clone();
    for (x, b) in xs.iter().zip(coefficients) {
        r.axpy(-1.0, &contract_samples(x, b)?)?;
    }
    Ok(r.norm_sq())
}

/// Input bases for one input under the configured strategy.
pub(crate) fn input_bases(x: &Tensor, rank: usize, basis: InputBasis) -> Result<Vec<Matrix>> {
    let modes: Vec<usize> = (1..x.order()).collect();
    match basis {
        InputBasis::Tucker => hosvd_factors(x, &modes, &vec![rank; modes.len()]),
        InputBasis::Identity => Ok(modes
            .iter()
            .map(|&k| Matrix::identity(x.shape()[k]).leading_columns(rank))
            .collect()),
    }
}

pub(crate) fn initial_output_bases(y: &Tensor, rank: usize, init: OutputInit, seed: u64) -> Result<Vec<Matrix>> {
    match init {
        OutputInit::Hosvd => {
            let modes: Vec<usize> = (1..y.order()).collect();
            hosvd_factors(y, &modes, &vec![rank; modes.len()])
        }
        OutputInit::Random => (1..y.order())
            .map(|k| {
                let mut rng = rng::stream(seed, &[0x0076_316e_6974, k as u64]);
                Matrix::from_fn(y.shape()[k], rank, |_, _| StandardNormal.sample(&mut rng)).orthonormalize_columns()
            })
            .collect(),
    }
}

/// `Z = Q·R` with `Q` (`M × r`) an orthonormal basis of the column space of
/// `Z` and `coef = W Σ⁻¹` (`n × r`) so that `Z⁺ = coef · Qᵀ`.
pub(crate) struct Projection {
    basis: Matrix,
    coef: Matrix,
    /// `Y ×_0 Qᵀ`
    qty: Tensor,
}

impl Projection {
    /// `None` when `Z` is numerically zero.
    pub(crate) fn new(z: &Matrix, y: &Tensor) -> Result<Option<Projection>> {
        let svd = z.svd()?;
        let r = svd.rank();
        if r == 0 {
            return Ok(None);
        }
        let basis = svd.u.leading_columns(r);
        let coef = Matrix::from_fn(z.cols(), r, |i, k| svd.vt[(k, i)] / svd.singular_values[k]);
        let qty = y.mode_product_transposed(&basis, 0)?;
        Ok(Some(Projection { basis, coef, qty }))
    }
}

pub(crate) struct EngineResult {
    pub cores: Vec<Tensor>,
    /// Output expansions; `v[i]` is orthonormal when `complete[i]`.
    pub v: Vec<Matrix>,
    pub complete: Vec<bool>,
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    pub stagnations: usize,
}

impl EngineResult {
    /// Orthonormal output bases giving the same predictions as `v`.
    pub fn orthonormal_bases(&self) -> Result<Vec<Matrix>> {
        self.v
            .iter()
            .zip(&self.complete)
            .map(|(v, &done)| {
                if done {
                    Ok(v.clone())
                } else {
                    let svd = v.svd()?;
                    svd.u.matmul(&svd.vt)
                }
            })
            .collect()
    }
}

/// Orthonormal basis of the span of the mode-`i + 1` fibers of every `qty`,
/// or `None` when that span is the whole mode (or empty).
///
/// A basis `V_i` only enters the compressed problem through `Q_iᵀ V_i`, so
/// the sweep can run on those coordinates; for responses with few
/// effective directions this shrinks every Procrustes problem.
fn response_subspace(projections: &[Option<&Projection>], i: usize) -> Result<Option<Matrix>> {
    let mut gram: Option<Matrix> = None;
    for pj in projections.iter().flatten() {
        let a = pj.qty.unfold(i + 1)?;
        let g = a.matmul_t(&a)?;
        gram = Some(match gram {
            Some(acc) => acc.add(&g)?,
            None => g,
        });
    }
    let Some(gram) = gram else { return Ok(None) };
    let n = gram.rows();
    let (values, vectors) = gram.symmetric_eigen()?;
    let top = values.first().copied().unwrap_or(0.0);
    let tol = top * n as f64 * f64::EPSILON;
    let s = values.iter().filter(|&&v| v > tol).count();
    if s == 0 || s == n {
        return Ok(None);
    }
    Ok(Some(vectors.leading_columns(s)))
}

/// Per output mode, the subspace the sweep works in (see
/// [`response_subspace`]).
pub(crate) fn response_subspaces(projections: &[Option<&Projection>], modes: usize) -> Result<Vec<Option<Matrix>>> {
    (0..modes).map(|i| response_subspace(projections, i)).collect()
}

/// Block coordinate descent on the compressed problem.
///
/// `core_rows[j]` is the number of columns of `Z_j` (rows of `C̃_j`) and
/// `subspaces` comes from [`response_subspaces`] on the same projections.
pub(crate) fn run_engine(
    y_norm_sq: f64,
    projections: &[Option<&Projection>],
    core_rows: &[usize],
    subspaces: &[Option<Matrix>],
    v0: Vec<Matrix>,
    tol: f64,
    max_iter: usize,
) -> Result<EngineResult> {
    let p = projections.len();
    let d = v0.len();
    let q = v0[0].cols();
    let core_tail = vec![q; d];

    let cross: Vec<Vec<Option<Matrix>>> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| match (projections[j], projections[k]) {
                    (Some(a), Some(b)) if j != k => a.basis.t_matmul(&b.basis).map(Some),
                    _ => Ok(None),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    // qty in subspace coordinates, and the bases expressed in them
    let qty: Vec<Option<Tensor>> = projections
        .iter()
        .map(|pj| {
            pj.map(|pj| {
                let mut t = pj.qty.clone();
                for (i, s) in subspaces.iter().enumerate() {
                    if let Some(s) = s {
                        t = t.mode_product_transposed(s, i + 1)?;
                    }
                }
                Ok(t)
            })
            .transpose()
        })
        .collect::<Result<_>>()?;
    let mut v: Vec<Matrix> = v0
        .iter()
        .zip(subspaces)
        .map(|(v, s)| match s {
            Some(s) => s.t_matmul(v),
            None => Ok(v.clone()),
        })
        .collect::<Result<_>>()?;
    let mut updated = vec![false; d];

    let mut reduced: Vec<Option<Tensor>> = vec![None; p];
    let mut trace = vec![y_norm_sq];
    let mut converged = false;
    let mut stagnations = 0;

    if y_norm_sq > 0.0 {
        for _ in 0..max_iter {
            for j in 0..p {
                let Some(qj) = &qty[j] else { continue };
                let mut dj = project_all(qj, &v, None)?;
                for k in 0..p {
                    if let (Some(g), Some(dk)) = (&cross[j][k], &reduced[k]) {
                        dj.axpy(-1.0, &dk.mode_product(g, 0)?)?;
                    }
                }
                reduced[j] = Some(dj);
            }
            for i in 0..d {
                let rows = v[i].rows();
                let mut target = Matrix::zeros(rows, q);
                for j in 0..p {
                    if let (Some(qj), Some(dj)) = (&qty[j], &reduced[j]) {
                        let t = project_all(qj, &v, Some(i))?;
                        let term = t.unfold(i + 1)?.matmul_t(&dj.unfold(i + 1)?)?;
                        target = target.add(&term)?;
                    }
                }
                let update = procrustes(&target, &v[i])?;
                stagnations += usize::from(update.stagnated);
                updated[i] |= !update.stagnated;
                v[i] = update.basis;
            }
            let w = reduced_loss(y_norm_sq, &qty, &cross, &reduced, &v)?;
            if !w.is_finite() {
                return Err(Error::NonFinite("loss became non-finite".into()));
            }
            let previous = *trace.last().expect("non-empty");
            trace.push(w);
            if (previous - w).abs() <= tol * y_norm_sq {
                converged = true;
                break;
            }
        }
    } else {
        converged = true;
    }

    // Back to the full output space. Once a basis has been updated, the
    // cores carry nothing outside the row space of `X_i`, so `Q_i X_i`
    // alone reproduces the fit.
    let (v, complete): (Vec<Matrix>, Vec<bool>) = (0..d)
        .map(|i| match (&subspaces[i], updated[i]) {
            (Some(s), true) => Ok((s.matmul(&v[i])?, s.cols() >= q)),
            (None, true) => Ok((v[i].clone(), true)),
            (_, false) => Ok((v0[i].clone(), true)),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();

    let cores = (0..p)
        .map(|j| {
            let mut shape = vec![core_rows[j]];
            shape.extend_from_slice(&core_tail);
            match (projections[j], &reduced[j]) {
                (Some(pj), Some(dj)) => dj.mode_product(&pj.coef, 0),
                _ => Ok(Tensor::zeros(&shape)),
            }
        })
        .collect::<Result<_>>()?;
    Ok(EngineResult {
        cores,
        v,
        complete,
        loss_trace: trace,
        converged,
        stagnations,
    })
}

/// `t ×_{k+1} V_kᵀ` for every output mode except `skip`.
fn project_all(t: &Tensor, v: &[Matrix], skip: Option<usize>) -> Result<Tensor> {
    let mut out = t.clone();
    for (k, vk) in v.iter().enumerate() {
        if Some(k) != skip {
            out = out.mode_product_transposed(vk, k + 1)?;
        }
    }
    Ok(out)
}

fn reduced_loss(
    y_norm_sq: f64,
    qty: &[Option<Tensor>],
    cross: &[Vec<Option<Matrix>>],
    reduced: &[Option<Tensor>],
    v: &[Matrix],
) -> Result<f64> {
    let mut w = y_norm_sq;
    for (j, (qj, dj)) in qty.iter().zip(reduced).enumerate() {
        let (Some(qj), Some(dj)) = (qj, dj) else { continue };
        w -= 2.0 * project_all(qj, v, None)?.dot(dj)?;
        w += dj.norm_sq();
        for (k, dk) in reduced.iter().enumerate() {
            if let (Some(g), Some(dk)) = (&cross[j][k], dk) {
                w += dj.dot(&dk.mode_product(g, 0)?)?;
            }
        }
    }
    Ok(w.max(0.0))
}

/// Fits the model with fixed input bases and alternating core / output
/// basis updates.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<MtotModel> {
    config.validate(data)?;
    if !data.is_finite() {
        return Err(Error::NonFinite("dataset contains NaN or infinite values".into()));
    }
    let u: Vec<Vec<Matrix>> = data
        .xs
        .iter()
        .zip(&config.input_ranks)
        .map(|(x, &r)| input_bases(x, r, config.input_basis))
        .collect::<Result<_>>()?;
    let v0 = initial_output_bases(&data.y, config.output_rank, config.output_init, config.seed)?;
    let zs: Vec<Matrix> = data
        .xs
        .iter()
        .zip(&u)
        .map(|(x, f)| input_projection(x, f))
        .collect::<Result<_>>()?;
    let projections: Vec<Option<Projection>> = zs.iter().map(|z| Projection::new(z, &data.y)).collect::<Result<_>>()?;
    let refs: Vec<Option<&Projection>> = projections.iter().map(Option::as_ref).collect();
    let core_rows: Vec<usize> = zs.iter().map(Matrix::cols).collect();
    let subspaces = response_subspaces(&refs, v0.len())?;
    let result = run_engine(
        data.y.norm_sq(),
        &refs,
        &core_rows,
        &subspaces,
        v0,
        config.tol,
        config.max_iter,
    )?;
    Ok(MtotModel {
        u,
        v: result.orthonormal_bases()?,
        cores: result.cores,
        loss_trace: result.loss_trace,
        converged: result.converged,
        stagnations: result.stagnations,
    })
}

/// `Ŷ = Σ_j X_j * B_j`, evaluated through the factors without forming `B_j`.
pub fn predict(model: &MtotModel, xs: &[Tensor]) -> Result<Tensor> {
    if xs.len() != model.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} inputs, got {}",
            model.inputs(),
            xs.len()
        )));
    }
    let mut acc: Option<Tensor> = None;
    for (j, x) in xs.iter().enumerate() {
        if x.order() < 2 || x.shape()[1..] != model.input_shape(j)[..] {
            return Err(Error::ShapeMismatch(format!(
                "input {j} has shape {:?}, model expects M x {:?}",
                x.shape(),
                model.input_shape(j)
            )));
        }
        if j > 0 && x.shape()[0] != xs[0].shape()[0] {
            return Err(Error::ShapeMismatch("inputs disagree on sample count".into()));
        }
        let z = input_projection(x, &model.u[j])?;
        let t = model.cores[j].mode_product(&z, 0)?;
        match acc.as_mut() {
            Some(a) => a.axpy(1.0, &t)?,
            None => acc = Some(t),
        }
    }
    let mut out = acc.expect("at least one input");
    for (i, v) in model.v.iter().enumerate() {
        out = out.mode_product(v, i + 1)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::kronecker;
    use crate::tensor::ModeSplit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_orthonormal(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        random_matrix(r, c, rng).orthonormalize_columns().unwrap()
    }

    /// Column vector with the first mode varying fastest.
    fn vec_first_fastest(t: &Tensor) -> Vec<f64> {
        let mut shape = t.shape().to_vec();
        shape.push(1);
        let rows: Vec<usize> = (0..t.order()).collect();
        t.reshape(&shape)
            .unwrap()
            .unfold_general(&ModeSplit::new(rows, vec![t.order()]))
            .unwrap()
            .into_vec()
    }

    fn small_problem(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = random_tensor(&[30, 4, 3], &mut rng);
        let x2 = random_tensor(&[30, 2], &mut rng);
        let y = random_tensor(&[30, 5, 4], &mut rng);
        Dataset::new(y, vec![x1, x2]).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let y = Tensor::zeros(&[3, 2]);
        assert!(Dataset::new(y.clone(), vec![]).is_err());
        assert!(Dataset::new(y.clone(), vec![Tensor::zeros(&[3])]).is_err());
        assert!(Dataset::new(y.clone(), vec![Tensor::zeros(&[4, 1])]).is_err());
        assert!(Dataset::new(y, vec![Tensor::zeros(&[3, 1])]).is_ok());
    }

    #[test]
    fn config_validation() {
        let data = small_problem(1);
        assert!(FitConfig::new(vec![3, 2], 4).validate(&data).is_ok());
        assert!(FitConfig::new(vec![4, 2], 4).validate(&data).is_err());
        assert!(FitConfig::new(vec![3, 2], 5).validate(&data).is_err());
        assert!(FitConfig::new(vec![3], 4).validate(&data).is_err());
        let mut c = FitConfig::new(vec![1, 1], 1);
        c.tol = 0.0;
        assert!(c.validate(&data).is_err());
    }

    #[test]
    fn input_projection_matches_kronecker_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[4, 5, 6], &mut rng);
        let u1 = random_matrix(5, 2, &mut rng);
        let u2 = random_matrix(6, 2, &mut rng);
        let z = input_projection(&x, &[u1.clone(), u2.clone()]).unwrap();
        let oracle = x.unfold(0).unwrap().matmul(&kronecker(&u2, &u1)).unwrap();
        assert!(z.sub(&oracle).unwrap().frobenius_norm() < 1e-12);
        let ident = input_projection(&x, &[Matrix::identity(5), Matrix::identity(6)]).unwrap();
        assert_eq!(ident, x.unfold(0).unwrap());
    }

    #[test]
    fn update_core_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(8, 3, &mut rng);
        let y = random_tensor(&[8, 4, 3], &mut rng);
        let v = vec![random_orthonormal(4, 2, &mut rng), random_orthonormal(3, 2, &mut rng)];
        let c = update_core(&y, &z, &v).unwrap();
        let design = kronecker(&v[1], &kronecker(&v[0], &z));
        let yv = Matrix::from_vec(96, 1, vec_first_fastest(&y)).unwrap();
        let normal = design.t_matmul(&design).unwrap();
        let rhs = design.t_matmul(&yv).unwrap();
        let solution = normal.pinv().unwrap().matmul(&rhs).unwrap();
        let got = Matrix::from_vec(12, 1, vec_first_fastest(&c)).unwrap();
        assert!(got.sub(&solution).unwrap().frobenius_norm() < 1e-10 * solution.frobenius_norm());
        assert_eq!(update_core(&Tensor::zeros(&[8, 4, 3]), &z, &v).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn procrustes_fixed_point_and_degenerate_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_orthonormal(5, 2, &mut rng);
        let up = procrustes(&q, &Matrix::zeros(5, 2)).unwrap();
        assert!(up.basis.sub(&q).unwrap().frobenius_norm() < 1e-12);
        let prev = random_orthonormal(5, 2, &mut rng);
        let up = procrustes(&Matrix::zeros(5, 2), &prev).unwrap();
        assert!(up.stagnated);
        assert_eq!(up.basis, prev);
    }

    #[test]
    fn compressed_sweep_matches_literal_updates() {
        let data = small_problem(5);
        let config = FitConfig::new(vec![2, 1], 3);
        let u: Vec<Vec<Matrix>> = data
            .xs
            .iter()
            .zip(&config.input_ranks)
            .map(|(x, &r)| input_bases(x, r, InputBasis::Tucker))
            .collect::<Result<_>>()
            .unwrap();
        let zs: Vec<Matrix> = data
            .xs
            .iter()
            .zip(&u)
            .map(|(x, f)| input_projection(x, f).unwrap())
            .collect();
        let mut v = initial_output_bases(&data.y, 3, OutputInit::Hosvd, 0).unwrap();
        let mut cores: Vec<Tensor> = zs.iter().map(|z| Tensor::zeros(&[z.cols(), 3, 3])).collect();
        let mut trace = vec![data.y.norm_sq()];
        for _ in 0..3 {
            for j in 0..cores.len() {
                let r = residual(&data.y, &cores, &zs, &v, j).unwrap();
                cores[j] = update_core(&r, &zs[j], &v).unwrap();
            }
            for i in 0..v.len() {
                v[i] = update_basis(&data.y, &cores, &zs, &v, i).unwrap().basis;
                assert!(v[i].orthonormality_error() < 1e-10);
            }
            let r = residual(&data.y, &cores, &zs, &v, usize::MAX).unwrap();
            trace.push(r.norm_sq());
        }
        let mut cfg = config.clone();
        cfg.max_iter = 3;
        cfg.tol = 1e-300;
        let model = fit(&data, &cfg).unwrap();
        for (a, b) in model.loss_trace.iter().zip(&trace) {
            assert!((a - b).abs() < 1e-10 * trace[0], "{a} vs {b}");
        }
        for (a, b) in model.v.iter().zip(&v) {
            assert!(a.sub(b).unwrap().frobenius_norm() < 1e-8);
        }
        for (a, b) in model.cores.iter().zip(&cores) {
            assert!(a.sub(b).unwrap().frobenius_norm() < 1e-8 * (1.0 + b.frobenius_norm()));
        }
    }

    #[test]
    fn few_response_directions_match_literal_sweeps() {
        // 4 samples in a 12-dimensional output: the projected responses
        // span at most 4 directions while the output rank is 6
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_tensor(&[4, 3], &mut rng);
        let data = Dataset::new(random_tensor(&[4, 12], &mut rng), vec![x]).unwrap();
        let mut cfg = FitConfig::new(vec![3], 6);
        cfg.max_iter = 4;
        cfg.tol = 1e-300;
        let model = fit(&data, &cfg).unwrap();
        assert!(model.v[0].orthonormality_error() < 1e-12);

        let u = input_bases(&data.xs[0], 3, InputBasis::Tucker).unwrap();
        let zs = vec![input_projection(&data.xs[0], &u).unwrap()];
        let mut v = initial_output_bases(&data.y, 6, OutputInit::Hosvd, 0).unwrap();
        let mut cores = vec![Tensor::zeros(&[3, 6])];
        let mut trace = vec![data.y.norm_sq()];
        for _ in 0..4 {
            let r = residual(&data.y, &cores, &zs, &v, 0).unwrap();
            cores[0] = update_core(&r, &zs[0], &v).unwrap();
            v[0] = update_basis(&data.y, &cores, &zs, &v, 0).unwrap().basis;
            trace.push(residual(&data.y, &cores, &zs, &v, usize::MAX).unwrap().norm_sq());
        }
        for (a, b) in model.loss_trace.iter().zip(&trace) {
            assert!((a - b).abs() < 1e-10 * trace[0], "{a} vs {b}");
        }
        let pred = model.predict(&data.xs).unwrap();
        let literal = predict_component(&cores[0], &zs[0], &v).unwrap();
        assert!(pred.sub(&literal).unwrap().frobenius_norm() < 1e-8 * literal.frobenius_norm());
        let r = data.y.sub(&pred).unwrap().norm_sq();
        assert!((r - model.final_loss()).abs() < 1e-9 * trace[0]);
    }

    #[test]
    fn loss_trace_is_monotone_and_matches_prediction() {
        let data = small_problem(6);
        let model = fit(&data, &FitConfig::new(vec![2, 2], 3)).unwrap();
        for w in model.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * model.loss_trace[0]);
        }
        let pred = model.predict(&data.xs).unwrap();
        let r = data.y.sub(&pred).unwrap().norm_sq();
        assert!((r - model.final_loss()).abs() < 1e-10 * r);
        let bs: Vec<Tensor> = (0..2).map(|j| assemble_coefficients(&model, j).unwrap()).collect();
        let l = loss(&data.y, &data.xs, &bs).unwrap();
        assert!((l - r).abs() < 1e-10 * r);
    }

    #[test]
    fn zero_response_returns_zero_model() {
        let mut data = small_problem(7);
        data.y = Tensor::zeros(data.y.shape());
        let model = fit(&data, &FitConfig::new(vec![1, 1], 1)).unwrap();
        assert_eq!(model.loss_trace, vec![0.0]);
        assert!(model.cores.iter().all(|c| c.norm_sq() == 0.0));
    }

    #[test]
    fn zero_input_is_ignored() {
        let mut data = small_problem(8);
        data.xs[1] = Tensor::zeros(data.xs[1].shape());
        let model = fit(&data, &FitConfig::new(vec![2, 1], 2)).unwrap();
        assert_eq!(model.cores[1].norm_sq(), 0.0);
        assert!(model.final_loss() < model.loss_trace[0]);
    }

    #[test]
    fn predict_rejects_bad_shapes() {
        let data = small_problem(9);
        let model = fit(&data, &FitConfig::new(vec![1, 1], 1)).unwrap();
        assert!(model.predict(&data.xs[..1]).is_err());
        assert!(model.predict(&[data.xs[1].clone(), data.xs[0].clone()]).is_err());
    }
}
