//! Text formats: `.ten` tensors, dataset manifests and model archives.
//!
//! A `.ten` file starts with `TEN1 <order> <I_1> … <I_n>` and is followed by
//! the entries in buffer order (last mode fastest), whitespace separated.
//! Values are written with 17 significant digits so they read back exactly.
//!
//! A model archive is a header line `MTOT-ARCHIVE <kind>`, one line of JSON
//! describing the model, and a sequence of `BLOCK <name>` sections each
//! holding an embedded `.ten` tensor.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pcr::PcrModel;
use crate::solver::{Dataset, MtotModel};
use crate::tensor::Tensor;

const TEN_MAGIC: &str = "TEN1";
const ARCHIVE_MAGIC: &str = "MTOT-ARCHIVE";

fn format_ten(t: &Tensor, out: &mut String) {
    out.push_str(TEN_MAGIC);
    let _ = write!(out, " {}", t.order());
    for d in t.shape() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let row = *t.shape().last().expect("order >= 1");
    for chunk in t.as_slice().chunks(row) {
        for (i, v) in chunk.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
}

pub fn write_ten<W: Write>(t: &Tensor, mut w: W) -> Result<()> {
    let mut s = String::new();
    format_ten(t, &mut s);
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn parse_token<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse(format!("unexpected end of input, expected {what}")))?;
    tok.parse()
        .map_err(|_| Error::Parse(format!("cannot parse '{tok}' as {what}")))
}

/// Reads one `.ten` tensor from a token stream.
fn read_ten_tokens<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Tensor> {
    match tokens.next() {
        Some(TEN_MAGIC) => {}
        Some(other) => return Err(Error::Parse(format!("expected {TEN_MAGIC}, found '{other}'"))),
        None => return Err(Error::Parse("empty tensor file".into())),
    }
    let order: usize = parse_token(tokens.next(), "tensor order")?;
    if order == 0 {
        return Err(Error::Parse("tensor order must be at least 1".into()));
    }
    let shape = (0..order)
        .map(|_| parse_token(tokens.next(), "mode extent"))
        .collect::<Result<Vec<usize>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse("tensor size overflows".into()))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(parse_token(tokens.next(), "tensor value")?);
    }
    Tensor::new(shape, data).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_ten<R: Read>(mut r: R) -> Result<Tensor> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    let mut tokens = s.split_whitespace();
    let t = read_ten_tokens(&mut tokens)?;
    if let Some(extra) = tokens.next() {
        return Err(Error::Parse(format!("trailing data after tensor: '{extra}'")));
    }
    Ok(t)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut s = String::new();
    format_ten(t, &mut s);
    fs::write(path, s)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    read_ten(BufReader::new(fs::File::open(path)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Role {
    pub name: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub kind: RoleKind,
}

/// JSON description of a dataset stored as `.ten` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub sigma: f64,
    pub roles: Vec<Role>,
    /// Noiseless response, when the generator provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

/// Writes `<stem>.json` plus one `.ten` file per tensor into `dir` and
/// returns the manifest path.
#[allow(clippy::too_many_arguments)]
pub fn write_dataset(
    dir: &Path,
    stem: &str,
    kind: &str,
    seed: u64,
    sigma: f64,
    data: &Dataset,
    input_names: &[String],
    truth: Option<&Tensor>,
) -> Result<PathBuf> {
    if input_names.len() != data.xs.len() {
        return Err(Error::InvalidConfig(format!(
            "{} input names for {} inputs",
            input_names.len(),
            data.xs.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut roles = Vec::with_capacity(data.xs.len() + 1);
    for (name, x) in input_names.iter().zip(&data.xs) {
        let file = format!("{stem}_{name}.ten");
        save_tensor(&dir.join(&file), x)?;
        roles.push(Role {
            name: name.clone(),
            path: file,
            kind: RoleKind::Input,
        });
    }
    let file = format!("{stem}_y.ten");
    save_tensor(&dir.join(&file), &data.y)?;
    roles.push(Role {
        name: "y".into(),
        path: file,
        kind: RoleKind::Output,
    });
    let truth = match truth {
        Some(t) => {
            let file = format!("{stem}_y_clean.ten");
            save_tensor(&dir.join(&file), t)?;
            Some(file)
        }
        None => None,
    };
    let manifest = Manifest {
        kind: kind.into(),
        seed,
        sigma,
        roles,
        truth,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// A dataset read back from its manifest.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub data: Dataset,
    pub truth: Option<Tensor>,
}

pub fn read_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut xs = Vec::new();
    let mut y = None;
    for role in &manifest.roles {
        let t = load_tensor(&dir.join(&role.path))?;
        match role.kind {
            RoleKind::Input => xs.push(t),
            RoleKind::Output if y.is_none() => y = Some(t),
            RoleKind::Output => return Err(Error::Parse("manifest lists more than one output".into())),
        }
    }
    let y = y.ok_or_else(|| Error::Parse("manifest has no output role".into()))?;
    let truth = manifest.truth.as_ref().map(|p| load_tensor(&dir.join(p))).transpose()?;
    Ok(LoadedDataset {
        data: Dataset::new(y, xs)?,
        manifest,
        truth,
    })
}

/// A fitted model of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Mtot(MtotModel),
    Pcr(PcrModel),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Mtot(_) => "mtot",
            SavedModel::Pcr(_) => "pcr",
        }
    }

    pub fn predict(&self, xs: &[Tensor]) -> Result<Tensor> {
        match self {
            SavedModel::Mtot(m) => m.predict(xs),
            SavedModel::Pcr(m) => m.predict(xs),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MtotHeader {
    inputs: usize,
    output_modes: usize,
    input_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
    input_ranks: Vec<usize>,
    output_rank: usize,
    loss_trace: Vec<f64>,
    converged: bool,
    stagnations: usize,
}

#[derive(Serialize, Deserialize)]
struct PcrHeader {
    v: f64,
    input_components: usize,
    output_components: usize,
    input_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
}

fn vector_tensor(v: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![v.len()], v.to_vec())
}

fn matrix_of(t: Tensor, what: &str) -> Result<Matrix> {
    match *t.shape() {
        [r, c] => Matrix::from_vec(r, c, t.into_vec()),
        _ => Err(Error::Parse(format!("block {what} is not a matrix"))),
    }
}

pub fn write_model<W: Write>(model: &SavedModel, mut w: W) -> Result<()> {
    let mut blocks: Vec<(String, Tensor)> = Vec::new();
    let header = match model {
        SavedModel::Mtot(m) => {
            for (j, factors) in m.u.iter().enumerate() {
                for (k, f) in factors.iter().enumerate() {
                    blocks.push((format!("u_{j}_{k}"), Tensor::from_matrix(f)));
                }
            }
            for (i, v) in m.v.iter().enumerate() {
                blocks.push((format!("v_{i}"), Tensor::from_matrix(v)));
            }
            for (j, c) in m.cores.iter().enumerate() {
                blocks.push((format!("core_{j}"), c.clone()));
            }
            serde_json::to_string(&MtotHeader {
                inputs: m.inputs(),
                output_modes: m.output_modes(),
                input_shapes: (0..m.inputs()).map(|j| m.input_shape(j)).collect(),
                output_shape: m.output_shape(),
                input_ranks: m
                    .u
                    .iter()
                    .map(|f| f.iter().map(Matrix::cols).max().unwrap_or(0))
                    .collect(),
                output_rank: m.output_rank(),
                loss_trace: m.loss_trace.clone(),
                converged: m.converged,
                stagnations: m.stagnations,
            })?
        }
        SavedModel::Pcr(m) => {
            blocks.push(("input_mean".into(), vector_tensor(&m.input_mean)?));
            blocks.push(("input_loadings".into(), Tensor::from_matrix(&m.input_loadings)));
            blocks.push(("output_mean".into(), vector_tensor(&m.output_mean)?));
            blocks.push(("output_loadings".into(), Tensor::from_matrix(&m.output_loadings)));
            blocks.push(("coefficients".into(), Tensor::from_matrix(&m.coefficients)));
            serde_json::to_string(&PcrHeader {
                v: m.v,
                input_components: m.input_components(),
                output_components: m.output_components(),
                input_shapes: m.input_shapes.clone(),
                output_shape: m.output_shape.clone(),
            })?
        }
    };
    let mut s = format!("{ARCHIVE_MAGIC} {}\n{header}\n", model.kind());
    for (name, t) in &blocks {
        let _ = writeln!(s, "BLOCK {name}");
        format_ten(t, &mut s);
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<SavedModel> {
    let mut reader = BufReader::new(r);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let kind = match first.split_whitespace().collect::<Vec<_>>()[..] {
        [ARCHIVE_MAGIC, kind] => kind.to_string(),
        _ => return Err(Error::Parse("not a model archive".into())),
    };
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let mut rest = String::new();
    reader.read_to_string(&mut rest)?;
    let mut tokens = rest.split_whitespace();
    let mut blocks: HashMap<String, Tensor> = HashMap::new();
    while let Some(tok) = tokens.next() {
        if tok != "BLOCK" {
            return Err(Error::Parse(format!("expected BLOCK, found '{tok}'")));
        }
        let name: String = parse_token(tokens.next(), "block name")?;
        let t = read_ten_tokens(&mut tokens)?;
        if blocks.insert(name.clone(), t).is_some() {
            return Err(Error::Parse(format!("duplicate block {name}")));
        }
    }
    let mut take = |name: &str| {
        blocks
            .remove(name)
            .ok_or_else(|| Error::Parse(format!("archive has no block {name}")))
    };
    let model = match kind.as_str() {
        "mtot" => {
            let h: MtotHeader = serde_json::from_str(header.trim())?;
            if h.input_shapes.len() != h.inputs || h.output_shape.len() != h.output_modes {
                return Err(Error::Parse("archive header is inconsistent".into()));
            }
            let mut u = Vec::with_capacity(h.inputs);
            for (j, shape) in h.input_shapes.iter().enumerate() {
                let factors = (0..shape.len())
                    .map(|k| {
                        let name = format!("u_{j}_{k}");
                        matrix_of(take(&name)?, &name)
                    })
                    .collect::<Result<Vec<_>>>()?;
                u.push(factors);
            }
            let v = (0..h.output_modes)
                .map(|i| {
                    let name = format!("v_{i}");
                    matrix_of(take(&name)?, &name)
                })
                .collect::<Result<Vec<_>>>()?;
            let cores = (0..h.inputs)
                .map(|j| take(&format!("core_{j}")))
                .collect::<Result<Vec<_>>>()?;
            let m = MtotModel {
                u,
                v,
                cores,
                loss_trace: h.loss_trace,
                converged: h.converged,
                stagnations: h.stagnations,
            };
            m.validate()?;
            if (0..m.inputs()).any(|j| m.input_shape(j) != h.input_shapes[j]) || m.output_shape() != h.output_shape {
                return Err(Error::Parse("archive blocks disagree with the header".into()));
            }
            SavedModel::Mtot(m)
        }
        "pcr" => {
            let h: PcrHeader = serde_json::from_str(header.trim())?;
            let m = PcrModel {
                input_mean: take("input_mean")?.into_vec(),
                input_loadings: matrix_of(take("input_loadings")?, "input_loadings")?,
                output_mean: take("output_mean")?.into_vec(),
                output_loadings: matrix_of(take("output_loadings")?, "output_loadings")?,
                coefficients: matrix_of(take("coefficients")?, "coefficients")?,
                v: h.v,
                input_shapes: h.input_shapes,
                output_shape: h.output_shape,
            };
            m.validate()?;
            if m.input_components() != h.input_components || m.output_components() != h.output_components {
                return Err(Error::Parse("archive blocks disagree with the header".into()));
            }
            SavedModel::Pcr(m)
        }
        other => return Err(Error::Parse(format!("unknown model kind '{other}'"))),
    };
    if let Some(name) = blocks.keys().next() {
        return Err(Error::Parse(format!("unexpected block {name}")));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    read_model(fs::File::open(path)?)
}
