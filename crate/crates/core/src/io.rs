//! Safetensors interchange for projector weights and token dumps.
//!
//! Projector files hold `proj.{i}.weight` (out × in, F32) and `proj.{i}.bias`
//! (out, F32) for `i = 0..L`, plus the metadata key `activation`. Factorized
//! projectors additionally record `activations`, a comma-separated list of
//! the `L - 1` boundary activations. Token dumps hold `vision_tokens`
//! (N × d, F32) and optionally `patch_ids` (N, I32).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::numerics::TokenMatrix;
use crate::projector::{Activation, AffineLayer, Projector};

pub const VISION_TOKENS: &str = "vision_tokens";
pub const PATCH_IDS: &str = "patch_ids";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse(bytes: &[u8]) -> Result<SafeTensors<'_>> {
    SafeTensors::deserialize(bytes)
        .map_err(|e| Error::format(format!("not a safetensors file: {e}")))
}

fn f32_values(name: &str, view: &TensorView<'_>, rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    if view.dtype() != Dtype::F32 {
        return Err(Error::format(format!(
            "tensor {name:?} has dtype {:?}, expected F32",
            view.dtype()
        )));
    }
    let shape = view.shape().to_vec();
    if shape.len() != rank {
        return Err(Error::format(format!(
            "tensor {name:?} has shape {shape:?}, expected rank {rank}"
        )));
    }
    let values = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, values))
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn serialize(
    tensors: Vec<(String, Dtype, Vec<usize>, Vec<u8>)>,
    metadata: Option<HashMap<String, String>>,
) -> Result<Vec<u8>> {
    let views = tensors
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, &metadata).map_err(|e| Error::format(e.to_string()))
}

pub fn projector_from_bytes(bytes: &[u8]) -> Result<Projector> {
    let (_, meta) = SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::format(format!("not a safetensors file: {e}")))?;
    let st = parse(bytes)?;

    let mut weights = BTreeMap::new();
    let mut biases = BTreeMap::new();
    for (name, view) in st.iter() {
        let Some(rest) = name.strip_prefix("proj.") else {
            continue;
        };
        let (index, kind) = rest
            .split_once('.')
            .ok_or_else(|| Error::format(format!("unrecognized tensor name {name:?}")))?;
        let index: usize = index
            .parse()
            .map_err(|_| Error::format(format!("tensor {name:?} has a non-numeric layer index")))?;
        match kind {
            "weight" => {
                weights.insert(index, f32_values(name, &view, 2)?);
            }
            "bias" => {
                biases.insert(index, f32_values(name, &view, 1)?);
            }
            _ => return Err(Error::format(format!("unrecognized tensor name {name:?}"))),
        }
    }
    if weights.is_empty() {
        return Err(Error::format("no proj.{i}.weight tensors found"));
    }
    let n_layers = weights.len();
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (wshape, wvals) = weights
            .remove(&i)
            .ok_or_else(|| Error::format(format!("layer index gap: proj.{i}.weight is missing")))?;
        let (bshape, bvals) = biases
            .remove(&i)
            .ok_or_else(|| Error::format(format!("proj.{i}.bias is missing")))?;
        let weight = Array2::from_shape_vec((wshape[0], wshape[1]), wvals)
            .map_err(|e| Error::format(format!("proj.{i}.weight: {e}")))?;
        let bias = Array1::from_vec(bvals);
        if bshape[0] != wshape[0] {
            return Err(Error::format(format!(
                "proj.{i}.bias has length {} but proj.{i}.weight has {} rows",
                bshape[0], wshape[0]
            )));
        }
        layers.push(AffineLayer::new(weight, bias).map_err(|e| match e {
            Error::NonFinite(m) => Error::format(format!("layer {i}: {m}")),
            other => other,
        })?);
    }
    if let Some(&extra) = biases.keys().next() {
        return Err(Error::format(format!(
            "proj.{extra}.bias has no matching weight"
        )));
    }

    let info = meta.metadata().clone().unwrap_or_default();
    let activation: Activation = info
        .get("activation")
        .ok_or_else(|| Error::format("metadata key \"activation\" is missing"))?
        .parse()?;
    let boundaries = match info.get("activations") {
        Some(list) if !list.is_empty() => list
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<Activation>>>()?,
        _ => vec![activation; n_layers - 1],
    };
    if boundaries.len() + 1 != n_layers {
        return Err(Error::format(format!(
            "metadata \"activations\" lists {} boundaries for {n_layers} layers",
            boundaries.len()
        )));
    }
    Projector::with_boundaries(layers, boundaries).map_err(|e| Error::format(e.to_string()))
}

pub fn projector_to_bytes(p: &Projector) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    for (i, layer) in p.layers().iter().enumerate() {
        let w = layer.weight();
        tensors.push((
            format!("proj.{i}.weight"),
            Dtype::F32,
            vec![w.nrows(), w.ncols()],
            f32_bytes(w.iter().copied()),
        ));
        tensors.push((
            format!("proj.{i}.bias"),
            Dtype::F32,
            vec![layer.bias().len()],
            f32_bytes(layer.bias().iter().copied()),
        ));
    }
    let mut meta = HashMap::new();
    meta.insert("activation".to_string(), p.activation().name().to_string());
    let uniform = p
        .boundary_activations()
        .iter()
        .all(|a| *a == p.activation());
    if !uniform {
        let list: Vec<&str> = p.boundary_activations().iter().map(|a| a.name()).collect();
        meta.insert("activations".to_string(), list.join(","));
    }
    serialize(tensors, Some(meta))
}

pub fn load_projector(path: &Path) -> Result<Projector> {
    projector_from_bytes(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn save_projector(p: &Projector, path: &Path) -> Result<()> {
    write_file(path, &projector_to_bytes(p)?)
}

pub fn tokens_from_bytes(bytes: &[u8]) -> Result<TokenMatrix> {
    let st = parse(bytes)?;
    let view = st
        .tensor(VISION_TOKENS)
        .map_err(|_| Error::format(format!("tensor {VISION_TOKENS:?} is missing")))?;
    let (shape, values) = f32_values(VISION_TOKENS, &view, 2)?;
    let matrix = TokenMatrix::from_rows(shape[0], shape[1], values)
        .map_err(|e| Error::format(format!("tensor {VISION_TOKENS:?}: {e}")))?;
    let Ok(ids) = st.tensor(PATCH_IDS) else {
        return Ok(matrix);
    };
    if ids.dtype() != Dtype::I32 || ids.shape().len() != 1 {
        return Err(Error::format(format!(
            "tensor {PATCH_IDS:?} must be a rank-1 I32 tensor, got {:?} {:?}",
            ids.dtype(),
            ids.shape()
        )));
    }
    let ids = ids
        .data()
        .chunks_exact(4)
        .map(|c| {
            let v = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            u32::try_from(v)
                .map_err(|_| Error::format(format!("tensor {PATCH_IDS:?} has negative id {v}")))
        })
        .collect::<Result<Vec<u32>>>()?;
    matrix
        .with_patch_ids(ids)
        .map_err(|e| Error::format(format!("tensor {PATCH_IDS:?}: {e}")))
}

pub fn tokens_to_bytes(x: &TokenMatrix) -> Result<Vec<u8>> {
    let mut tensors = vec![(
        VISION_TOKENS.to_string(),
        Dtype::F32,
        vec![x.n_tokens(), x.dim()],
        f32_bytes(x.data().iter().copied()),
    )];
    if let Some(ids) = x.patch_ids() {
        tensors.push((
            PATCH_IDS.to_string(),
            Dtype::I32,
            vec![ids.len()],
            ids.iter().flat_map(|&v| (v as i32).to_le_bytes()).collect(),
        ));
    }
    serialize(tensors, None)
}

pub fn load_tokens(path: &Path) -> Result<TokenMatrix> {
    tokens_from_bytes(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn save_tokens(x: &TokenMatrix, path: &Path) -> Result<()> {
    write_file(path, &tokens_to_bytes(x)?)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}
