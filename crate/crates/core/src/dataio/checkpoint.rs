//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"CRWDFER\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header (input shape, layer specs, parameter
//!               counts per layer, metadata)
//! 20+H    8·N   parameters as f64 little-endian, layer by layer, weights
//!               then biases; N is the sum of the header's parameter counts
//! ```
//!
//! Files are written atomically and contain nothing time-dependent, so the
//! same model and metadata always produce the same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::net::{LayerSpec, Model};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRWDFER\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub trial: usize,
    pub scheme: String,
    pub emotions: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    param_counts: Vec<[usize; 2]>,
    metadata: CheckpointMeta,
}

pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        input_shape: model.input_shape(),
        layers: model.specs(),
        param_counts: model
            .layers()
            .iter()
            .map(|l| [l.weights().len(), l.bias().len()])
            .collect(),
        metadata: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(20 + json.len() + 8 * model.param_count());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for layer in model.layers() {
        for v in layer.weights().iter().chain(layer.bias()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path.as_ref(), &bytes)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::CheckpointTruncated(format!(
            "{what}: need {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let data = fs::read(path)?;
    let mut rest = data.as_slice();
    let magic = take(&mut rest, 8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(
        take(&mut rest, 8, "header length")?
            .try_into()
            .expect("8 bytes"),
    );
    let header_len = usize::try_from(header_len)
        .map_err(|_| Error::CheckpointFormat("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(take(&mut rest, header_len, "header")?)
        .map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;

    let mut model = Model::zeroed(header.input_shape, &header.layers)
        .map_err(|e| Error::CheckpointShape(e.to_string()))?;
    if header.param_counts.len() != model.layers().len() {
        return Err(Error::CheckpointShape(
            "parameter table does not match layers".into(),
        ));
    }
    let mut params = Vec::with_capacity(header.param_counts.len());
    for (i, ([nw, nb], layer)) in header.param_counts.iter().zip(model.layers()).enumerate() {
        if *nw != layer.weights().len() || *nb != layer.bias().len() {
            return Err(Error::CheckpointShape(format!(
                "layer {i}: header declares {nw}+{nb} parameters, layer needs {}+{}",
                layer.weights().len(),
                layer.bias().len()
            )));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            Ok(take(&mut rest, 8 * n, "parameters")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let w = read(*nw)?;
        let b = read(*nb)?;
        params.push((w, b));
    }
    if !rest.is_empty() {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    model.load_params(params)?;
    Ok((model, header.metadata))
}

/// Loads a checkpoint and checks it against the run's input shape and class
/// count.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    input_shape: [usize; 3],
    classes: usize,
) -> Result<(Model, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    if model.classes() != classes {
        return Err(Error::CheckpointShape(format!(
            "checkpoint has {} classes, run expects {classes}",
            model.classes()
        )));
    }
    if model.input_shape() != input_shape {
        return Err(Error::CheckpointShape(format!(
            "checkpoint input {:?}, run expects {input_shape:?}",
            model.input_shape()
        )));
    }
    Ok((model, meta))
}
