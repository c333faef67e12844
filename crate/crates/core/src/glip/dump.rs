//! Trained-model persistence: a shape-tagged binary tensor file plus the loss
//! history as JSON.
//!
//! Binary layout: `b"GATM"`, version `0x01`, `u32` tensor count, then per
//! tensor a `u32` name length, UTF-8 name, `u32` rows, `u32` cols and
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::gat::{GatModel, GatParams, LEAKY_SLOPE, PARAM_NAMES};
use super::train::{LossParts, TrainState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GATM";
const VERSION: u8 = 1;

pub fn encode_model(model: &GatModel) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    out.extend_from_slice(&(PARAM_NAMES.len() as u32).to_le_bytes());
    for (name, t) in PARAM_NAMES.iter().zip(model.params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for v in t.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Validation("model file is truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<GatModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Validation("not a GATM model file".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Validation(format!("unsupported model version {version}")));
    }
    let count = r.u32()?;
    if count != PARAM_NAMES.len() {
        return Err(Error::Validation(format!("expected {} tensors, found {count}", PARAM_NAMES.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for want in PARAM_NAMES {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Validation(e.to_string()))?;
        if name != want {
            return Err(Error::Validation(format!("expected tensor {want:?}, found {name:?}")));
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        let data: Vec<f64> = r
            .take(rows * cols * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Array2::from_shape_vec((rows, cols), data).expect("sized above"));
    }
    if r.pos != bytes.len() {
        return Err(Error::Validation("trailing bytes after model tensors".into()));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("count checked");
    Ok(GatModel {
        params: GatParams {
            w1: next(),
            att1: next(),
            w2: next(),
            att2: next(),
            classifier: next(),
        },
        leaky_slope: LEAKY_SLOPE,
    })
}

pub fn write_model(path: impl AsRef<Path>, model: &GatModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<GatModel> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Serialize, Deserialize)]
struct HistoryFile {
    epochs: usize,
    optimizer_step: u64,
    history: Vec<LossParts>,
}

pub fn write_train_state(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    let file = HistoryFile {
        epochs: state.history.len(),
        optimizer_step: state.optimizer.step,
        history: state.history.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("history serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
