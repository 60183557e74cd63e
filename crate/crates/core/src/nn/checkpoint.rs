//! Model checkpoints: a JSON header followed by FMAP blocks, one per tensor.
//!
//! Layout:
//! - magic `b"MCKP"` and version byte `0x01`
//! - `u32` little-endian header length, then the UTF-8 JSON header
//! - for every network in header order: per layer the weight (`out × in × 1`)
//!   and bias (`out × 1 × 1`), then per normalized layer scale, shift,
//!   running mean and running variance (`d × 1 × 1`), each an FMAP block

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Linear, MlpConfig, MlpParams};
use crate::error::{Error, Result};
use crate::tensor_io::{read_block, write_block};

const MAGIC: &[u8; 4] = b"MCKP";
const VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub config: MlpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub epoch: usize,
    pub seed: u64,
    pub networks: Vec<NetworkEntry>,
    /// Model-specific metadata (prototypes, embedding source, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub networks: Vec<MlpParams>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&MlpParams> {
        self.header
            .networks
            .iter()
            .position(|n| n.name == name)
            .map(|i| &self.networks[i])
            .ok_or_else(|| Error::Malformed { what: "checkpoint".into(), detail: format!("no network {name:?}") })
    }
}

fn f32s(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

fn vector_block(out: &mut Vec<u8>, v: &Array1<f64>) -> Result<()> {
    write_block(out, [v.len() as u32, 1, 1], &f32s(v.as_slice().expect("standard layout")))
}

pub fn encode_checkpoint(header: &CheckpointHeader, networks: &[&MlpParams]) -> Result<Vec<u8>> {
    if header.networks.len() != networks.len() {
        return Err(Error::DimMismatch { expected: header.networks.len(), found: networks.len() });
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for net in networks {
        for l in &net.layers {
            let (o, i) = l.weight.dim();
            write_block(&mut out, [o as u32, i as u32, 1], &f32s(l.weight.as_slice().expect("standard layout")))?;
            vector_block(&mut out, &l.bias)?;
        }
        for n in &net.norms {
            for v in [&n.scale, &n.shift, &n.running_mean, &n.running_var] {
                vector_block(&mut out, v)?;
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, networks: &[&MlpParams]) -> Result<()> {
    fs::write(path, encode_checkpoint(header, networks)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

pub fn decode_checkpoint(bytes: &[u8], source: &Path) -> Result<Checkpoint> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC || bytes[4] != VERSION {
        return Err(Error::BadMagic(source.to_path_buf()));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + len {
        return Err(Error::TruncatedPayload { path: source.to_path_buf(), expected: 9 + len, found: bytes.len() });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[9..9 + len])?;
    let mut cursor = Cursor::new(&bytes[9 + len..]);
    let mut networks = Vec::with_capacity(header.networks.len());
    for entry in &header.networks {
        entry.config.validate()?;
        let mut layers = Vec::new();
        for w in entry.config.layer_dims.windows(2) {
            let weight = read_matrix(&mut cursor, source, (w[1], w[0]))?;
            let bias = read_vector(&mut cursor, source, w[1])?;
            layers.push(Linear { weight, bias });
        }
        let mut params = MlpParams::from_layers(&entry.config, layers)?;
        for norm in params.norms.iter_mut() {
            let d = norm.scale.len();
            norm.scale = read_vector(&mut cursor, source, d)?;
            norm.shift = read_vector(&mut cursor, source, d)?;
            norm.running_mean = read_vector(&mut cursor, source, d)?;
            norm.running_var = read_vector(&mut cursor, source, d)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteValue { index: 0 });
        }
        networks.push(params);
    }
    let mut rest = Vec::new();
    cursor.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Malformed { what: source.display().to_string(), detail: "trailing bytes".into() });
    }
    Ok(Checkpoint { header, networks })
}

fn read_matrix(r: &mut impl Read, source: &Path, shape: (usize, usize)) -> Result<Array2<f64>> {
    let b = read_block(r, source)?;
    if b.dims != [shape.0 as u32, shape.1 as u32, 1] {
        return Err(Error::ShapeMismatch { expected: shape, found: (b.dims[0] as usize, b.dims[1] as usize) });
    }
    Ok(Array2::from_shape_vec(shape, b.data.iter().map(|&v| v as f64).collect()).expect("checked shape"))
}

fn read_vector(r: &mut impl Read, source: &Path, len: usize) -> Result<Array1<f64>> {
    let b = read_block(r, source)?;
    if b.dims != [len as u32, 1, 1] {
        return Err(Error::ShapeMismatch { expected: (len, 1), found: (b.dims[0] as usize, b.dims[1] as usize) });
    }
    Ok(Array1::from(b.data.iter().map(|&v| v as f64).collect::<Vec<_>>()))
}
