//! FMAP binary tensor files.
//!
//! Layout (little-endian):
//! - magic `b"FMAP"` and version byte `0x01`
//! - `u32` height, `u32` width, `u32` channels
//! - `height * width * channels` `f32` values, position-major

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::types::{FeatureMaps, LayerTag};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 12;

/// A raw FMAP block before it is attached to a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dims: [u32; 3],
    pub data: Vec<f32>,
}

pub fn encode_block(dims: [u32; 3], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_block<W: Write>(w: &mut W, dims: [u32; 3], data: &[f32]) -> Result<()> {
    w.write_all(&encode_block(dims, data))?;
    Ok(())
}

/// Reads one block from a stream; `source` only labels errors.
pub fn read_block<R: Read>(r: &mut R, source: &Path) -> Result<Block> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or_truncated(r, &mut header, source)?;
    if &header[..4] != MAGIC || header[4] != VERSION {
        return Err(Error::BadMagic(source.to_path_buf()));
    }
    let dims = parse_dims(&header);
    let n = numel(dims, source)?;
    let mut payload = vec![0u8; n * 4];
    read_exact_or_truncated(r, &mut payload, source)?;
    Ok(Block { dims, data: decode_f32(&payload) })
}

fn parse_dims(header: &[u8]) -> [u32; 3] {
    let mut dims = [0u32; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let off = 5 + 4 * k;
        *d = u32::from_le_bytes(header[off..off + 4].try_into().unwrap());
    }
    dims
}

fn numel(dims: [u32; 3], source: &Path) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or_else(|| Error::Malformed {
        what: source.display().to_string(),
        detail: format!("dims {dims:?} overflow"),
    })
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], source: &Path) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::TruncatedPayload { path: source.to_path_buf(), expected: buf.len(), found: filled })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Decodes a whole FMAP file image; the payload must match the declared dims exactly.
pub fn decode_feature_maps(bytes: &[u8], layer: LayerTag, source: &Path) -> Result<FeatureMaps> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC || bytes[4] != VERSION {
        return Err(Error::BadMagic(source.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload { path: source.to_path_buf(), expected: HEADER_LEN, found: bytes.len() });
    }
    let dims = parse_dims(bytes);
    let expected = numel(dims, source)? * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::TruncatedPayload { path: source.to_path_buf(), expected, found: payload.len() });
    }
    FeatureMaps::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, decode_f32(payload), layer)
}

pub fn load_feature_maps(path: &Path, layer: LayerTag) -> Result<FeatureMaps> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    decode_feature_maps(&bytes, layer, path)
}

pub fn store_feature_maps(path: &Path, maps: &FeatureMaps) -> Result<()> {
    let dims = [maps.height() as u32, maps.width() as u32, maps.channels() as u32];
    fs::write(path, encode_block(dims, maps.data()))?;
    Ok(())
}
