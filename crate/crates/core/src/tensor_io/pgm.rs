//! Binary 8-bit PGM (P5) images for heatmaps and ground-truth masks.

use std::fs;
use std::path::Path;

use super::types::{BinaryMask, ProbabilityMatrix};
use crate::error::{Error, Result};

/// Probability to gray level, rounding half up.
pub fn to_gray(p: f64) -> u8 {
    (p * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_probability_pgm(path: &Path, p: &ProbabilityMatrix) -> Result<()> {
    let pixels: Vec<u8> = p.data().iter().map(|&v| to_gray(v)).collect();
    fs::write(path, encode_pgm(p.width(), p.height(), &pixels))?;
    Ok(())
}

pub fn write_mask_pgm(path: &Path, m: &BinaryMask) -> Result<()> {
    let pixels: Vec<u8> = m.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    fs::write(path, encode_pgm(m.width(), m.height(), &pixels))?;
    Ok(())
}

/// Parses a P5 image with maxval 255; returns `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let malformed = |detail: &str| Error::Malformed { what: path.display().to_string(), detail: detail.into() };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| malformed("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(malformed("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(Error::TruncatedPayload { path: path.to_path_buf(), expected: w * h, found: data.len() });
    }
    Ok((w, h, data.to_vec()))
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let (w, h, px) = read_pgm(path)?;
    BinaryMask::new(h, w, px.iter().map(|&v| v >= 128).collect())
}
