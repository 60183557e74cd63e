use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone layer a feature grid was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerTag {
    Pool4,
    Pool5,
    Fc,
}

impl LayerTag {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerTag::Pool4 => "pool4",
            LayerTag::Pool5 => "pool5",
            LayerTag::Fc => "fc",
        }
    }
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool4" => Ok(LayerTag::Pool4),
            "pool5" => Ok(LayerTag::Pool5),
            "fc" => Ok(LayerTag::Fc),
            other => Err(Error::InvalidArgument(format!("unknown layer tag {other:?}"))),
        }
    }
}

/// An `h × w × c` activation grid, stored position-major and channel-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    layer: LayerTag,
}

impl FeatureMaps {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>, layer: LayerTag) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDims(format!("{height}x{width}x{channels}")));
        }
        if layer == LayerTag::Fc && (height != 1 || width != 1) {
            return Err(Error::InvalidDims(format!("fc maps must be 1x1, got {height}x{width}")));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::DimMismatch { expected, found: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { height, width, channels, data, layer })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layer(&self) -> LayerTag {
        self.layer
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// The `c`-dim feature at row `i`, column `j`.
    pub fn at(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// The feature at flat position index `p = i * w + j`.
    pub fn position(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }
}

/// A dense real vector; all pooled features and prototypes live here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> FeatureVector {
        FeatureVector(self.0.iter().map(|v| v * s).collect())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

impl From<&[f32]> for FeatureVector {
    fn from(v: &[f32]) -> Self {
        FeatureVector(v.iter().map(|&x| x as f64).collect())
    }
}

/// Per-position occurrence probabilities, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimMismatch { expected: height * width, found: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Malformed {
                what: "probability matrix".into(),
                detail: format!("entry {index} = {} outside [0, 1]", data[index]),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }
}

/// Binary spatial mask over a feature grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimMismatch { expected: height * width, found: data.len() });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    /// Mask with ones inside the half-open rectangle `[r0, r1) × [c0, c1)`.
    pub fn rect(height: usize, width: usize, rows: (usize, usize), cols: (usize, usize)) -> Self {
        let mut m = Self::filled(height, width, false);
        for i in rows.0..rows.1.min(height) {
            for j in cols.0..cols.1.min(width) {
                m.data[i * width + j] = true;
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.width + j] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Intersection-over-union against another mask of the same shape.
    /// Two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { expected: self.shape(), found: other.shape() });
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}
