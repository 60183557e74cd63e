//! Fully connected network: linear layers, batch-style normalization and ReLU
//! on hidden layers, identity on the output layer.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::FeatureVector;

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input dim followed by each layer's output dim.
    pub layer_dims: Vec<usize>,
    pub hidden_normalization: bool,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>, hidden_normalization: bool) -> Result<Self> {
        let cfg = Self { layer_dims, hidden_normalization };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::InvalidDims(format!("layer dims {:?}", self.layer_dims)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl Norm {
    fn identity(dim: usize) -> Self {
        Self {
            scale: Array1::ones(dim),
            shift: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    config: MlpConfig,
    pub layers: Vec<Linear>,
    /// One entry per hidden layer when normalization is on, empty otherwise.
    pub norms: Vec<Norm>,
    generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl MlpParams {
    /// He-style uniform init scaled by fan-in; biases start at zero.
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
                Linear { weight, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Self::assemble(config, layers))
    }

    pub fn zeros(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims
            .windows(2)
            .map(|w| Linear { weight: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        Ok(Self::assemble(config, layers))
    }

    /// Builds params from explicit layers; normalization layers start as identity.
    pub fn from_layers(config: &MlpConfig, layers: Vec<Linear>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.num_layers() {
            return Err(Error::DimMismatch { expected: config.num_layers(), found: layers.len() });
        }
        for (l, w) in config.layer_dims.windows(2).enumerate() {
            let shape = (w[1], w[0]);
            if layers[l].weight.dim() != shape || layers[l].bias.len() != w[1] {
                return Err(Error::ShapeMismatch { expected: shape, found: layers[l].weight.dim() });
            }
        }
        Ok(Self::assemble(config, layers))
    }

    fn assemble(config: &MlpConfig, layers: Vec<Linear>) -> Self {
        let norms = if config.hidden_normalization {
            config.layer_dims[1..config.layer_dims.len() - 1].iter().map(|&d| Norm::identity(d)).collect()
        } else {
            Vec::new()
        };
        Self { config: config.clone(), layers, norms, generation: 0 }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    /// Learnable tensors in a fixed order: per layer weight, bias; per norm scale, shift.
    pub fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        for n in &mut self.norms {
            out.push(n.scale.as_slice_mut().expect("standard layout"));
            out.push(n.shift.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn learnable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        for n in &self.norms {
            out.push(n.scale.as_slice().expect("standard layout"));
            out.push(n.shift.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.learnable().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.norms.iter().all(|n| n.running_mean.iter().chain(n.running_var.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim() {
            return Err(Error::DimMismatch { expected: self.config.input_dim(), found: x.ncols() });
        }
        Ok(())
    }

    /// Eval-mode forward on a batch (`batch × in`). Each row goes through the
    /// same matrix-vector kernel, so a row's output never depends on the
    /// batch it arrived in.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut out = Array2::zeros((x.nrows(), self.config.output_dim()));
        for (r, row) in x.rows().into_iter().enumerate() {
            let y = self.forward_row(row.to_owned())?;
            out.row_mut(r).assign(&y);
        }
        Ok(out)
    }

    fn forward_row(&self, x: Array1<f64>) -> Result<Array1<f64>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, lin) in self.layers.iter().enumerate() {
            let mut z = lin.weight.dot(&h) + &lin.bias;
            if l < last {
                if let Some(norm) = self.norms.get(l) {
                    let inv_std = norm.running_var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
                    z = (z - &norm.running_mean) * &inv_std * &norm.scale + &norm.shift;
                }
                z.mapv_inplace(|v| v.max(0.0));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            h = z;
        }
        Ok(h)
    }

    /// Train-mode forward: batch statistics for normalization, running
    /// statistics updated, intermediates cached for [`MlpParams::backward`].
    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache { generation: self.generation, layers: Vec::with_capacity(self.layers.len()) };
        let mut h = x.to_owned();
        for l in 0..self.layers.len() {
            let lin = &self.layers[l];
            let mut z = h.dot(&lin.weight.t()) + &lin.bias;
            let mut norm_cache = None;
            if l < last {
                if let Some(norm) = self.norms.get_mut(l) {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let var = z.var_axis(Axis(0), 0.0);
                    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
                    let xhat = (&z - &mean) * &inv_std;
                    z = &xhat * &norm.scale + &norm.shift;
                    norm.running_mean = &norm.running_mean * NORM_MOMENTUM + &mean * (1.0 - NORM_MOMENTUM);
                    norm.running_var = &norm.running_var * NORM_MOMENTUM + &var * (1.0 - NORM_MOMENTUM);
                    norm_cache = Some(NormCache { xhat, inv_std });
                }
            }
            let pre_relu = if l < last {
                let pre = z.clone();
                z.mapv_inplace(|v| v.max(0.0));
                Some(pre)
            } else {
                None
            };
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            cache.layers.push(LayerCache { input: h, norm: norm_cache, pre_relu });
            h = z;
        }
        Ok((h, cache))
    }

    /// Reverse pass for a cache produced by the current parameter generation.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let out_dim = self.config.output_dim();
        if upstream.ncols() != out_dim || upstream.nrows() != cache.layers[0].input.nrows() {
            return Err(Error::ShapeMismatch {
                expected: (cache.layers[0].input.nrows(), out_dim),
                found: upstream.dim(),
            });
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut g = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let lc = &cache.layers[l];
            if let Some(pre) = &lc.pre_relu {
                ndarray::Zip::from(&mut g).and(pre).for_each(|gv, &z| {
                    if z <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            if let Some(nc) = &lc.norm {
                let norm = &self.norms[l];
                let n = g.nrows() as f64;
                grads.norms[l].1 = g.sum_axis(Axis(0));
                grads.norms[l].0 = (&g * &nc.xhat).sum_axis(Axis(0));
                let dxhat = &g * &norm.scale;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &nc.xhat).sum_axis(Axis(0));
                g = (&dxhat * n - &sum_dxhat - &nc.xhat * &sum_dxhat_xhat) * &nc.inv_std / n;
            }
            grads.layers[l].0 = g.t().dot(&lc.input);
            grads.layers[l].1 = g.sum_axis(Axis(0));
            g = g.dot(&self.layers[l].weight);
        }
        Ok((grads, g))
    }

    /// Eval-mode forward of a single vector.
    pub fn forward_vector(&self, x: &FeatureVector) -> Result<FeatureVector> {
        if x.dim() != self.config.input_dim() {
            return Err(Error::DimMismatch { expected: self.config.input_dim(), found: x.dim() });
        }
        Ok(FeatureVector(self.forward_row(Array1::from(x.0.clone()))?.to_vec()))
    }

    /// Eval-mode forward with an explicit mode switch; train mode on a single
    /// vector would normalize against a batch of one, so it is rejected.
    pub fn forward(&mut self, x: &FeatureVector, mode: Mode) -> Result<FeatureVector> {
        match mode {
            Mode::Eval => self.forward_vector(x),
            Mode::Train => {
                let row = Array2::from_shape_vec((1, x.dim()), x.0.clone()).expect("row shape");
                if self.config.hidden_normalization && self.config.num_layers() > 1 {
                    return Err(Error::InvalidArgument("train-mode normalization needs a batch of at least 2".into()));
                }
                let (out, _) = self.forward_train(&row)?;
                Ok(FeatureVector(out.into_raw_vec_and_offset().0))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    norm: Option<NormCache>,
    pre_relu: Option<Array2<f64>>,
}

/// Intermediates of one train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Smallest |pre-activation| over all ReLU units; distance to the nearest kink.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| l.pre_relu.as_ref())
            .flat_map(|p| p.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Gradients mirroring the learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    /// `(dW, db)` per layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    /// `(dscale, dshift)` per normalized hidden layer.
    pub norms: Vec<(Array1<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            layers: p.layers.iter().map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len()))).collect(),
            norms: p.norms.iter().map(|n| (Array1::zeros(n.scale.len()), Array1::zeros(n.shift.len()))).collect(),
        }
    }

    /// Same ordering as [`MlpParams::learnable`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in &self.layers {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        for (s, t) in &self.norms {
            out.push(s.as_slice().expect("standard layout"));
            out.push(t.as_slice().expect("standard layout"));
        }
        out
    }
}
