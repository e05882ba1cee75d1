//! Model description, parameters and the sweeps of the control-affine
//! reformulation.
//!
//! A network `x_{l+1} = f_l(W_l x_l + b_l)` with a linear output layer is
//! evaluated in regrouped order: the recorded state of layer `l+1` is the
//! pre-activation `x̃_{l+1} = W_l f_{l-1}(x̃_l) + b_l`, where `f_{l-1}` is
//! the activation (and pooling) of the previous layer. Each layer map is then
//! linear in its parameters, which is what makes the Hamiltonian
//! maximization closed-form.

mod arch;
mod sweep;

pub use arch::{build_model, parse_layers, LENET5};
pub use sweep::{
    backward_sweep, batch_objective, forward_logits, forward_sweep, hamiltonian_gradient,
    terminal_loss, AdjointSet, Batch, HamiltonianGradient, Trajectory,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{Activation, ConvGeometry, PoolGeometry};

/// Layer as written in the architecture text, before shape inference.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
        pool: Option<PoolGeometry>,
    },
    Fc {
        outputs: usize,
        activation: Activation,
    },
}

/// Extent of a state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Dims {
    pub fn len(&self) -> usize {
        match *self {
            Dims::Spatial { c, h, w } => c * h * w,
            Dims::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_shape(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n] if n > 0 => Ok(Dims::Flat(n)),
            [c, h, w] if c * h * w > 0 => Ok(Dims::Spatial { c, h, w }),
            _ => Err(Error::Shape(format!("unsupported input shape {shape:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvGeometry),
    Fc { inputs: usize, outputs: usize },
}

/// A validated layer: its affine map, the activation/pooling applied to its
/// output, and the inferred extents.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub pool: Option<PoolGeometry>,
    /// Extent of the layer input `f_{l-1}(x̃_l)`.
    pub input: Dims,
    /// Extent of the pre-activation output `x̃_{l+1}`.
    pub output: Dims,
    /// Extent after activation and pooling, i.e. the next layer's input.
    pub post: Dims,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) => g.kernel_len(),
            LayerKind::Fc { inputs, outputs } => inputs * outputs,
        }
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) => g.out_channels,
            LayerKind::Fc { outputs, .. } => outputs,
        }
    }

    pub fn post_len(&self) -> usize {
        self.post.len()
    }

    /// `(fan_in, fan_out)` used by Xavier initialization; for convolutions
    /// both include the receptive-field size.
    pub fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv(g) => {
                let rf = g.kernel_h * g.kernel_w;
                (g.in_channels * rf, g.out_channels * rf)
            }
            LayerKind::Fc { inputs, outputs } => (inputs, outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    classes: usize,
}

impl Model {
    pub fn new(input_shape: &[usize], descs: Vec<LayerDesc>) -> Result<Self> {
        let mut current = Dims::from_shape(input_shape)?;
        let depth = descs.len();
        let mut layers = Vec::with_capacity(depth);
        for (l, desc) in descs.into_iter().enumerate() {
            let shape_err = |message: String| Error::ArchShape { layer: l, message };
            let spec = match desc {
                LayerDesc::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    activation,
                    pool,
                } => {
                    let Dims::Spatial { c, h, w } = current else {
                        return Err(shape_err(
                            "convolution needs a (channels, height, width) input, got a flat vector".into(),
                        ));
                    };
                    let geom = ConvGeometry::new(c, out_channels, kernel, stride, padding)
                        .map_err(|e| shape_err(e.to_string()))?;
                    let (oh, ow) = geom.output_extent(h, w).map_err(|e| shape_err(e.to_string()))?;
                    let output = Dims::Spatial { c: out_channels, h: oh, w: ow };
                    let post = match pool {
                        Some(pg) => {
                            let (ph, pw) = pg.output_extent(oh, ow).map_err(|e| shape_err(e.to_string()))?;
                            Dims::Spatial { c: out_channels, h: ph, w: pw }
                        }
                        None => output,
                    };
                    LayerSpec {
                        kind: LayerKind::Conv(geom),
                        activation,
                        pool,
                        input: current,
                        output,
                        post,
                    }
                }
                LayerDesc::Fc { outputs, activation } => LayerSpec {
                    kind: LayerKind::Fc {
                        inputs: current.len(),
                        outputs,
                    },
                    activation,
                    pool: None,
                    input: current,
                    output: Dims::Flat(outputs),
                    post: Dims::Flat(outputs),
                },
            };
            current = spec.post;
            layers.push(spec);
        }
        let last = layers.last().ok_or_else(|| Error::ArchParse {
            line: 0,
            message: "no layers".into(),
        })?;
        if last.activation != Activation::Identity || last.pool.is_some() {
            return Err(Error::ArchShape {
                layer: depth - 1,
                message: "output layer must be linear (act=identity, no pooling)".into(),
            });
        }
        let classes = last.output.len();
        if classes < 2 {
            return Err(Error::ArchShape {
                layer: depth - 1,
                message: format!("need at least 2 classes, output width is {classes}"),
            });
        }
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layers,
            classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight_len() + l.bias_len()).sum()
    }
}

/// Weight and bias blocks of one layer; together they form the control
/// vector `u_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        LayerParams {
            weight: vec![0.0; spec.weight_len()],
            bias: vec![0.0; spec.bias_len()],
        }
    }

    /// All entries, weights first.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sq_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn dist_sq(&self, other: &LayerParams) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// ⟨self, other⟩ over weights and biases.
    pub fn inner(&self, other: &LayerParams) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    fn same_shape(&self, other: &LayerParams) -> bool {
        self.weight.len() == other.weight.len() && self.bias.len() == other.bias.len()
    }
}

/// Trainable parameters `u = (u_0, …, u_{L-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn zeros(model: &Model) -> Self {
        ParamSet {
            layers: model.layers().iter().map(LayerParams::zeros).collect(),
        }
    }

    /// Wrap per-layer blocks, checking them against `model`.
    pub fn from_layers(model: &Model, layers: Vec<LayerParams>) -> Result<Self> {
        let set = ParamSet { layers };
        set.check(model)?;
        Ok(set)
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        if self.layers.len() != model.depth() {
            return Err(Error::Shape(format!(
                "parameter set has {} layers, model has {}",
                self.layers.len(),
                model.depth()
            )));
        }
        for (l, (p, spec)) in self.layers.iter().zip(model.layers()).enumerate() {
            if p.weight.len() != spec.weight_len() || p.bias.len() != spec.bias_len() {
                return Err(Error::Shape(format!(
                    "layer {l}: parameters ({}, {}) vs model ({}, {})",
                    p.weight.len(),
                    p.bias.len(),
                    spec.weight_len(),
                    spec.bias_len()
                )));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerParams> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerParams::values)
    }

    /// `|||u||| = Σ_l ‖u_l‖²`.
    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().map(LayerParams::sq_norm).sum()
    }

    /// `|||self − other|||`.
    pub fn dist_sq(&self, other: &ParamSet) -> f64 {
        debug_assert!(self
            .layers
            .iter()
            .zip(&other.layers)
            .all(|(a, b)| a.same_shape(b)));
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.dist_sq(b))
            .sum()
    }

    /// Bitwise equality of every entry.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
            && self
                .values()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Xavier-normal weights, `N(0, 2 / (fan_in + fan_out))`, and zero biases.
pub fn init_params(model: &Model, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = model
        .layers()
        .iter()
        .map(|spec| {
            let (fan_in, fan_out) = spec.fans();
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive standard deviation");
            LayerParams {
                weight: (0..spec.weight_len()).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; spec.bias_len()],
            }
        })
        .collect();
    ParamSet { layers }
}
