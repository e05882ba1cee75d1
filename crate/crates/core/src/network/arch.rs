//! Parser for the one-layer-per-line architecture description.
//!
//! ```text
//! # LeNet-5
//! conv out=6 k=5 stride=1 pad=2 act=tanh pool=avg2
//! conv out=16 k=5 act=tanh pool=avg2
//! fc out=120 act=tanh
//! fc out=84 act=tanh
//! fc out=10 act=identity
//! ```

use crate::error::{Error, Result};
use crate::kernels::{Activation, PoolGeometry, PoolMode};

use super::{LayerDesc, Model};

/// The classic LeNet-5 stack for 28×28 single-channel input.
pub const LENET5: &str = "\
conv out=6 k=5 stride=1 pad=2 act=tanh pool=avg2
conv out=16 k=5 stride=1 pad=0 act=tanh pool=avg2
fc out=120 act=tanh
fc out=84 act=tanh
fc out=10 act=identity
";

/// Parse `arch_text` and validate it against `input_shape`
/// (`[c, h, w]` for images, `[n]` for flat vectors).
pub fn build_model(arch_text: &str, input_shape: &[usize]) -> Result<Model> {
    let layers = parse_layers(arch_text)?;
    Model::new(input_shape, layers)
}

pub fn parse_layers(arch_text: &str) -> Result<Vec<LayerDesc>> {
    let mut layers = Vec::new();
    for (idx, raw) in arch_text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        layers.push(parse_line(line, line_no)?);
    }
    if layers.is_empty() {
        return Err(Error::ArchParse {
            line: 0,
            message: "no layers".into(),
        });
    }
    Ok(layers)
}

fn parse_line(line: &str, line_no: usize) -> Result<LayerDesc> {
    let err = |message: String| Error::ArchParse {
        line: line_no,
        message,
    };
    let mut tokens = line.split_whitespace();
    let kind = tokens.next().unwrap_or_default();
    let mut out = None;
    let mut kernel = None;
    let mut stride = 1;
    let mut pad = 0;
    let mut act = Activation::Identity;
    let mut pool = None;
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
        let number = || {
            value
                .parse::<usize>()
                .map_err(|_| err(format!("`{key}` needs a non-negative integer, got `{value}`")))
        };
        match (kind, key) {
            (_, "out") => out = Some(number()?),
            (_, "act") => {
                act = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    "softplus" => Activation::Softplus,
                    "identity" => Activation::Identity,
                    _ => return Err(err(format!("unknown activation `{value}`"))),
                }
            }
            ("conv", "k") => kernel = Some(number()?),
            ("conv", "stride") => stride = number()?,
            ("conv", "pad") => pad = number()?,
            ("conv", "pool") => {
                pool = match value {
                    "none" => None,
                    "avg2" => Some(PoolGeometry { mode: PoolMode::Avg, window: 2, stride: 2 }),
                    "max2" => Some(PoolGeometry { mode: PoolMode::Max, window: 2, stride: 2 }),
                    _ => return Err(err(format!("unknown pooling `{value}`"))),
                }
            }
            _ => return Err(err(format!("unknown key `{key}` for layer kind `{kind}`"))),
        }
    }
    let out = out.ok_or_else(|| err("missing `out=`".into()))?;
    if out == 0 {
        return Err(err("`out` must be positive".into()));
    }
    match kind {
        "conv" => Ok(LayerDesc::Conv {
            out_channels: out,
            kernel: kernel.ok_or_else(|| err("conv layer needs `k=`".into()))?,
            stride,
            padding: pad,
            activation: act,
            pool,
        }),
        "fc" => Ok(LayerDesc::Fc {
            outputs: out,
            activation: act,
        }),
        other => Err(err(format!("unknown layer kind `{other}`"))),
    }
}
