//! Reference implementations shared by the integration tests. Everything
//! here is written with plain loops and deliberately avoids the crate's
//! kernels, so agreement is evidence rather than tautology.

#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use pmptrain::data::{load_idx, Dataset, Split};
use pmptrain::kernels::{Activation, PoolMode};
use pmptrain::network::{Dims, LayerKind, Model, ParamSet};

pub fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
        Activation::Softplus => (1.0 + x.exp()).ln(),
        Activation::Identity => x,
    }
}

pub fn act_grad(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Tanh => 1.0 / x.cosh().powi(2),
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => 1.0,
    }
}

fn spatial(d: Dims) -> (usize, usize, usize) {
    match d {
        Dims::Spatial { c, h, w } => (c, h, w),
        Dims::Flat(n) => (n, 1, 1),
    }
}

/// Conventional evaluation of one sample. Returns the pre-activations of
/// every layer (`z_1..z_L`, the last being the logits) and the inputs each
/// layer saw (`a_0..a_{L-1}`).
pub fn naive_forward(model: &Model, params: &ParamSet, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut a = x.to_vec();
    let mut zs = Vec::new();
    let mut inputs = Vec::new();
    for (l, (spec, p)) in model.layers().iter().zip(params.layers()).enumerate() {
        inputs.push(a.clone());
        let z = match spec.kind {
            LayerKind::Fc { inputs: ni, outputs: no } => (0..no)
                .map(|o| p.bias[o] + (0..ni).map(|i| p.weight[o * ni + i] * a[i]).sum::<f64>())
                .collect::<Vec<_>>(),
            LayerKind::Conv(g) => {
                let (ci, h, w) = spatial(spec.input);
                let (co, oh, ow) = spatial(spec.output);
                let mut z = vec![0.0; co * oh * ow];
                for o in 0..co {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = p.bias[o];
                            for c in 0..ci {
                                for ki in 0..g.kernel_h {
                                    for kj in 0..g.kernel_w {
                                        let r = (i * g.stride + ki) as isize - g.padding as isize;
                                        let s = (j * g.stride + kj) as isize - g.padding as isize;
                                        if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                            continue;
                                        }
                                        let kw = p.weight[((o * ci + c) * g.kernel_h + ki) * g.kernel_w + kj];
                                        acc += kw * a[(c * h + r as usize) * w + s as usize];
                                    }
                                }
                            }
                            z[(o * oh + i) * ow + j] = acc;
                        }
                    }
                }
                z
            }
        };
        if l + 1 < model.depth() {
            let s: Vec<f64> = z.iter().map(|&v| act(spec.activation, v)).collect();
            a = match spec.pool {
                None => s,
                Some(pg) => {
                    let (c, h, w) = spatial(spec.output);
                    let (_, ph, pw) = spatial(spec.post);
                    let mut out = vec![0.0; c * ph * pw];
                    for ch in 0..c {
                        for i in 0..ph {
                            for j in 0..pw {
                                let mut vals = Vec::new();
                                for di in 0..pg.window {
                                    for dj in 0..pg.window {
                                        vals.push(s[(ch * h + i * pg.stride + di) * w + j * pg.stride + dj]);
                                    }
                                }
                                out[(ch * ph + i) * pw + j] = match pg.mode {
                                    PoolMode::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
                                    PoolMode::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                                };
                            }
                        }
                    }
                    out
                }
            };
        }
        zs.push(z);
    }
    (zs, inputs)
}

/// `w_y (log Σ exp z − z_y)` via the textbook formula.
pub fn naive_ce(z: &[f64], label: usize, weight: f64) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    weight * (m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[label])
}

pub fn naive_mean_loss(model: &Model, params: &ParamSet, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
    xs.iter()
        .zip(labels)
        .map(|(x, &y)| naive_ce(naive_forward(model, params, x).0.last().unwrap(), y, 1.0))
        .sum::<f64>()
        / xs.len() as f64
}

/// Gradient of the mean unweighted loss by ordinary reverse-mode
/// differentiation of the conventional network, one sample at a time.
pub fn naive_gradient(model: &Model, params: &ParamSet, xs: &[Vec<f64>], labels: &[usize]) -> ParamSet {
    let mut grad = ParamSet::zeros(model);
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(labels) {
        let (zs, inputs) = naive_forward(model, params, x);
        let logits = zs.last().unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        // dL/dz for the current layer
        let mut dz: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(k, v)| ((v - m).exp() / sum - if k == y { 1.0 } else { 0.0 }) / n)
            .collect();
        for l in (0..model.depth()).rev() {
            let spec = &model.layers()[l];
            let p = &params.layers()[l];
            let a = &inputs[l];
            let g = &mut grad.layers_mut()[l];
            let mut da = vec![0.0; a.len()];
            match spec.kind {
                LayerKind::Fc { inputs: ni, outputs: no } => {
                    for o in 0..no {
                        g.bias[o] += dz[o];
                        for i in 0..ni {
                            g.weight[o * ni + i] += dz[o] * a[i];
                            da[i] += dz[o] * p.weight[o * ni + i];
                        }
                    }
                }
                LayerKind::Conv(cg) => {
                    let (ci, h, w) = spatial(spec.input);
                    let (co, oh, ow) = spatial(spec.output);
                    for o in 0..co {
                        for i in 0..oh {
                            for j in 0..ow {
                                let d = dz[(o * oh + i) * ow + j];
                                g.bias[o] += d;
                                for c in 0..ci {
                                    for ki in 0..cg.kernel_h {
                                        for kj in 0..cg.kernel_w {
                                            let r = (i * cg.stride + ki) as isize - cg.padding as isize;
                                            let s = (j * cg.stride + kj) as isize - cg.padding as isize;
                                            if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                                continue;
                                            }
                                            let widx = ((o * ci + c) * cg.kernel_h + ki) * cg.kernel_w + kj;
                                            let aidx = (c * h + r as usize) * w + s as usize;
                                            g.weight[widx] += d * a[aidx];
                                            da[aidx] += d * p.weight[widx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // back through pooling and activation of layer l-1
            let prev = &model.layers()[l - 1];
            let zprev = &zs[l - 1];
            let mut ds = vec![0.0; zprev.len()];
            match prev.pool {
                None => ds.copy_from_slice(&da),
                Some(pg) => {
                    let (c, h, w) = spatial(prev.output);
                    let (_, ph, pw) = spatial(prev.post);
                    for ch in 0..c {
                        for i in 0..ph {
                            for j in 0..pw {
                                let up = da[(ch * ph + i) * pw + j];
                                let cells: Vec<usize> = (0..pg.window)
                                    .flat_map(|di| (0..pg.window).map(move |dj| (di, dj)))
                                    .map(|(di, dj)| (ch * h + i * pg.stride + di) * w + j * pg.stride + dj)
                                    .collect();
                                match pg.mode {
                                    PoolMode::Avg => {
                                        for &cell in &cells {
                                            ds[cell] += up / cells.len() as f64;
                                        }
                                    }
                                    PoolMode::Max => {
                                        let vals: Vec<f64> = cells.iter().map(|&c| act(prev.activation, zprev[c])).collect();
                                        let best = (0..vals.len()).fold(0, |b, k| if vals[k] > vals[b] { k } else { b });
                                        ds[cells[best]] += up;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dz = ds
                .iter()
                .zip(zprev)
                .map(|(d, &zv)| d * act_grad(prev.activation, zv))
                .collect();
        }
    }
    grad
}

/// Central differences of the naive mean loss, every coordinate.
pub fn fd_gradient(model: &Model, params: &ParamSet, xs: &[Vec<f64>], labels: &[usize], h: f64) -> ParamSet {
    let mut grad = ParamSet::zeros(model);
    let mut probe = params.clone();
    for l in 0..model.depth() {
        let nw = params.layers()[l].weight.len();
        let nb = params.layers()[l].bias.len();
        for i in 0..nw + nb {
            let set = |p: &mut ParamSet, v: f64| {
                let layer = &mut p.layers_mut()[l];
                if i < nw {
                    layer.weight[i] = v;
                } else {
                    layer.bias[i - nw] = v;
                }
            };
            let orig = if i < nw { params.layers()[l].weight[i] } else { params.layers()[l].bias[i - nw] };
            set(&mut probe, orig + h);
            let plus = naive_mean_loss(model, &probe, xs, labels);
            set(&mut probe, orig - h);
            let minus = naive_mean_loss(model, &probe, xs, labels);
            set(&mut probe, orig);
            let g = (plus - minus) / (2.0 * h);
            let layer = &mut grad.layers_mut()[l];
            if i < nw {
                layer.weight[i] = g;
            } else {
                layer.bias[i - nw] = g;
            }
        }
    }
    grad
}

/// `‖a − b‖ / ‖b‖` over one layer's weights and bias together.
pub fn layer_rel_err(a: &pmptrain::LayerParams, b: &pmptrain::LayerParams) -> f64 {
    let diff = a.dist_sq(b).sqrt();
    let norm = b.sq_norm().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("PMPTRAIN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Training and test splits of MNIST, or a message saying where the files
/// were expected.
pub fn load_mnist() -> Result<(Dataset, Dataset), String> {
    let dir = mnist_dir();
    let path = |f: &str| dir.join(f);
    let missing: Vec<String> = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .filter(|f| !path(f).exists())
    .map(|f| f.to_string())
    .collect();
    if !missing.is_empty() {
        return Err(format!(
            "MNIST files {missing:?} not found in {} (set PMPTRAIN_MNIST_DIR)",
            dir.display()
        ));
    }
    let train = load_idx(path("train-images-idx3-ubyte"), path("train-labels-idx1-ubyte")).map_err(|e| e.to_string())?;
    let test = load_idx(path("t10k-images-idx3-ubyte"), path("t10k-labels-idx1-ubyte"))
        .map_err(|e| e.to_string())?
        .with_split(Split::Test);
    Ok((train, test))
}
