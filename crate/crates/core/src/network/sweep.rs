//! Forward and backward sweeps over a batch, the terminal loss and the
//! per-layer Hamiltonian gradient `F_l`.
//!
//! All per-sample buffers are stored sample-major (`N × len`). Samples never
//! mix during a sweep; the only cross-sample reductions (the mean loss and
//! `F_l`) run in a fixed sample order.

use crate::error::{Error, Result};
use crate::kernels::{self, Strides};
use crate::regularization::Regularizer;

use super::{LayerKind, LayerParams, LayerSpec, Model, ParamSet};

/// Inputs, one-hot targets and per-class loss weights of a (mini-)batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    input_len: usize,
    classes: usize,
    len: usize,
    class_weights: Vec<f64>,
}

impl Batch {
    pub fn new(
        inputs: Vec<f64>,
        targets: Vec<f64>,
        input_len: usize,
        classes: usize,
        class_weights: Vec<f64>,
    ) -> Result<Self> {
        if input_len == 0 || !inputs.len().is_multiple_of(input_len) {
            return Err(Error::Shape(format!(
                "{} input values do not split into samples of {input_len}",
                inputs.len()
            )));
        }
        let len = inputs.len() / input_len;
        if targets.len() != len * classes {
            return Err(Error::Shape(format!(
                "{len} samples need {} target values, got {}",
                len * classes,
                targets.len()
            )));
        }
        if class_weights.len() != classes || class_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "need {classes} strictly positive class weights, got {class_weights:?}"
            )));
        }
        for s in 0..len {
            one_hot_class(&targets[s * classes..(s + 1) * classes]).ok_or_else(|| {
                Error::InvalidInput(format!("target of sample {s} is not one-hot"))
            })?;
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "batch inputs".into() });
        }
        Ok(Batch {
            inputs,
            targets,
            input_len,
            classes,
            len,
            class_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.input_len..(s + 1) * self.input_len]
    }

    pub fn target(&self, s: usize) -> &[f64] {
        &self.targets[s * self.classes..(s + 1) * self.classes]
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    /// Sub-batch of the given sample positions, in the given order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(idx.len() * self.input_len);
        let mut targets = Vec::with_capacity(idx.len() * self.classes);
        for &s in idx {
            inputs.extend_from_slice(self.input(s));
            targets.extend_from_slice(self.target(s));
        }
        Batch {
            inputs,
            targets,
            input_len: self.input_len,
            classes: self.classes,
            len: idx.len(),
            class_weights: self.class_weights.clone(),
        }
    }
}

/// Index of the single 1 in an exact one-hot vector.
pub(crate) fn one_hot_class(y: &[f64]) -> Option<usize> {
    let mut found = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    found
}

/// Pre-activation states of a forward sweep over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    len: usize,
    /// `states[l]` = `x̃_l`, `l = 0..=L`.
    states: Vec<Vec<f64>>,
    /// `inputs[l]` = `f_{l-1}(x̃_l)` for `l = 1..L`; `inputs[0]` is empty
    /// because layer 0 reads `x̃_0` directly.
    inputs: Vec<Vec<f64>>,
    /// `σ(x̃_l)` before pooling, kept only where layer `l−1` pools (the
    /// backward sweep needs it and it is not recoverable from `inputs`).
    activations: Vec<Vec<f64>>,
    state_lens: Vec<usize>,
    input_lens: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of recorded states, `L + 1`.
    pub fn depth(&self) -> usize {
        self.states.len()
    }

    /// `x̃_l` of sample `s`.
    pub fn state(&self, l: usize, s: usize) -> &[f64] {
        let n = self.state_lens[l];
        &self.states[l][s * n..(s + 1) * n]
    }

    /// Input of layer `l` for sample `s`: `x̃_0` for `l = 0`, else `f_{l-1}(x̃_l)`.
    pub fn layer_input(&self, l: usize, s: usize) -> &[f64] {
        let n = self.input_lens[l];
        &self.layer_input_block(l)[s * n..(s + 1) * n]
    }

    fn layer_input_block(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.states[0]
        } else {
            &self.inputs[l]
        }
    }

    /// Network output `x̃_L` for every sample, sample-major.
    pub fn logits(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn subset(&self, idx: &[usize]) -> Trajectory {
        Trajectory {
            len: idx.len(),
            states: pick_rows(&self.states, &self.state_lens, idx),
            inputs: pick_rows(&self.inputs, &self.input_lens, idx),
            activations: pick_rows(&self.activations, &self.state_lens, idx),
            state_lens: self.state_lens.clone(),
            input_lens: self.input_lens.clone(),
        }
    }
}

fn pick_rows(blocks: &[Vec<f64>], lens: &[usize], idx: &[usize]) -> Vec<Vec<f64>> {
    blocks
        .iter()
        .zip(lens)
        .map(|(block, &n)| {
            if block.is_empty() {
                return Vec::new();
            }
            let mut out = Vec::with_capacity(idx.len() * n);
            for &s in idx {
                out.extend_from_slice(&block[s * n..(s + 1) * n]);
            }
            out
        })
        .collect()
}

/// Adjoints `p̃_1, …, p̃_L` of a backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSet {
    len: usize,
    /// `adjoints[l]` for `l = 1..=L`; index 0 is empty.
    adjoints: Vec<Vec<f64>>,
    lens: Vec<usize>,
}

impl AdjointSet {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `p̃_l` of sample `s`, `1 <= l <= L`.
    pub fn adjoint(&self, l: usize, s: usize) -> &[f64] {
        let n = self.lens[l];
        &self.adjoints[l][s * n..(s + 1) * n]
    }

    /// Largest Euclidean norm of any single-sample adjoint.
    pub fn max_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for l in 1..self.adjoints.len() {
            for s in 0..self.len {
                let n = self.adjoint(l, s).iter().map(|v| v * v).sum::<f64>().sqrt();
                best = best.max(n);
            }
        }
        best
    }

    pub fn scaled(&self, factor: f64) -> AdjointSet {
        AdjointSet {
            len: self.len,
            adjoints: self
                .adjoints
                .iter()
                .map(|b| b.iter().map(|v| v * factor).collect())
                .collect(),
            lens: self.lens.clone(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> AdjointSet {
        AdjointSet {
            len: idx.len(),
            adjoints: pick_rows(&self.adjoints, &self.lens, idx),
            lens: self.lens.clone(),
        }
    }
}

/// Per-layer coefficients `F_l`, shaped like the parameters, such that the
/// layer Hamiltonian reads `⟨F_l, u⟩ − ρ R_l(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianGradient {
    layers: Vec<LayerParams>,
}

impl HamiltonianGradient {
    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn from_layers(layers: Vec<LayerParams>) -> Self {
        HamiltonianGradient { layers }
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

fn check_inputs(model: &Model, params: &ParamSet, inputs: &[f64]) -> Result<usize> {
    params.check(model)?;
    let d = model.input_len();
    if !inputs.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "{} input values do not split into samples of {d}",
            inputs.len()
        )));
    }
    Ok(inputs.len() / d)
}

/// Pre-activation output of one layer for `n` samples.
fn layer_affine(spec: &LayerSpec, p: &LayerParams, input: &[f64], n: usize) -> Vec<f64> {
    let out_len = spec.output.len();
    let mut out = vec![0.0; n * out_len];
    match spec.kind {
        LayerKind::Fc { inputs, outputs } => {
            for row in out.chunks_exact_mut(outputs) {
                row.copy_from_slice(&p.bias);
            }
            kernels::gemm(
                n,
                inputs,
                outputs,
                1.0,
                input,
                Strides::row_major(inputs),
                &p.weight,
                Strides::transposed(inputs),
                1.0,
                &mut out,
                Strides::row_major(outputs),
            );
        }
        LayerKind::Conv(geom) => {
            let super::Dims::Spatial { h, w, .. } = spec.input else {
                unreachable!("conv layers are validated to take spatial input")
            };
            let (oh, ow) = geom.output_extent(h, w).expect("validated geometry");
            let in_len = spec.input.len();
            let mut cols = vec![0.0; geom.patch_len() * oh * ow];
            for (s, o) in out.chunks_exact_mut(out_len).enumerate() {
                kernels::conv2d_forward(
                    &p.weight,
                    &p.bias,
                    &input[s * in_len..(s + 1) * in_len],
                    h,
                    w,
                    &geom,
                    &mut cols,
                    o,
                );
            }
        }
    }
    out
}

/// `f_l(x̃)`: activation then optional pooling, per sample.
fn layer_post(spec: &LayerSpec, z: &[f64], n: usize, keep_activation: bool) -> (Vec<f64>, Vec<f64>) {
    let act = spec.activation;
    match spec.pool {
        None => (z.iter().map(|&v| act.apply(v)).collect(), Vec::new()),
        Some(pg) => {
            let super::Dims::Spatial { c, h, w } = spec.output else {
                unreachable!("pooling only follows conv layers")
            };
            let (zl, pl) = (spec.output.len(), spec.post.len());
            let mut out = vec![0.0; n * pl];
            let mut kept = if keep_activation { vec![0.0; n * zl] } else { Vec::new() };
            let mut scratch = vec![0.0; zl];
            for s in 0..n {
                let a = if keep_activation { &mut kept[s * zl..(s + 1) * zl] } else { &mut scratch[..] };
                for (dst, &v) in a.iter_mut().zip(&z[s * zl..(s + 1) * zl]) {
                    *dst = act.apply(v);
                }
                kernels::pool_forward(a, c, h, w, &pg, &mut out[s * pl..(s + 1) * pl]);
            }
            (out, kept)
        }
    }
}

fn ensure_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { layer })
    }
}

/// Record `x̃_0, …, x̃_L` for every sample of `batch`.
pub fn forward_sweep(model: &Model, params: &ParamSet, batch: &Batch) -> Result<Trajectory> {
    let n = check_inputs(model, params, batch.inputs())?;
    let depth = model.depth();
    let mut states = Vec::with_capacity(depth + 1);
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(depth);
    states.push(batch.inputs().to_vec());
    inputs.push(Vec::new());
    activations.push(Vec::new());
    for (l, (spec, p)) in model.layers().iter().zip(params.layers()).enumerate() {
        let input = if l == 0 { &states[0] } else { &inputs[l] };
        let z = layer_affine(spec, p, input, n);
        ensure_finite(&z, l)?;
        if l + 1 < depth {
            let (post, kept) = layer_post(spec, &z, n, true);
            inputs.push(post);
            activations.push(kept);
        }
        states.push(z);
    }
    let mut state_lens = vec![model.input_len()];
    state_lens.extend(model.layers().iter().map(|s| s.output.len()));
    let input_lens = model.layers().iter().map(|s| s.input.len()).collect();
    Ok(Trajectory {
        len: n,
        states,
        inputs,
        activations,
        state_lens,
        input_lens,
    })
}

/// Network outputs for sample-major `inputs`, without recording states.
/// Performs exactly the arithmetic of [`forward_sweep`].
pub fn forward_logits(model: &Model, params: &ParamSet, inputs: &[f64]) -> Result<Vec<f64>> {
    let n = check_inputs(model, params, inputs)?;
    let depth = model.depth();
    let mut current: Option<Vec<f64>> = None;
    for (l, (spec, p)) in model.layers().iter().zip(params.layers()).enumerate() {
        let z = layer_affine(spec, p, current.as_deref().unwrap_or(inputs), n);
        ensure_finite(&z, l)?;
        current = Some(if l + 1 < depth { layer_post(spec, &z, n, false).0 } else { z });
    }
    Ok(current.expect("model has at least one layer"))
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Weighted softmax cross-entropy. Returns the batch mean and the
/// per-sample gradient `w_y (softmax(z) − y)`, sample-major.
pub fn terminal_loss(
    logits: &[f64],
    targets: &[f64],
    classes: usize,
    class_weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if classes == 0 || !logits.len().is_multiple_of(classes) || logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "terminal_loss: {} logits, {} targets, {classes} classes",
            logits.len(),
            targets.len()
        )));
    }
    if class_weights.len() != classes || class_weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
        return Err(Error::InvalidInput("class weights must be strictly positive".into()));
    }
    let n = logits.len() / classes;
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for s in 0..n {
        let z = &logits[s * classes..(s + 1) * classes];
        let y = &targets[s * classes..(s + 1) * classes];
        let label = one_hot_class(y)
            .ok_or_else(|| Error::InvalidInput(format!("label of sample {s} is not one-hot")))?;
        let wy = class_weights[label];
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|&v| (v - zmax).exp()).sum();
        let log_norm = zmax + sum_exp.ln();
        total += wy * (log_norm - z[label]);
        let g = &mut grad[s * classes..(s + 1) * classes];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = wy * ((z[k] - log_norm).exp() - y[k]);
        }
    }
    Ok((total / n as f64, grad))
}

/// `J_B(u)`: mean weighted cross-entropy plus `ρ Σ_l R_l(u_l)`.
pub fn batch_objective(model: &Model, params: &ParamSet, batch: &Batch, reg: &Regularizer) -> Result<f64> {
    let logits = forward_logits(model, params, batch.inputs())?;
    let (loss, _) = terminal_loss(&logits, batch.targets(), batch.classes(), batch.class_weights())?;
    Ok(loss + reg.penalty(params))
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Adjoint sweep seeded with `p̃_L = −(1/M) ∇Φ`.
pub fn backward_sweep(
    model: &Model,
    params: &ParamSet,
    trajectory: &Trajectory,
    terminal_gradients: &[f64],
    batch_size: usize,
) -> Result<AdjointSet> {
    params.check(model)?;
    let depth = model.depth();
    let n = trajectory.len();
    if trajectory.depth() != depth + 1 || trajectory.state_lens[1..] != model.layers().iter().map(|s| s.output.len()).collect::<Vec<_>>()[..] {
        return Err(Error::InvalidInput("trajectory does not match the model".into()));
    }
    if terminal_gradients.len() != n * model.classes() {
        return Err(Error::InvalidInput(format!(
            "expected {} terminal gradient values, got {}",
            n * model.classes(),
            terminal_gradients.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let seed = -1.0 / batch_size as f64;
    let mut adjoints: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
    adjoints[depth] = terminal_gradients.iter().map(|g| seed * g).collect();
    for l in (1..depth).rev() {
        let spec = &model.layers()[l];
        let q = layer_input_vjp(spec, &params.layers()[l], &adjoints[l + 1], n);
        adjoints[l] = post_vjp(&model.layers()[l - 1], trajectory, l, &q, n);
    }
    let mut lens = vec![0];
    lens.extend(model.layers().iter().map(|s| s.output.len()));
    Ok(AdjointSet { len: n, adjoints, lens })
}

/// `W_lᵀ p` for every sample.
fn layer_input_vjp(spec: &LayerSpec, p: &LayerParams, adj: &[f64], n: usize) -> Vec<f64> {
    let in_len = spec.input.len();
    let mut q = vec![0.0; n * in_len];
    match spec.kind {
        LayerKind::Fc { inputs, outputs } => {
            kernels::gemm(
                n,
                outputs,
                inputs,
                1.0,
                adj,
                Strides::row_major(outputs),
                &p.weight,
                Strides::row_major(inputs),
                0.0,
                &mut q,
                Strides::row_major(inputs),
            );
        }
        LayerKind::Conv(geom) => {
            let super::Dims::Spatial { h, w, .. } = spec.input else {
                unreachable!("conv layers are validated to take spatial input")
            };
            let (oh, ow) = geom.output_extent(h, w).expect("validated geometry");
            let out_len = spec.output.len();
            let mut cols = vec![0.0; geom.patch_len() * oh * ow];
            for s in 0..n {
                kernels::conv2d_input_vjp(
                    &p.weight,
                    &adj[s * out_len..(s + 1) * out_len],
                    h,
                    w,
                    &geom,
                    oh,
                    ow,
                    &mut cols,
                    &mut q[s * in_len..(s + 1) * in_len],
                );
            }
        }
    }
    q
}

/// Pull `q` (adjoint w.r.t. `f_{l-1}(x̃_l)`) back through `f_{l-1}` at `x̃_l`.
fn post_vjp(prev: &LayerSpec, trajectory: &Trajectory, l: usize, q: &[f64], n: usize) -> Vec<f64> {
    let act = prev.activation;
    let zl = prev.output.len();
    let mut out = vec![0.0; n * zl];
    match prev.pool {
        None => {
            // without pooling the layer input is σ(x̃_l) itself
            for s in 0..n {
                let z = trajectory.state(l, s);
                let a = trajectory.layer_input(l, s);
                let dst = &mut out[s * zl..(s + 1) * zl];
                for (((d, &zv), &av), &qv) in dst.iter_mut().zip(z).zip(a).zip(&q[s * zl..(s + 1) * zl]) {
                    *d = qv * act.derivative_at(zv, av);
                }
            }
        }
        Some(pg) => {
            let super::Dims::Spatial { c, h, w } = prev.output else {
                unreachable!("pooling only follows conv layers")
            };
            let pl = prev.post.len();
            for s in 0..n {
                let z = trajectory.state(l, s);
                let a = &trajectory.activations[l][s * zl..(s + 1) * zl];
                let dst = &mut out[s * zl..(s + 1) * zl];
                kernels::pool_backward(a, &q[s * pl..(s + 1) * pl], c, h, w, &pg, dst);
                for ((d, &zv), &av) in dst.iter_mut().zip(z).zip(a) {
                    *d *= act.derivative_at(zv, av);
                }
            }
        }
    }
    out
}

/// `F_l = Σ_s ∂_u ⟨p̃^s_{l+1}, W_l(u) f_{l-1}(x̃^s_l) + B_l u⟩` for every layer.
pub fn hamiltonian_gradient(
    model: &Model,
    params: &ParamSet,
    trajectory: &Trajectory,
    adjoints: &AdjointSet,
) -> Result<HamiltonianGradient> {
    params.check(model)?;
    if trajectory.len() != adjoints.len() || adjoints.adjoints.len() != model.depth() + 1 {
        return Err(Error::Shape("trajectory and adjoints do not match".into()));
    }
    let n = trajectory.len();
    let mut layers = Vec::with_capacity(model.depth());
    for (l, spec) in model.layers().iter().enumerate() {
        let mut f = LayerParams::zeros(spec);
        let adj = &adjoints.adjoints[l + 1];
        let input = trajectory.layer_input_block(l);
        match spec.kind {
            LayerKind::Fc { inputs, outputs } => {
                kernels::gemm(
                    outputs,
                    n,
                    inputs,
                    1.0,
                    adj,
                    Strides::transposed(outputs),
                    input,
                    Strides::row_major(inputs),
                    0.0,
                    &mut f.weight,
                    Strides::row_major(inputs),
                );
                for row in adj.chunks_exact(outputs) {
                    for (b, &v) in f.bias.iter_mut().zip(row) {
                        *b += v;
                    }
                }
            }
            LayerKind::Conv(geom) => {
                let super::Dims::Spatial { h, w, .. } = spec.input else {
                    unreachable!("conv layers are validated to take spatial input")
                };
                let (oh, ow) = geom.output_extent(h, w).expect("validated geometry");
                let (in_len, out_len) = (spec.input.len(), spec.output.len());
                let mut cols = vec![0.0; geom.patch_len() * oh * ow];
                for s in 0..n {
                    kernels::im2col(&input[s * in_len..(s + 1) * in_len], h, w, &geom, oh, ow, &mut cols);
                    kernels::conv2d_param_grad_acc(
                        &adj[s * out_len..(s + 1) * out_len],
                        &cols,
                        &geom,
                        oh * ow,
                        &mut f.weight,
                        &mut f.bias,
                    );
                }
            }
        }
        layers.push(f);
    }
    Ok(HamiltonianGradient { layers })
}
