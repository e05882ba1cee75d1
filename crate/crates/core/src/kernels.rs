//! Dense `f64` primitives: affine maps, 2-D convolution (cross-correlation),
//! pooling and componentwise activations, each paired with the
//! vector-Jacobian products used by the adjoint sweep.
//!
//! The [`Tensor`]-level functions are the checked public surface. The
//! slice-level helpers underneath are what the network sweeps call in their
//! inner loops; they assume shapes were validated once up front.

use crate::error::{Error, Result};

/// Row-major `f64` buffer with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Rejects length mismatches and any NaN/Inf entry.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("tensor entry {i}"),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn chw(&self, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            [h, w] => Ok((1, h, w)),
            _ => Err(Error::Shape(format!(
                "{what}: expected (channels, height, width), got {:?}",
                self.shape
            ))),
        }
    }
}

/// Geometry of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::Shape(
                "channels and kernel size must be positive".into(),
            ));
        }
        if stride == 0 {
            return Err(Error::Shape("stride must be >= 1".into()));
        }
        Ok(ConvGeometry {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        })
    }

    /// `floor((in + 2 pad - k) / stride) + 1` per axis; errors when the
    /// kernel does not fit the padded input.
    pub fn output_extent(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let ph = in_h + 2 * self.padding;
        let pw = in_w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Shape(format!(
                "kernel {}x{} larger than padded input {ph}x{pw}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    /// Length of one receptive field: `in_channels * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub mode: PoolMode,
    pub window: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn output_extent(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Shape("pool window and stride must be >= 1".into()));
        }
        if in_h < self.window || in_w < self.window {
            return Err(Error::Shape(format!(
                "pool window {} larger than input {in_h}x{in_w}",
                self.window
            )));
        }
        Ok((
            (in_h - self.window) / self.stride + 1,
            (in_w - self.window) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            // log(1 + e^x) without overflow for large x
            Activation::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// `derivative(x)` given `a = apply(x)`; saves re-evaluating tanh.
    #[inline]
    pub fn derivative_at(self, x: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            _ => self.derivative(x),
        }
    }
}

// ---------------------------------------------------------------------------
// Tensor-level operations
// ---------------------------------------------------------------------------

fn matrix_dims(weight: &Tensor) -> Result<(usize, usize)> {
    match *weight.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape(format!(
            "weight must be a matrix, got shape {:?}",
            weight.shape()
        ))),
    }
}

/// `W x + b`.
pub fn affine(weight: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = matrix_dims(weight)?;
    if bias.len() != rows || x.len() != cols {
        return Err(Error::Shape(format!(
            "affine: weight {rows}x{cols}, bias {}, input {}",
            bias.len(),
            x.len()
        )));
    }
    let mut out = bias.data().to_vec();
    matvec_acc(weight.data(), rows, cols, x.data(), &mut out);
    Tensor::new(vec![rows], out)
}

/// Returns `(Wᵀp, p xᵀ, p)`.
pub fn affine_vjp(weight: &Tensor, x: &Tensor, p: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, cols) = matrix_dims(weight)?;
    if p.len() != rows || x.len() != cols {
        return Err(Error::Shape(format!(
            "affine_vjp: weight {rows}x{cols}, input {}, adjoint {}",
            x.len(),
            p.len()
        )));
    }
    let w = weight.data();
    let mut input_vjp = vec![0.0; cols];
    for (r, &pr) in p.data().iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (acc, &wv) in input_vjp.iter_mut().zip(row) {
            *acc += wv * pr;
        }
    }
    let mut weight_grad = vec![0.0; rows * cols];
    for (r, &pr) in p.data().iter().enumerate() {
        for (g, &xv) in weight_grad[r * cols..(r + 1) * cols]
            .iter_mut()
            .zip(x.data())
        {
            *g = pr * xv;
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), input_vjp)?,
        Tensor::new(vec![rows, cols], weight_grad)?,
        Tensor::new(vec![rows], p.data().to_vec())?,
    ))
}

fn check_conv(kernel: &Tensor, x: &Tensor, geom: &ConvGeometry) -> Result<(usize, usize, usize, usize)> {
    let (c, h, w) = x.chw("conv2d input")?;
    if c != geom.in_channels {
        return Err(Error::Shape(format!(
            "conv2d: input has {c} channels, geometry expects {}",
            geom.in_channels
        )));
    }
    if kernel.len() != geom.kernel_len() {
        return Err(Error::Shape(format!(
            "conv2d: kernel has {} values, geometry expects {}",
            kernel.len(),
            geom.kernel_len()
        )));
    }
    let (oh, ow) = geom.output_extent(h, w)?;
    Ok((h, w, oh, ow))
}

/// Cross-correlation of `x` (C,H,W) with `kernel` (O,C,kh,kw), plus a
/// per-output-channel bias.
pub fn conv2d(kernel: &Tensor, bias: &Tensor, x: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    let (h, w, oh, ow) = check_conv(kernel, x, geom)?;
    if bias.len() != geom.out_channels {
        return Err(Error::Shape(format!(
            "conv2d: bias has {} values, expected {}",
            bias.len(),
            geom.out_channels
        )));
    }
    let mut out = vec![0.0; geom.out_channels * oh * ow];
    let mut cols = vec![0.0; geom.patch_len() * oh * ow];
    conv2d_forward(kernel.data(), bias.data(), x.data(), h, w, geom, &mut cols, &mut out);
    Tensor::new(vec![geom.out_channels, oh, ow], out)
}

/// Returns `(input_vjp, kernel_grad, bias_grad)` for adjoint `p` (O,OH,OW).
pub fn conv2d_vjp(
    kernel: &Tensor,
    x: &Tensor,
    p: &Tensor,
    geom: &ConvGeometry,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (h, w, oh, ow) = check_conv(kernel, x, geom)?;
    if p.len() != geom.out_channels * oh * ow {
        return Err(Error::Shape(format!(
            "conv2d_vjp: adjoint has {} values, expected {}",
            p.len(),
            geom.out_channels * oh * ow
        )));
    }
    let mut cols = vec![0.0; geom.patch_len() * oh * ow];
    im2col(x.data(), h, w, geom, oh, ow, &mut cols);
    let mut kernel_grad = vec![0.0; geom.kernel_len()];
    let mut bias_grad = vec![0.0; geom.out_channels];
    conv2d_param_grad_acc(p.data(), &cols, geom, oh * ow, &mut kernel_grad, &mut bias_grad);
    let mut input_vjp = vec![0.0; x.len()];
    conv2d_input_vjp(kernel.data(), p.data(), h, w, geom, oh, ow, &mut cols, &mut input_vjp);
    Ok((
        Tensor::new(x.shape().to_vec(), input_vjp)?,
        Tensor::new(
            vec![geom.out_channels, geom.in_channels, geom.kernel_h, geom.kernel_w],
            kernel_grad,
        )?,
        Tensor::new(vec![geom.out_channels], bias_grad)?,
    ))
}

pub fn pool(x: &Tensor, mode: PoolMode, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw("pool input")?;
    let geom = PoolGeometry { mode, window, stride };
    let (oh, ow) = geom.output_extent(h, w)?;
    let mut out = vec![0.0; c * oh * ow];
    pool_forward(x.data(), c, h, w, &geom, &mut out);
    Tensor::new(vec![c, oh, ow], out)
}

pub fn pool_vjp(x: &Tensor, p: &Tensor, mode: PoolMode, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw("pool input")?;
    let geom = PoolGeometry { mode, window, stride };
    let (oh, ow) = geom.output_extent(h, w)?;
    if p.len() != c * oh * ow {
        return Err(Error::Shape(format!(
            "pool_vjp: adjoint has {} values, expected {}",
            p.len(),
            c * oh * ow
        )));
    }
    let mut dx = vec![0.0; x.len()];
    pool_backward(x.data(), p.data(), c, h, w, &geom, &mut dx);
    Tensor::new(x.shape().to_vec(), dx)
}

pub fn activate(x: &Tensor, kind: Activation) -> Result<Tensor> {
    let out = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::new(x.shape().to_vec(), out)
}

pub fn activate_vjp(x: &Tensor, p: &Tensor, kind: Activation) -> Result<Tensor> {
    if x.len() != p.len() {
        return Err(Error::Shape(format!(
            "activate_vjp: input {} vs adjoint {}",
            x.len(),
            p.len()
        )));
    }
    let out = x
        .data()
        .iter()
        .zip(p.data())
        .map(|(&xv, &pv)| pv * kind.derivative(xv))
        .collect();
    Tensor::new(x.shape().to_vec(), out)
}

// ---------------------------------------------------------------------------
// Slice-level helpers (unchecked shapes; callers validate once)
// ---------------------------------------------------------------------------

/// Row/column strides of a matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides(pub isize, pub isize);

impl Strides {
    pub(crate) fn row_major(cols: usize) -> Self {
        Strides(cols as isize, 1)
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub(crate) fn transposed(cols: usize) -> Self {
        Strides(1, cols as isize)
    }
}

fn max_index(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize
}

/// `C = alpha A B + beta C` with `A` m×k, `B` k×n, `C` m×n under the given
/// strides. Single-threaded, so the summation order is fixed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || max_index(m, k, sa) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || max_index(k, n, sb) < b.len(), "gemm: B out of bounds");
    assert!(max_index(m, n, sc) < c.len(), "gemm: C out of bounds");
    // SAFETY: every index touched by dgemm is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            sc.0,
            sc.1,
        );
    }
}

/// `out += W x` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += dot(row, x);
    }
}

/// Dot product with a fixed 4-lane accumulation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Unfold `x` (C,H,W) into a `patch_len × (oh·ow)` row-major matrix, zero
/// where the receptive field hits padding.
pub(crate) fn im2col(
    x: &[f64],
    h: usize,
    w: usize,
    geom: &ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let (kh, kw, s) = (geom.kernel_h, geom.kernel_w, geom.stride);
    let pad = geom.padding as isize;
    let npos = oh * ow;
    for c in 0..geom.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oi in 0..oh {
                    let ii = (oi * s + ki) as isize - pad;
                    let line = &mut dst[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * s + kj) as isize - pad;
                        *v = if jj < 0 || jj >= w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
pub(crate) fn col2im_add(
    cols: &[f64],
    h: usize,
    w: usize,
    geom: &ConvGeometry,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let (kh, kw, s) = (geom.kernel_h, geom.kernel_w, geom.stride);
    let pad = geom.padding as isize;
    let npos = oh * ow;
    for c in 0..geom.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * npos..(row + 1) * npos];
                for oi in 0..oh {
                    let ii = (oi * s + ki) as isize - pad;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..ow {
                        let jj = (oj * s + kj) as isize - pad;
                        if jj >= 0 && jj < w as isize {
                            dst[jj as usize] += src[oi * ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Single-sample convolution; `cols` is scratch of `patch_len·oh·ow`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward(
    kernel: &[f64],
    bias: &[f64],
    x: &[f64],
    h: usize,
    w: usize,
    geom: &ConvGeometry,
    cols: &mut [f64],
    out: &mut [f64],
) {
    let (oh, ow) = geom
        .output_extent(h, w)
        .expect("conv geometry validated by caller");
    let npos = oh * ow;
    im2col(x, h, w, geom, oh, ow, cols);
    for (o, &b) in bias.iter().enumerate() {
        out[o * npos..(o + 1) * npos].fill(b);
    }
    let k = geom.patch_len();
    gemm(
        geom.out_channels,
        k,
        npos,
        1.0,
        kernel,
        Strides::row_major(k),
        cols,
        Strides::row_major(npos),
        1.0,
        out,
        Strides::row_major(npos),
    );
}

/// Accumulate `p colsᵀ` into `kernel_grad` and row sums of `p` into `bias_grad`.
pub(crate) fn conv2d_param_grad_acc(
    p: &[f64],
    cols: &[f64],
    geom: &ConvGeometry,
    npos: usize,
    kernel_grad: &mut [f64],
    bias_grad: &mut [f64],
) {
    let k = geom.patch_len();
    gemm(
        geom.out_channels,
        npos,
        k,
        1.0,
        p,
        Strides::row_major(npos),
        cols,
        Strides::transposed(npos),
        1.0,
        kernel_grad,
        Strides::row_major(k),
    );
    for (o, g) in bias_grad.iter_mut().enumerate() {
        *g += p[o * npos..(o + 1) * npos].iter().sum::<f64>();
    }
}

/// `dx = Toeplitz(kernel)ᵀ p`; `cols` is scratch and is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_input_vjp(
    kernel: &[f64],
    p: &[f64],
    h: usize,
    w: usize,
    geom: &ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
    dx: &mut [f64],
) {
    let k = geom.patch_len();
    let npos = oh * ow;
    gemm(
        k,
        geom.out_channels,
        npos,
        1.0,
        kernel,
        Strides::transposed(k),
        p,
        Strides::row_major(npos),
        0.0,
        cols,
        Strides::row_major(npos),
    );
    dx.fill(0.0);
    col2im_add(cols, h, w, geom, oh, ow, dx);
}

pub(crate) fn pool_forward(x: &[f64], c: usize, h: usize, w: usize, geom: &PoolGeometry, out: &mut [f64]) {
    let (oh, ow) = geom.output_extent(h, w).expect("pool geometry validated");
    let area = (geom.window * geom.window) as f64;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oi in 0..oh {
            for oj in 0..ow {
                let (i0, j0) = (oi * geom.stride, oj * geom.stride);
                let v = match geom.mode {
                    PoolMode::Avg => {
                        let mut s = 0.0;
                        for di in 0..geom.window {
                            for dj in 0..geom.window {
                                s += plane[(i0 + di) * w + j0 + dj];
                            }
                        }
                        s / area
                    }
                    PoolMode::Max => {
                        let mut m = f64::NEG_INFINITY;
                        for di in 0..geom.window {
                            for dj in 0..geom.window {
                                m = m.max(plane[(i0 + di) * w + j0 + dj]);
                            }
                        }
                        m
                    }
                };
                out[(ch * oh + oi) * ow + oj] = v;
            }
        }
    }
}

/// Writes (not accumulates) the pooling adjoint into `dx`. Max ties route
/// to the first row-major position in the window.
pub(crate) fn pool_backward(
    x: &[f64],
    p: &[f64],
    c: usize,
    h: usize,
    w: usize,
    geom: &PoolGeometry,
    dx: &mut [f64],
) {
    let (oh, ow) = geom.output_extent(h, w).expect("pool geometry validated");
    let area = (geom.window * geom.window) as f64;
    dx.fill(0.0);
    for ch in 0..c {
        let base = ch * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let pv = p[(ch * oh + oi) * ow + oj];
                let (i0, j0) = (oi * geom.stride, oj * geom.stride);
                match geom.mode {
                    PoolMode::Avg => {
                        let share = pv / area;
                        for di in 0..geom.window {
                            for dj in 0..geom.window {
                                dx[base + (i0 + di) * w + j0 + dj] += share;
                            }
                        }
                    }
                    PoolMode::Max => {
                        let mut best = base + i0 * w + j0;
                        for di in 0..geom.window {
                            for dj in 0..geom.window {
                                let idx = base + (i0 + di) * w + j0 + dj;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        dx[best] += pv;
                    }
                }
            }
        }
    }
}
