//! Layer specifications and their batched forward/backward kernels.
//!
//! Activations are batches laid out as `batch x sample_len` matrices; rank-3
//! samples are flattened height-major, channels last (`(h * W + w) * C + c`).

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;

use super::shape::Shape;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    /// Linear adjoint of [`LayerSpec::Conv2d`]; the kernel is stored as
    /// `kh x kw x filters x in_channels`.
    Conv2dTranspose {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    Reshape {
        target: Shape,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv2dTranspose { .. } => "conv2d_transpose",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Flatten => "flatten",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(format!("{}: {msg}", self.kind())));
        match self {
            LayerSpec::Dense { units } if *units == 0 => bad("units must be positive".into()),
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                ..
            }
            | LayerSpec::Conv2dTranspose {
                filters,
                kernel,
                stride,
                ..
            } => {
                if *filters == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    bad(format!("filters {filters}, kernel {kernel:?}, stride {stride:?} must be positive"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::BatchNorm { momentum, eps } => {
                if !(0.0..1.0).contains(momentum) || *eps <= 0.0 {
                    bad(format!("momentum {momentum} must be in [0,1), eps {eps} positive"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::LeakyRelu { slope } if !(*slope > 0.0 && *slope < 1.0) => {
                bad(format!("slope {slope} must be in (0,1)"))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                bad(format!("rate {rate} must be in [0,1)"))
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape, validating hyperparameters.
    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        self.validate()?;
        match self {
            LayerSpec::Dense { units } => {
                if input.rank() != 1 {
                    return Err(Error::Shape(format!("dense expects a flat input, got {input}")));
                }
                Shape::vector(*units)
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (h, w, _) = input.hwc()?;
                let oh = conv_out_dim(h, kernel.0, stride.0, padding.0)?;
                let ow = conv_out_dim(w, kernel.1, stride.1, padding.1)?;
                Shape::new(vec![oh, ow, *filters])
            }
            LayerSpec::Conv2dTranspose {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (h, w, _) = input.hwc()?;
                let oh = conv_transpose_out_dim(h, kernel.0, stride.0, padding.0)?;
                let ow = conv_transpose_out_dim(w, kernel.1, stride.1, padding.1)?;
                Shape::new(vec![oh, ow, *filters])
            }
            LayerSpec::Reshape { target } => {
                if target.size() != input.size() {
                    return Err(Error::Shape(format!("cannot reshape {input} into {target}")));
                }
                Ok(target.clone())
            }
            LayerSpec::Flatten => Shape::vector(input.size()),
            _ => Ok(input.clone()),
        }
    }
}

/// `floor((len + 2 pad - kernel) / stride) + 1`.
pub fn conv_out_dim(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// `(len - 1) * stride - 2 pad + kernel`.
pub fn conv_transpose_out_dim(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let out = (len as isize - 1) * stride as isize - 2 * pad as isize + kernel as isize;
    if out <= 0 {
        return Err(Error::Shape(format!(
            "transposed convolution output dimension {out} is not positive"
        )));
    }
    Ok(out as usize)
}

/// Geometry of a convolution from the "image" side (`in_*`) to the
/// "patch grid" side (`out_*`). A transposed convolution uses the same
/// geometry with the roles of input and output swapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    /// Calls `f(patch_offset, image_offset)` for every in-bounds tap of the
    /// patch at output position `(oh, ow)`; both offsets address `in_c`
    /// contiguous channels.
    #[inline]
    fn for_each_tap(&self, oh: usize, ow: usize, mut f: impl FnMut(usize, usize)) {
        for i in 0..self.kh {
            let ih = (oh * self.sh + i) as isize - self.ph as isize;
            if ih < 0 || ih >= self.in_h as isize {
                continue;
            }
            for j in 0..self.kw {
                let iw = (ow * self.sw + j) as isize - self.pw as isize;
                if iw < 0 || iw >= self.in_w as isize {
                    continue;
                }
                let img = (ih as usize * self.in_w + iw as usize) * self.in_c;
                let patch = (i * self.kw + j) * self.in_c;
                f(patch, img);
            }
        }
    }
}

/// Gathers zero-padded patches: `(B, image_len)` to `(B * positions, patch_len)`.
pub(crate) fn im2col(x: ArrayView2<'_, f64>, g: &ConvGeometry) -> Array2<f64> {
    let batch = x.nrows();
    let (p, k, c) = (g.positions(), g.patch_len(), g.in_c);
    let x = x.as_standard_layout();
    let mut cols = Array2::<f64>::zeros((batch * p, k));
    let data = cols.as_slice_mut().expect("contiguous");
    for b in 0..batch {
        let img = x.row(b);
        let img = img.as_slice().expect("contiguous row");
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let base = ((b * p) + oh * g.out_w + ow) * k;
                g.for_each_tap(oh, ow, |patch, src| {
                    data[base + patch..base + patch + c].copy_from_slice(&img[src..src + c]);
                });
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters and sums patches back into images.
pub(crate) fn col2im(cols: ArrayView2<'_, f64>, g: &ConvGeometry, batch: usize) -> Array2<f64> {
    let (p, k, c) = (g.positions(), g.patch_len(), g.in_c);
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("contiguous");
    let mut out = Array2::<f64>::zeros((batch, g.image_len()));
    for b in 0..batch {
        let mut img = out.row_mut(b);
        let img = img.as_slice_mut().expect("contiguous row");
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let base = ((b * p) + oh * g.out_w + ow) * k;
                g.for_each_tap(oh, ow, |patch, dst| {
                    for (d, s) in img[dst..dst + c].iter_mut().zip(&src[base + patch..base + patch + c]) {
                        *d += s;
                    }
                });
            }
        }
    }
    out
}

pub(crate) fn conv_geometry(
    image: &Shape,
    grid: &Shape,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<ConvGeometry> {
    let (in_h, in_w, in_c) = image.hwc()?;
    let (out_h, out_w, _) = grid.hwc()?;
    Ok(ConvGeometry {
        in_h,
        in_w,
        in_c,
        out_h,
        out_w,
        kh: kernel.0,
        kw: kernel.1,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
    })
}

/// Adds a per-channel bias to a channels-last batch.
pub(crate) fn add_channel_bias(y: &mut Array2<f64>, bias: ArrayView1<'_, f64>) {
    let c = bias.len();
    for v in y.as_slice_mut().expect("contiguous").chunks_exact_mut(c) {
        for (a, b) in v.iter_mut().zip(bias.iter()) {
            *a += b;
        }
    }
}

/// Sums a channels-last batch per channel.
pub(crate) fn channel_sums(y: ArrayView2<'_, f64>, channels: usize) -> Vec<f64> {
    let y = y.as_standard_layout();
    let mut acc = vec![0.0; channels];
    for v in y.as_slice().expect("contiguous").chunks_exact(channels) {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    acc
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch-norm statistics and outputs for one forward call.
pub(crate) struct BatchNormOut {
    pub y: Array2<f64>,
    pub xhat: Array2<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Per-channel batch norm over a channels-last batch. In train mode the
/// statistics are the biased batch moments over `batch x positions`.
pub(crate) fn batchnorm_kernel(
    x: ArrayView2<'_, f64>,
    channels: usize,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> BatchNormOut {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("contiguous");
    let (mean, var) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            let count = (xs.len() / channels) as f64;
            let mut mean = vec![0.0; channels];
            for v in xs.chunks_exact(channels) {
                mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; channels];
            for v in xs.chunks_exact(channels) {
                for ((acc, x), m) in var.iter_mut().zip(v).zip(&mean) {
                    *acc += (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            (mean, var)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut y = Array2::zeros(x.raw_dim());
    {
        let xh = xhat.as_slice_mut().expect("contiguous");
        let ys = y.as_slice_mut().expect("contiguous");
        for ((xin, xh), yo) in xs
            .chunks_exact(channels)
            .zip(xh.chunks_exact_mut(channels))
            .zip(ys.chunks_exact_mut(channels))
        {
            for c in 0..channels {
                let h = (xin[c] - mean[c]) * inv_std[c];
                xh[c] = h;
                yo[c] = gamma[c] * h + beta[c];
            }
        }
    }
    BatchNormOut {
        y,
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    }
}

/// Backward of train-mode batch norm. Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batchnorm_backward_train(
    dy: ArrayView2<'_, f64>,
    xhat: ArrayView2<'_, f64>,
    inv_std: &[f64],
    gamma: &[f64],
) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let channels = gamma.len();
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("contiguous");
    let xh = xhat.as_slice().expect("contiguous");
    let count = (dys.len() / channels) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for (d, h) in dys.chunks_exact(channels).zip(xh.chunks_exact(channels)) {
        for c in 0..channels {
            dgamma[c] += d[c] * h[c];
            dbeta[c] += d[c];
        }
    }
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((o, d), h) in dx
        .as_slice_mut()
        .expect("contiguous")
        .chunks_exact_mut(channels)
        .zip(dys.chunks_exact(channels))
        .zip(xh.chunks_exact(channels))
    {
        for c in 0..channels {
            // dxhat = dy * gamma; sums of dxhat and dxhat*xhat are gamma*dbeta and gamma*dgamma.
            let dxhat = d[c] * gamma[c];
            o[c] = inv_std[c] / count
                * (count * dxhat - gamma[c] * dbeta[c] - h[c] * gamma[c] * dgamma[c]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Inverted-dropout keep mask (`0` or `1 / (1 - rate)`).
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

// ---------------------------------------------------------------------------
// Single-sample reference operations.
// ---------------------------------------------------------------------------

/// `y = W x + b` with `W` of shape `out x in`.
pub fn dense_forward(x: ArrayView1<'_, f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if w.ncols() != x.len() || w.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "dense: W is {}x{}, x has {}, b has {}",
            w.nrows(),
            w.ncols(),
            x.len(),
            b.len()
        )));
    }
    Ok(w.dot(&x) + b)
}

/// Zero-padded cross-correlation of an `H x W x C_in` input with a
/// `kh x kw x C_in x C_out` kernel.
pub fn conv2d_forward(
    x: &Array3<f64>,
    kernels: &Array4<f64>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Array3<f64>> {
    let (h, w, c_in) = x.dim();
    let (kh, kw, kc, c_out) = kernels.dim();
    if kc != c_in {
        return Err(Error::Shape(format!("conv2d: input has {c_in} channels, kernel expects {kc}")));
    }
    let spec = LayerSpec::Conv2d {
        filters: c_out,
        kernel: (kh, kw),
        stride,
        padding,
    };
    let image = Shape::new(vec![h, w, c_in])?;
    let grid = spec.output_shape(&image)?;
    let g = conv_geometry(&image, &grid, (kh, kw), stride, padding)?;
    let flat = x.as_standard_layout().into_owned().into_shape_with_order((1, g.image_len())).expect("flat input");
    let kmat = kernels.as_standard_layout().into_owned().into_shape_with_order((g.patch_len(), c_out)).expect("kernel matrix");
    let y = im2col(flat.view(), &g).dot(&kmat);
    let (oh, ow, _) = grid.hwc()?;
    Ok(y.into_shape_with_order((oh, ow, c_out)).expect("conv output"))
}

/// Adjoint of [`conv2d_forward`] for a kernel `kh x kw x C_out x C_in`:
/// maps `H x W x C_in` to `H' x W' x C_out` with `H' = (H-1) s - 2p + k`.
pub fn conv2d_transpose_forward(
    x: &Array3<f64>,
    kernels: &Array4<f64>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Array3<f64>> {
    let (h, w, c_in) = x.dim();
    let (kh, kw, c_out, kc) = kernels.dim();
    if kc != c_in {
        return Err(Error::Shape(format!(
            "conv2d_transpose: input has {c_in} channels, kernel expects {kc}"
        )));
    }
    let spec = LayerSpec::Conv2dTranspose {
        filters: c_out,
        kernel: (kh, kw),
        stride,
        padding,
    };
    let grid = Shape::new(vec![h, w, c_in])?;
    let image = spec.output_shape(&grid)?;
    let g = conv_geometry(&image, &grid, (kh, kw), stride, padding)?;
    let flat = x.as_standard_layout().into_owned().into_shape_with_order((g.positions(), c_in)).expect("flat input");
    let kmat = kernels.as_standard_layout().into_owned().into_shape_with_order((g.patch_len(), c_in)).expect("kernel matrix");
    let cols = flat.dot(&kmat.t());
    let out = col2im(cols.view(), &g, 1);
    let (oh, ow, _) = image.hwc()?;
    Ok(out.into_shape_with_order((oh, ow, c_out)).expect("transpose output"))
}

/// Batch norm over a `batch x features` matrix (one channel per column).
///
/// Train mode normalises with the batch moments and returns updated running
/// statistics `momentum * running + (1 - momentum) * batch`; infer mode uses
/// the running statistics unchanged.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: ArrayView2<'_, f64>,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
    let c = x.ncols();
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()].iter().any(|&l| l != c) {
        return Err(Error::Shape(format!("batchnorm: {c} features but parameter lengths differ")));
    }
    match mode {
        Mode::Train => {
            if x.nrows() < 2 {
                return Err(Error::BatchSize(x.nrows()));
            }
            let out = batchnorm_kernel(x, c, gamma, beta, None, eps);
            let rm = running_mean
                .iter()
                .zip(&out.batch_mean)
                .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                .collect();
            let rv = running_var
                .iter()
                .zip(&out.batch_var)
                .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                .collect();
            Ok((out.y, rm, rv))
        }
        Mode::Infer => {
            let out = batchnorm_kernel(x, c, gamma, beta, Some((running_mean, running_var)), eps);
            Ok((out.y, running_mean.to_vec(), running_var.to_vec()))
        }
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

pub fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}

/// Inverted dropout. Infer mode is the identity; train mode draws the mask
/// from a stream seeded with `seed`.
pub fn dropout(x: ArrayView1<'_, f64>, rate: f64, mode: Mode, seed: u64) -> Result<Array1<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} must be in [0,1)")));
    }
    match mode {
        Mode::Infer => Ok(x.to_owned()),
        Mode::Train => {
            let mask = dropout_mask(x.len(), rate, &mut rng_from_seed(seed));
            Ok(x.iter().zip(mask).map(|(v, m)| v * m).collect())
        }
    }
}

/// Row `i` of a batch as a slice view (helper for tests and callers).
pub fn sample(batch: &Array2<f64>, i: usize) -> ArrayView1<'_, f64> {
    batch.slice(s![i, ..])
}

pub(crate) fn sum_rows(x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.sum_axis(Axis(0)).to_vec()
}
