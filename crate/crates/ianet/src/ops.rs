//! Neural-network operator kernels: cross-correlation convolution, ReLU,
//! max pooling, ROI pooling, fully-connected layers, and the detection
//! losses. Forward kernels are public; the matching backward kernels are
//! used by the autodiff tape.
//!
//! All kernels run fixed-order loops so that repeated evaluation is
//! bit-identical.

use crate::boxes::BoxF;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convolution layer geometry. Kernels are cross-correlated (no flip),
/// with symmetric zero padding and a single stride for both axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> ConvSpec {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    /// Output spatial size; errors when the output would be empty.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidArg("conv kernel/stride must be positive".into()));
        }
        let padded_h = h + 2 * self.pad;
        let padded_w = w + 2 * self.pad;
        if padded_h < self.kernel_h || padded_w < self.kernel_w {
            return Err(Error::Shape(format!(
                "conv output empty: input {h}x{w}, kernel {}x{}, pad {}",
                self.kernel_h, self.kernel_w, self.pad
            )));
        }
        Ok((
            (padded_h - self.kernel_h) / self.stride + 1,
            (padded_w - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// A region of interest in feature-map coordinates, tied to one sample of
/// the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiBox {
    pub sample: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl RoiBox {
    pub fn new(sample: usize, b: BoxF) -> RoiBox {
        RoiBox {
            sample,
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        }
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Shape(format!(
            "{what}: expected rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// conv2d

pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    expect_rank(input, 4, "conv2d input")?;
    expect_rank(weights, 4, "conv2d weights")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if c != spec.in_channels {
        return Err(Error::Shape(format!(
            "conv2d: input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    if weights.shape() != [spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w] {
        return Err(Error::Shape(format!(
            "conv2d: weights shape {:?} does not match spec {spec:?}",
            weights.shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::Shape(format!(
            "conv2d: bias shape {:?}, expected [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    let mut out = Tensor::zeros(&[n, spec.out_channels, oh, ow]);
    let (kh, kw, stride, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.pad);
    let in_data = input.data();
    let w_data = weights.data();
    let out_data = out.data_mut();
    // x-innermost loops vectorize at stride 1; per output element the
    // accumulation order stays (ic, ky, kx) ascending, matching the naive
    // formulation bit-for-bit.
    for ni in 0..n {
        for o in 0..spec.out_channels {
            for y in 0..oh {
                let out_row = (((ni * spec.out_channels) + o) * oh + y) * ow;
                out_data[out_row..out_row + ow].fill(bias.data()[o]);
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = ((ni * c + ic) * h + iy as usize) * w;
                        let w_row = ((o * c + ic) * kh + ky) * kw;
                        for kx in 0..kw {
                            let (x0, x1) = conv_x_range(kx, pad, stride, w, ow);
                            if x0 >= x1 {
                                continue;
                            }
                            let wv = w_data[w_row + kx];
                            let off = kx as isize - pad as isize;
                            if stride == 1 {
                                let ix0 = (x0 as isize + off) as usize;
                                let xs = &in_data[in_row + ix0..in_row + ix0 + (x1 - x0)];
                                let os = &mut out_data[out_row + x0..out_row + x1];
                                for (o, a) in os.iter_mut().zip(xs) {
                                    *o += a * wv;
                                }
                            } else {
                                for x in x0..x1 {
                                    let ix = ((x * stride) as isize + off) as usize;
                                    out_data[out_row + x] += in_data[in_row + ix] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output x range [x0, x1) for which x*stride + kx - pad lands inside
/// [0, w).
#[inline]
fn conv_x_range(kx: usize, pad: usize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let x0 = if pad > kx { (pad - kx).div_ceil(stride) } else { 0 };
    if kx > w - 1 + pad {
        return (0, 0);
    }
    let x1 = ((w - 1 + pad - kx) / stride + 1).min(ow);
    (x0.min(ow), x1)
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow) = (upstream.shape()[2], upstream.shape()[3]);
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = Tensor::zeros(&[spec.out_channels]);
    let (kh, kw, stride, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.pad);
    let in_data = input.data();
    let w_data = weights.data();
    let up_data = upstream.data();
    let di_data = d_input.data_mut();
    let dw_data = d_weights.data_mut();
    for ni in 0..n {
        for o in 0..spec.out_channels {
            for y in 0..oh {
                let up_row = (((ni * spec.out_channels) + o) * oh + y) * ow;
                for x in 0..ow {
                    d_bias.data_mut()[o] += up_data[up_row + x];
                }
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = ((ni * c + ic) * h + iy as usize) * w;
                        let w_row = ((o * c + ic) * kh + ky) * kw;
                        for kx in 0..kw {
                            let (x0, x1) = conv_x_range(kx, pad, stride, w, ow);
                            if x0 >= x1 {
                                continue;
                            }
                            let wv = w_data[w_row + kx];
                            let off = kx as isize - pad as isize;
                            let mut dw_acc = 0.0;
                            if stride == 1 {
                                let ix0 = (x0 as isize + off) as usize;
                                let gs = &up_data[up_row + x0..up_row + x1];
                                let dis = &mut di_data[in_row + ix0..in_row + ix0 + (x1 - x0)];
                                let ins = &in_data[in_row + ix0..in_row + ix0 + (x1 - x0)];
                                for (di, g) in dis.iter_mut().zip(gs) {
                                    *di += g * wv;
                                }
                                for (g, a) in gs.iter().zip(ins) {
                                    dw_acc += g * a;
                                }
                            } else {
                                for x in x0..x1 {
                                    let ix = ((x * stride) as isize + off) as usize;
                                    let g = up_data[up_row + x];
                                    di_data[in_row + ix] += g * wv;
                                    dw_acc += g * in_data[in_row + ix];
                                }
                            }
                            dw_data[w_row + kx] += dw_acc;
                        }
                    }
                }
            }
        }
    }
    Ok((d_input, d_weights, d_bias))
}

// ---------------------------------------------------------------------------
// relu

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub(crate) fn relu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    let mut out = upstream.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// maxpool2d

/// Output size and per-output argmax (flat input offsets). Ties go to the
/// first window element in row-major order.
fn maxpool_run(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(input, 4, "maxpool2d input")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArg("maxpool window/stride must be positive".into()));
    }
    if window > h || window > w {
        return Err(Error::Shape(format!(
            "maxpool window {window} larger than input {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; out.len()];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = input.idx4(ni, ci, y * stride + ky, x * stride + kx);
                            let v = input.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let oi = out.idx4(ni, ci, y, x);
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool_run(input, window, stride).map(|(t, _)| t)
}

pub(crate) fn maxpool2d_backward(
    input: &Tensor,
    window: usize,
    stride: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (_, argmax) = maxpool_run(input, window, stride)?;
    let mut d_input = Tensor::zeros(input.shape());
    for (oi, &ii) in argmax.iter().enumerate() {
        d_input.data_mut()[ii] += upstream.data()[oi];
    }
    Ok(d_input)
}

// ---------------------------------------------------------------------------
// roi_pool

/// Integer cell range of one ROI after snapping (floor for x1/y1, ceil for
/// x2/y2) and clamping to the feature map.
fn snap_roi(roi: &RoiBox, h: usize, w: usize) -> Result<(usize, usize, usize, usize)> {
    if !(roi.x2 > roi.x1 && roi.y2 > roi.y1) {
        return Err(Error::InvalidArg(format!(
            "roi ({}, {}, {}, {}) is not a valid box",
            roi.x1, roi.y1, roi.x2, roi.y2
        )));
    }
    let x1 = roi.x1.floor().max(0.0) as usize;
    let y1 = roi.y1.floor().max(0.0) as usize;
    let x2 = (roi.x2.ceil().min(w as f64) as usize).min(w);
    let y2 = (roi.y2.ceil().min(h as f64) as usize).min(h);
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::InvalidArg(format!(
            "roi ({}, {}, {}, {}) is degenerate after snapping to a {h}x{w} map",
            roi.x1, roi.y1, roi.x2, roi.y2
        )));
    }
    Ok((x1, y1, x2, y2))
}

fn roi_pool_run(
    features: &Tensor,
    rois: &[RoiBox],
    out_hw: (usize, usize),
) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(features, 4, "roi_pool features")?;
    let (n, c, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
        features.shape()[3],
    );
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidArg("roi_pool output size must be at least 1x1".into()));
    }
    if rois.is_empty() {
        return Err(Error::InvalidArg("roi_pool: no rois".into()));
    }
    let mut out = Tensor::zeros(&[rois.len(), c, oh, ow]);
    let mut argmax = vec![0usize; out.len()];
    for (r, roi) in rois.iter().enumerate() {
        if roi.sample >= n {
            return Err(Error::InvalidArg(format!(
                "roi sample index {} out of range (batch {n})",
                roi.sample
            )));
        }
        let (x1, y1, x2, y2) = snap_roi(roi, h, w)?;
        let rh = y2 - y1;
        let rw = x2 - x1;
        for ci in 0..c {
            for by in 0..oh {
                // Even real-valued splits of the snapped cell range.
                let hs = ((by as f64 * rh as f64) / oh as f64).floor() as usize;
                let he = (((by + 1) as f64 * rh as f64) / oh as f64).ceil() as usize;
                let (hs, he) = (hs.min(rh - 1), he.clamp(hs + 1, rh));
                for bx in 0..ow {
                    let ws = ((bx as f64 * rw as f64) / ow as f64).floor() as usize;
                    let we = (((bx + 1) as f64 * rw as f64) / ow as f64).ceil() as usize;
                    let (ws, we) = (ws.min(rw - 1), we.clamp(ws + 1, rw));
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for cy in hs..he {
                        for cx in ws..we {
                            let idx = features.idx4(roi.sample, ci, y1 + cy, x1 + cx);
                            let v = features.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let oi = out.idx4(r, ci, by, bx);
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn roi_pool(features: &Tensor, rois: &[RoiBox], out_hw: (usize, usize)) -> Result<Tensor> {
    roi_pool_run(features, rois, out_hw).map(|(t, _)| t)
}

pub(crate) fn roi_pool_backward(
    features: &Tensor,
    rois: &[RoiBox],
    out_hw: (usize, usize),
    upstream: &Tensor,
) -> Result<Tensor> {
    let (_, argmax) = roi_pool_run(features, rois, out_hw)?;
    let mut d_features = Tensor::zeros(features.shape());
    for (oi, &ii) in argmax.iter().enumerate() {
        d_features.data_mut()[ii] += upstream.data()[oi];
    }
    Ok(d_features)
}

// ---------------------------------------------------------------------------
// linear

pub fn linear(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(input, 2, "linear input")?;
    expect_rank(weights, 2, "linear weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (dw, k) = (weights.shape()[0], weights.shape()[1]);
    if d != dw || bias.shape() != [k] {
        return Err(Error::Shape(format!(
            "linear: input {:?} x weights {:?} + bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, k]);
    let out_data = out.data_mut();
    // (i, p, j) loop order for contiguous weight rows; per output element
    // the sum over p stays in ascending order, identical to the naive
    // (i, j, p) formulation.
    for i in 0..n {
        out_data[i * k..(i + 1) * k].copy_from_slice(bias.data());
        for p in 0..d {
            let x = input.data()[i * d + p];
            let w_row = &weights.data()[p * k..(p + 1) * k];
            for (o, wv) in out_data[i * k..(i + 1) * k].iter_mut().zip(w_row) {
                *o += x * wv;
            }
        }
    }
    Ok(out)
}

pub(crate) fn linear_backward(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let k = weights.shape()[1];
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = Tensor::zeros(&[k]);
    let di_data = d_input.data_mut();
    let dw_data = d_weights.data_mut();
    for i in 0..n {
        let g_row = &upstream.data()[i * k..(i + 1) * k];
        for (b, g) in d_bias.data_mut().iter_mut().zip(g_row) {
            *b += g;
        }
        for p in 0..d {
            let w_row = &weights.data()[p * k..(p + 1) * k];
            let mut acc = 0.0;
            for (g, wv) in g_row.iter().zip(w_row) {
                acc += g * wv;
            }
            di_data[i * d + p] = acc;
            let x = input.data()[i * d + p];
            for (dw, g) in dw_data[p * k..(p + 1) * k].iter_mut().zip(g_row) {
                *dw += x * g;
            }
        }
    }
    (d_input, d_weights, d_bias)
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    expect_rank(logits, 2, "softmax_xent logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows of logits",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArg(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok((n, k))
}

/// Row-wise softmax probabilities (numerically stable).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..k {
            let e = (row[j] - m).exp();
            out.data_mut()[i * k + j] = e;
            z += e;
        }
        for j in 0..k {
            out.data_mut()[i * k + j] /= z;
        }
    }
    out
}

/// Mean over rows of -log softmax at the label.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = check_labels(logits, labels)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        total += -(row[y] - m - z.ln());
    }
    Ok(Tensor::scalar(total / n as f64))
}

pub(crate) fn softmax_xent_backward(logits: &Tensor, labels: &[usize], upstream: f64) -> Tensor {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = softmax_rows(logits);
    for (i, &y) in labels.iter().enumerate() {
        grad.data_mut()[i * k + y] -= 1.0;
    }
    let scale = upstream / n as f64;
    for v in grad.data_mut() {
        *v *= scale;
    }
    grad
}

/// Per-row pre-softmax score at the label: out[i] = logits[i, labels[i]].
pub fn gather_labels(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = check_labels(logits, labels)?;
    let mut out = Tensor::zeros(&[n]);
    for (i, &y) in labels.iter().enumerate() {
        out.data_mut()[i] = logits.data()[i * k + y];
    }
    Ok(out)
}

pub(crate) fn gather_labels_backward(logits: &Tensor, labels: &[usize], upstream: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut grad = Tensor::zeros(logits.shape());
    for (i, &y) in labels.iter().enumerate() {
        grad.data_mut()[i * k + y] = upstream.data()[i];
    }
    grad
}

// ---------------------------------------------------------------------------
// masked L1 regression loss

/// Weighted mean absolute error over rows: rows average their coordinates,
/// then rows combine weighted by `weights` and normalized by the weight sum
/// (zero when all weights are zero, so background-only batches contribute
/// nothing).
pub fn l1_reg_loss(pred: &Tensor, target: &Tensor, weights: &[f64]) -> Result<Tensor> {
    expect_rank(pred, 2, "l1 pred")?;
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "l1: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (n, d) = (pred.shape()[0], pred.shape()[1]);
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {n} rows", weights.len())));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..d {
            row += (pred.at2(i, j) - target.at2(i, j)).abs();
        }
        total += weights[i] * row / d as f64;
    }
    Ok(Tensor::scalar(total / wsum))
}

pub(crate) fn l1_backward(
    pred: &Tensor,
    target: &Tensor,
    weights: &[f64],
    upstream: f64,
) -> (Tensor, Tensor) {
    let (n, d) = (pred.shape()[0], pred.shape()[1]);
    let mut d_pred = Tensor::zeros(pred.shape());
    let wsum: f64 = weights.iter().sum();
    if wsum != 0.0 {
        for i in 0..n {
            for j in 0..d {
                let diff = pred.at2(i, j) - target.at2(i, j);
                // signum(0) = 0: subgradient at exact zero residual.
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let idx = d_pred.idx2(i, j);
                d_pred.data_mut()[idx] = upstream * weights[i] * s / (d as f64 * wsum);
            }
        }
    }
    let d_target = d_pred.map(|v| -v);
    (d_pred, d_target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_ones_times_two() {
        let input = Tensor::ones(&[1, 1, 3, 3]);
        let weights = Tensor::filled(&[1, 1, 1, 1], 2.0);
        let bias = Tensor::zeros(&[1]);
        let spec = ConvSpec::square(1, 1, 1, 1, 0);
        let out = conv2d(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let input = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64 - 3.0);
        let mut weights = Tensor::zeros(&[1, 1, 3, 3]);
        weights.data_mut()[4] = 1.0; // center tap
        let bias = Tensor::zeros(&[1]);
        let spec = ConvSpec::square(1, 1, 3, 1, 1);
        let out = conv2d(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_rejects_empty_output() {
        let spec = ConvSpec::square(1, 1, 5, 1, 0);
        assert!(spec.output_hw(3, 3).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_basic() {
        let input = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool2d(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_element() {
        let input = Tensor::ones(&[1, 1, 2, 2]);
        let up = Tensor::ones(&[1, 1, 1, 1]);
        let grad = maxpool2d_backward(&input, 2, 2, &up).unwrap();
        assert_eq!(grad.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_oversized_window() {
        let input = Tensor::ones(&[1, 1, 2, 2]);
        assert!(maxpool2d(&input, 3, 1).is_err());
    }

    #[test]
    fn roi_pool_full_image_matches_maxpool() {
        let features = Tensor::from_fn(&[1, 2, 4, 4], |i| (i * 7 % 13) as f64);
        let roi = RoiBox {
            sample: 0,
            x1: 0.0,
            y1: 0.0,
            x2: 4.0,
            y2: 4.0,
        };
        let pooled = roi_pool(&features, &[roi], (2, 2)).unwrap();
        let maxed = maxpool2d(&features, 2, 2).unwrap();
        assert_eq!(pooled.data(), maxed.data());
    }

    #[test]
    fn roi_pool_single_cell_broadcasts() {
        let features = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let roi = RoiBox {
            sample: 0,
            x1: 2.0,
            y1: 1.0,
            x2: 2.5,
            y2: 1.5,
        };
        let pooled = roi_pool(&features, &[roi], (2, 2)).unwrap();
        let cell = features.at4(0, 0, 1, 2);
        assert!(pooled.data().iter().all(|&v| v == cell));
    }

    #[test]
    fn roi_pool_rejects_degenerate_box() {
        let features = Tensor::ones(&[1, 1, 4, 4]);
        let roi = RoiBox {
            sample: 0,
            x1: 3.0,
            y1: 3.0,
            x2: 2.0,
            y2: 5.0,
        };
        assert!(roi_pool(&features, &[roi], (1, 1)).is_err());
        // entirely outside the map
        let outside = RoiBox {
            sample: 0,
            x1: 10.0,
            y1: 10.0,
            x2: 12.0,
            y2: 12.0,
        };
        assert!(roi_pool(&features, &[outside], (1, 1)).is_err());
    }

    #[test]
    fn linear_identity_and_bias() {
        let input = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::zeros(&[2]);
        assert_eq!(linear(&input, &eye, &zero_b).unwrap(), input);

        let zero_w = Tensor::zeros(&[2, 3]);
        let b = Tensor::new(vec![3], vec![5.0, 6.0, 7.0]).unwrap();
        let out = linear(&input, &zero_w, &b).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 7.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn xent_uniform_logits_is_ln_k() {
        let logits = Tensor::zeros(&[3, 4]);
        let loss = softmax_xent(&logits, &[0, 1, 3]).unwrap();
        assert!((loss.scalar_value().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn xent_large_margin_goes_to_zero() {
        let mut logits = Tensor::zeros(&[2, 5]);
        logits.data_mut()[2] = 20.0;
        logits.data_mut()[5 + 4] = 20.0;
        let loss = softmax_xent(&logits, &[2, 4]).unwrap();
        assert!(loss.scalar_value().unwrap() < 1e-3);
    }

    #[test]
    fn xent_rejects_bad_label() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(softmax_xent(&logits, &[3]).is_err());
    }

    #[test]
    fn l1_hand_case() {
        let pred = Tensor::new(vec![1, 4], vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let target = Tensor::zeros(&[1, 4]);
        let loss = l1_reg_loss(&pred, &target, &[1.0]).unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 1.5);
    }

    #[test]
    fn l1_exact_match_is_zero_with_zero_grad() {
        let pred = Tensor::new(vec![2, 4], vec![1.0; 8]).unwrap();
        let loss = l1_reg_loss(&pred, &pred, &[1.0, 1.0]).unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 0.0);
        let (g, _) = l1_backward(&pred, &pred, &[1.0, 1.0], 1.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_background_rows_contribute_nothing() {
        let pred = Tensor::new(vec![2, 4], vec![1.0, 1.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0]).unwrap();
        let target = Tensor::zeros(&[2, 4]);
        let loss = l1_reg_loss(&pred, &target, &[1.0, 0.0]).unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 1.0);
        let all_bg = l1_reg_loss(&pred, &target, &[0.0, 0.0]).unwrap();
        assert_eq!(all_bg.scalar_value().unwrap(), 0.0);
    }
}
