//! Differentiable tensor operations.
//!
//! All accumulations run single-threaded in a pinned order (see the module
//! docs in `tensor`). Backward functions take the original forward input,
//! never the output, so they can recompute argmax/sign decisions
//! deterministically.

use super::{ConvParams, GradientBundle, Tensor4};
use crate::error::{Error, Result};

/// Spatial output size of a convolution axis, or a geometry error if the
/// stride does not divide the padded extent exactly.
fn conv_axis(extent: usize, kernel: usize, stride: usize, padding: usize, op: &'static str) -> Result<usize> {
    let padded = extent + 2 * padding;
    if padded < kernel {
        return Err(Error::Geometry {
            op,
            detail: format!("kernel {kernel} exceeds padded extent {padded}"),
        });
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(Error::Geometry {
            op,
            detail: format!(
                "extent {extent} with kernel {kernel}, stride {stride}, padding {padding} gives a non-integral output size"
            ),
        });
    }
    Ok(span / stride + 1)
}

/// Cross-correlation with per-output-channel bias.
///
/// Each output element accumulates channel-major, then row-major over the
/// kernel window, starting from zero; the bias is added last. This order is
/// part of the contract: a 1x1 kernel applied to a 1x1 input reproduces
/// `fully_connected` bit for bit.
pub fn conv2d(input: &Tensor4, params: &ConvParams) -> Result<Tensor4> {
    let (n, c, h, w) = input.dims();
    let (oc, ic, k, _) = params.weights.dims();
    if c != ic {
        return Err(Error::Shape {
            op: "conv2d",
            expected: format!("{ic} input channels"),
            actual: format!("{c} input channels"),
        });
    }
    let oh = conv_axis(h, k, params.stride, params.padding, "conv2d")?;
    let ow = conv_axis(w, k, params.stride, params.padding, "conv2d")?;

    let mut out = Tensor4::zeros(n, oc, oh, ow);
    let pad = params.padding as isize;
    // Slice-based inner loops: the accumulation order (ascending input
    // channel, then kernel row, then kernel column) is part of the
    // contract, so the in-bounds fast path only removes index math.
    for b in 0..n {
        let input_planes: Vec<&[f32]> = (0..c).map(|i| input.plane(b, i)).collect();
        for o in 0..oc {
            let weight_planes: Vec<&[f32]> = (0..c).map(|i| params.weights.plane(o, i)).collect();
            let bias = params.bias[o];
            for y in 0..oh {
                let y0 = (y * params.stride) as isize - pad;
                for x in 0..ow {
                    let x0 = (x * params.stride) as isize - pad;
                    let whole_row = x0 >= 0 && x0 + k as isize <= w as isize;
                    let mut acc = 0.0f32;
                    for i in 0..c {
                        let iplane = input_planes[i];
                        let wplane = weight_planes[i];
                        for ky in 0..k {
                            let sy = y0 + ky as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let irow = &iplane[sy as usize * w..sy as usize * w + w];
                            let wrow = &wplane[ky * k..ky * k + k];
                            if whole_row {
                                let x0 = x0 as usize;
                                for kx in 0..k {
                                    acc += wrow[kx] * irow[x0 + kx];
                                }
                            } else {
                                for kx in 0..k {
                                    let sx = x0 + kx as isize;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += wrow[kx] * irow[sx as usize];
                                }
                            }
                        }
                    }
                    out.set(b, o, y, x, acc + bias);
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode gradients of [`conv2d`] with respect to input, weights,
/// and bias.
pub fn conv2d_backward(input: &Tensor4, params: &ConvParams, upstream: &Tensor4) -> Result<GradientBundle> {
    let (n, c, h, w) = input.dims();
    let (oc, ic, k, _) = params.weights.dims();
    if c != ic {
        return Err(Error::Shape {
            op: "conv2d_backward",
            expected: format!("{ic} input channels"),
            actual: format!("{c} input channels"),
        });
    }
    let oh = conv_axis(h, k, params.stride, params.padding, "conv2d_backward")?;
    let ow = conv_axis(w, k, params.stride, params.padding, "conv2d_backward")?;
    if upstream.dims() != (n, oc, oh, ow) {
        return Err(Error::Shape {
            op: "conv2d_backward",
            expected: format!("upstream ({n}, {oc}, {oh}, {ow})"),
            actual: format!("upstream {:?}", upstream.dims()),
        });
    }

    let mut input_grad = Tensor4::zeros(n, c, h, w);
    let mut weight_grad = Tensor4::zeros(oc, ic, k, k);
    let mut bias_grad = vec![0.0f32; oc];
    let pad = params.padding as isize;
    let plane = h * w;
    let kernel = k * k;
    let input_data = input.data();
    let weight_data = params.weights.data();
    let ig = input_grad.data_mut();
    let wg = weight_grad.data_mut();
    // Flat-offset inner loops; accumulation order matches the forward op
    // (batch, out channel, output row/col, in channel, kernel row/col).
    for b in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                let y0 = (y * params.stride) as isize - pad;
                for x in 0..ow {
                    let g = upstream.at(b, o, y, x);
                    bias_grad[o] += g;
                    let x0 = (x * params.stride) as isize - pad;
                    let whole_row = x0 >= 0 && x0 + k as isize <= w as isize;
                    for i in 0..c {
                        let ibase = (b * c + i) * plane;
                        let wbase = (o * ic + i) * kernel;
                        for ky in 0..k {
                            let sy = y0 + ky as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let irow = ibase + sy as usize * w;
                            let wrow = wbase + ky * k;
                            if whole_row {
                                let x0 = x0 as usize;
                                for kx in 0..k {
                                    let ii = irow + x0 + kx;
                                    ig[ii] += g * weight_data[wrow + kx];
                                    wg[wrow + kx] += g * input_data[ii];
                                }
                            } else {
                                for kx in 0..k {
                                    let sx = x0 + kx as isize;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let ii = irow + sx as usize;
                                    ig[ii] += g * weight_data[wrow + kx];
                                    wg[wrow + kx] += g * input_data[ii];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(GradientBundle {
        input_grad,
        weight_grad: Some(weight_grad),
        bias_grad: Some(bias_grad),
    })
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor4) -> Tensor4 {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes upstream where the forward input was strictly positive; the
/// subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    input.zip(upstream, "relu_backward", |x, g| if x > 0.0 { g } else { 0.0 })
}

/// 2x2 max pooling with stride 2. Requires even spatial dims.
pub fn maxpool2(input: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Geometry {
            op: "maxpool2",
            detail: format!("spatial dims must be even, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = input.at(b, ch, 2 * y, 2 * x);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let v = input.at(b, ch, 2 * y + dy, 2 * x + dx);
                        if v > best {
                            best = v;
                        }
                    }
                    out.set(b, ch, y, x, best);
                }
            }
        }
    }
    Ok(out)
}

/// Routes each upstream value to its window's argmax; ties break to the
/// lowest row-major index within the window.
pub fn maxpool2_backward(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Geometry {
            op: "maxpool2_backward",
            detail: format!("spatial dims must be even, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    if upstream.dims() != (n, c, oh, ow) {
        return Err(Error::Shape {
            op: "maxpool2_backward",
            expected: format!("upstream ({n}, {c}, {oh}, {ow})"),
            actual: format!("upstream {:?}", upstream.dims()),
        });
    }
    let mut grad = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let (mut by, mut bx) = (2 * y, 2 * x);
                    let mut best = input.at(b, ch, by, bx);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let v = input.at(b, ch, 2 * y + dy, 2 * x + dx);
                        if v > best {
                            best = v;
                            by = 2 * y + dy;
                            bx = 2 * x + dx;
                        }
                    }
                    let g = grad.at(b, ch, by, bx);
                    grad.set(b, ch, by, bx, g + upstream.at(b, ch, y, x));
                }
            }
        }
    }
    Ok(grad)
}

/// Per-channel spatial mean, `(n, c, h, w) -> (n, c, 1, 1)`.
///
/// Accumulates row-major and divides once, so it agrees bitwise with the
/// spatial-average head layer.
pub fn global_avg_pool(input: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = input.dims();
    let count = (h * w) as f32;
    let mut out = Tensor4::zeros(n, c, 1, 1);
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0f32;
            for v in input.plane(b, ch) {
                acc += v;
            }
            out.set(b, ch, 0, 0, acc / count);
        }
    }
    out
}

/// Distributes `upstream / (h * w)` uniformly over each channel plane.
pub fn global_avg_pool_backward(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = input.dims();
    if upstream.dims() != (n, c, 1, 1) {
        return Err(Error::Shape {
            op: "global_avg_pool_backward",
            expected: format!("upstream ({n}, {c}, 1, 1)"),
            actual: format!("upstream {:?}", upstream.dims()),
        });
    }
    let count = (h * w) as f32;
    let mut grad = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let g = upstream.at(b, ch, 0, 0) / count;
            let start = grad.offset(b, ch, 0, 0);
            for v in &mut grad.data_mut()[start..start + h * w] {
                *v = g;
            }
        }
    }
    Ok(grad)
}

/// `out_c = sum_k w[c][k] * in[k] + b[c]`, accumulating in ascending `k`.
///
/// Weights are stored as a `(C, K, 1, 1)` tensor so they can move into a
/// 1x1 convolution without reshaping the data.
pub fn fully_connected(input: &[f32], weights: &Tensor4, bias: &[f32]) -> Result<Vec<f32>> {
    let (cout, kin, wh, ww) = weights.dims();
    if wh != 1 || ww != 1 {
        return Err(Error::Shape {
            op: "fully_connected",
            expected: "weights of shape (C, K, 1, 1)".into(),
            actual: format!("{:?}", weights.dims()),
        });
    }
    if input.len() != kin {
        return Err(Error::Shape {
            op: "fully_connected",
            expected: format!("input of length {kin}"),
            actual: format!("input of length {}", input.len()),
        });
    }
    if bias.len() != cout {
        return Err(Error::Shape {
            op: "fully_connected",
            expected: format!("bias of length {cout}"),
            actual: format!("bias of length {}", bias.len()),
        });
    }
    let mut out = Vec::with_capacity(cout);
    for c in 0..cout {
        let mut acc = 0.0f32;
        for (k, &v) in input.iter().enumerate() {
            acc += weights.at(c, k, 0, 0) * v;
        }
        out.push(acc + bias[c]);
    }
    Ok(out)
}

/// Reverse-mode gradients of [`fully_connected`].
pub fn fully_connected_backward(
    input: &[f32],
    weights: &Tensor4,
    upstream: &[f32],
) -> Result<(Vec<f32>, Tensor4, Vec<f32>)> {
    let (cout, kin, _, _) = weights.dims();
    if input.len() != kin || upstream.len() != cout {
        return Err(Error::Shape {
            op: "fully_connected_backward",
            expected: format!("input of length {kin}, upstream of length {cout}"),
            actual: format!("input of length {}, upstream of length {}", input.len(), upstream.len()),
        });
    }
    let mut input_grad = vec![0.0f32; kin];
    for (k, gi) in input_grad.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for (c, &g) in upstream.iter().enumerate() {
            acc += weights.at(c, k, 0, 0) * g;
        }
        *gi = acc;
    }
    let mut weight_grad = Tensor4::zeros(cout, kin, 1, 1);
    for (c, &g) in upstream.iter().enumerate() {
        for (k, &v) in input.iter().enumerate() {
            weight_grad.set(c, k, 0, 0, g * v);
        }
    }
    Ok((input_grad, weight_grad, upstream.to_vec()))
}

/// Numerically stabilized softmax (subtracts the max before exponentiating).
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// `-ln p[label]`.
pub fn cross_entropy(probabilities: &[f32], label: usize) -> Result<f32> {
    if label >= probabilities.len() {
        return Err(Error::LabelRange {
            label,
            classes: probabilities.len(),
        });
    }
    Ok(-probabilities[label].ln())
}

/// Gradient of cross-entropy-of-softmax with respect to the logits:
/// `p - onehot(label)`.
pub fn softmax_cross_entropy_backward(probabilities: &[f32], label: usize) -> Result<Vec<f32>> {
    if label >= probabilities.len() {
        return Err(Error::LabelRange {
            label,
            classes: probabilities.len(),
        });
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == label { p - 1.0 } else { p })
        .collect())
}

/// Bilinear resize, align-corners-false: the source coordinate of output
/// pixel `d` is `(d + 0.5) * in/out - 0.5`, clamped to the valid range.
///
/// Blending runs in f64 so the op stays exactly affine in its input at f32
/// granularity, which lets downstream normalization cancel constant
/// offsets.
pub fn bilinear_resize(input: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Geometry {
            op: "bilinear_resize",
            detail: "output dims must be at least 1".into(),
        });
    }
    let (n, c, h, w) = input.dims();
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Tensor4::zeros(n, c, out_h, out_w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..out_h {
                let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let fy = sy - y0 as f64;
                for x in 0..out_w {
                    let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let fx = sx - x0 as f64;
                    let v00 = input.at(b, ch, y0, x0) as f64;
                    let v01 = input.at(b, ch, y0, x1) as f64;
                    let v10 = input.at(b, ch, y1, x0) as f64;
                    let v11 = input.at(b, ch, y1, x1) as f64;
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bottom = v10 * (1.0 - fx) + v11 * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    out.set(b, ch, y, x, v as f32);
                }
            }
        }
    }
    Ok(out)
}

/// `(x - min) / (max - min)` over the whole tensor; a constant tensor
/// normalizes to all zeros.
///
/// The division runs in f64: differences of f32 values are exact in f64,
/// so normalizing `x` and normalizing `x + b` give identical f32 grids.
pub fn minmax_normalize(map: &Tensor4) -> Tensor4 {
    let min = map.min_value() as f64;
    let max = map.max_value() as f64;
    if max == min {
        let (n, c, h, w) = map.dims();
        return Tensor4::zeros(n, c, h, w);
    }
    let range = max - min;
    map.map(|v| ((v as f64 - min) / range) as f32)
}
