//! Sequential CNN graphs: shape validation, forward evaluation with
//! activation caching, reverse-mode backward, and pass accounting.
//!
//! A [`ModelGraph`] is an ordered list of [`LayerSpec`]s plus a named
//! parameter store. Graphs are validated at construction and treated as
//! immutable afterwards (training builds its updates through a crate-ional
//! mutator). [`ModelGraph::forward`] and [`ModelGraph::backward`] are the
//! only evaluation entry points; both tick a caller-supplied
//! [`PassCounter`], which is how explanation pass counts stay auditable.

mod checkpoint;
mod train;

pub use checkpoint::{crc32, from_bytes as model_from_bytes, load, save, to_bytes as model_to_bytes};
pub use train::{train, TrainConfig, Trainer};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{self, ConvParams, Tensor4};

/// Classification-head style.
///
/// `GapFc` is the classic arrangement (features reduced by pooling or
/// flattening, then a linear classifier). `BuiltInCam` is the surgically
/// transformed arrangement whose tail is a pointwise convolution followed
/// by a spatial average, so the pre-average maps are the explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    GapFc,
    BuiltInCam,
}

/// One layer of a sequential graph.
///
/// Parameterized kinds carry the names of their slots in the model's
/// [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: String,
        bias: String,
    },
    ReLU,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    FullyConnected {
        in_features: usize,
        out_features: usize,
        weight: String,
        bias: String,
    },
    /// The 1x1 classification head produced by surgery. Kept distinct from
    /// `Conv` so the head is recognizable structurally.
    PointwiseConvHead {
        in_channels: usize,
        out_channels: usize,
        weight: String,
        bias: String,
    },
    SpatialAverage,
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "Conv",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::MaxPool2 => "MaxPool2",
            LayerSpec::GlobalAvgPool => "GlobalAvgPool",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::FullyConnected { .. } => "FullyConnected",
            LayerSpec::PointwiseConvHead { .. } => "PointwiseConvHead",
            LayerSpec::SpatialAverage => "SpatialAverage",
            LayerSpec::Softmax => "Softmax",
        }
    }

    /// True for the kinds that can form a classification tail; the longest
    /// trailing run of these marks where the backbone ends and the head
    /// begins.
    fn is_head_kind(&self) -> bool {
        matches!(
            self,
            LayerSpec::GlobalAvgPool
                | LayerSpec::Flatten
                | LayerSpec::FullyConnected { .. }
                | LayerSpec::PointwiseConvHead { .. }
                | LayerSpec::SpatialAverage
                | LayerSpec::Softmax
        )
    }
}

/// Named parameter storage. Keys iterate in lexicographic order, which
/// pins the update and serialization order everywhere.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor4>,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, value: Tensor4) {
        self.tensors.insert(name.into(), value);
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, value: Vec<f32>) {
        self.vectors.insert(name.into(), value);
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor4> {
        self.tensors.get(name)
    }

    pub fn vector(&self, name: &str) -> Option<&Vec<f32>> {
        self.vectors.get(name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor4> {
        self.tensors.get_mut(name)
    }

    pub fn vector_mut(&mut self, name: &str) -> Option<&mut Vec<f32>> {
        self.vectors.get_mut(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor4)> {
        self.tensors.iter()
    }

    pub fn vectors(&self) -> impl Iterator<Item = (&String, &Vec<f32>)> {
        self.vectors.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty() && self.vectors.is_empty()
    }
}

/// Forward/backward pass accounting for one explanation request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounter {
    pub forward_count: u64,
    pub backward_count: u64,
}

impl PassCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn record_forward(&mut self) {
        self.forward_count += 1;
    }

    fn record_backward(&mut self) {
        self.backward_count += 1;
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.forward_count, self.backward_count)
    }
}

/// Per-layer activations captured by a cached forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    /// `layer_inputs[i]` is the tensor that entered layer `i`.
    layer_inputs: Vec<Tensor4>,
    output: Tensor4,
    head_start: usize,
}

impl ActivationCache {
    /// The final feature map: the tensor entering the head. For the
    /// degenerate case of a graph with no recognizable head this is the
    /// model output.
    pub fn feature_map(&self) -> &Tensor4 {
        if self.head_start < self.layer_inputs.len() {
            &self.layer_inputs[self.head_start]
        } else {
            &self.output
        }
    }

    pub fn layer_input(&self, index: usize) -> &Tensor4 {
        &self.layer_inputs[index]
    }

    pub fn output(&self) -> &Tensor4 {
        &self.output
    }

    pub fn head_start(&self) -> usize {
        self.head_start
    }
}

/// Result of a forward pass. Logits keep their tensor layout; use
/// [`ForwardOutput::sample_logits`] for per-sample vectors.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor4,
    pub cache: Option<ActivationCache>,
}

impl ForwardOutput {
    pub fn sample_logits(&self, sample: usize) -> Vec<f32> {
        let (_, c, h, w) = self.logits.dims();
        let per = c * h * w;
        self.logits.data()[sample * per..(sample + 1) * per].to_vec()
    }
}

/// Gradients from a backward pass.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub input_grad: Tensor4,
    pub param_grads: ParamStore,
    /// Gradient with respect to the cached final feature map.
    pub feature_grad: Tensor4,
}

/// Per-layer shape walk produced by validation.
#[derive(Debug, Clone)]
pub struct ShapeReport {
    /// Shape after each layer, as per-sample `(c, h, w)`.
    pub layer_shapes: Vec<(usize, usize, usize)>,
    /// Shape entering the head.
    pub feature_shape: (usize, usize, usize),
    /// Index of the first head layer (== layer count if no head suffix).
    pub head_start: usize,
    pub output_len: usize,
    /// Whether the tail is exactly [GlobalAvgPool, Flatten, FullyConnected].
    pub gapfc_tail: bool,
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One sample's prediction.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f32>,
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    params: ParamStore,
    input_shape: (usize, usize, usize),
    class_count: usize,
    head_kind: HeadKind,
}

impl ModelGraph {
    /// Assembles and validates a graph. Construction is the only door:
    /// every `ModelGraph` in existence has passed [`ModelGraph::validate`].
    pub fn new(
        layers: Vec<LayerSpec>,
        params: ParamStore,
        input_shape: (usize, usize, usize),
        class_count: usize,
        head_kind: HeadKind,
    ) -> Result<Self> {
        let model = ModelGraph {
            layers,
            params,
            input_shape,
            class_count,
            head_kind,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access to the parameters, e.g. for optimizer steps or
    /// finite-difference probes. Callers must preserve slot shapes.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head_kind
    }

    /// Index of the first layer of the trailing head run.
    pub fn head_start(&self) -> usize {
        let mut start = self.layers.len();
        while start > 0 && self.layers[start - 1].is_head_kind() {
            start -= 1;
        }
        start
    }

    /// The FC classifier parameters `(weights, bias)` if the model ends in
    /// a fully-connected layer.
    pub fn fc_head(&self) -> Option<(&Tensor4, &Vec<f32>)> {
        match self.layers.last()? {
            LayerSpec::FullyConnected { weight, bias, .. } => {
                Some((self.params.tensor(weight)?, self.params.vector(bias)?))
            }
            _ => None,
        }
    }

    /// Propagates shapes through every layer, checking parameter slots and
    /// hyperparameter consistency along the way.
    pub fn validate(&self) -> Result<ShapeReport> {
        let mut shape = self.input_shape;
        let mut layer_shapes = Vec::with_capacity(self.layers.len());
        let head_start = self.head_start();
        let mut feature_shape = self.input_shape;

        for (i, layer) in self.layers.iter().enumerate() {
            if i == head_start {
                feature_shape = shape;
            }
            shape = self.validate_layer(i, layer, shape)?;
            layer_shapes.push(shape);
        }
        if head_start == self.layers.len() {
            feature_shape = shape;
        }

        let output_len = shape.0 * shape.1 * shape.2;
        if output_len != self.class_count {
            return Err(Error::Validation {
                layer: self.layers.len().saturating_sub(1),
                kind: "output".into(),
                expected: format!("{} logits", self.class_count),
                actual: format!("{output_len} values of shape {shape:?}"),
            });
        }
        if self.class_count < 2 {
            return Err(Error::Config {
                detail: format!("class_count must be at least 2, got {}", self.class_count),
            });
        }

        let n = self.layers.len();
        let gapfc_tail = n >= 3
            && matches!(self.layers[n - 3], LayerSpec::GlobalAvgPool)
            && matches!(self.layers[n - 2], LayerSpec::Flatten)
            && matches!(self.layers[n - 1], LayerSpec::FullyConnected { .. });

        if self.head_kind == HeadKind::BuiltInCam {
            let builtin_tail = n >= 2
                && matches!(self.layers[n - 2], LayerSpec::PointwiseConvHead { .. })
                && matches!(self.layers[n - 1], LayerSpec::SpatialAverage);
            if !builtin_tail {
                return Err(Error::Validation {
                    layer: n.saturating_sub(1),
                    kind: "head".into(),
                    expected: "a [PointwiseConvHead, SpatialAverage] tail for a built-in-CAM head".into(),
                    actual: "a different tail".into(),
                });
            }
        }

        Ok(ShapeReport {
            layer_shapes,
            feature_shape,
            head_start,
            output_len,
            gapfc_tail,
        })
    }

    fn validate_layer(
        &self,
        index: usize,
        layer: &LayerSpec,
        (c, h, w): (usize, usize, usize),
    ) -> Result<(usize, usize, usize)> {
        let mismatch = |expected: String, actual: String| Error::Validation {
            layer: index,
            kind: layer.kind_name().into(),
            expected,
            actual,
        };
        match layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            } => {
                if c != *in_channels {
                    return Err(mismatch(format!("{in_channels} input channels"), format!("{c} channels")));
                }
                let wt = self
                    .params
                    .tensor(weight)
                    .ok_or_else(|| mismatch(format!("parameter slot '{weight}'"), "missing slot".into()))?;
                if wt.dims() != (*out_channels, *in_channels, *kernel, *kernel) {
                    return Err(mismatch(
                        format!("weights ({out_channels}, {in_channels}, {kernel}, {kernel})"),
                        format!("weights {:?}", wt.dims()),
                    ));
                }
                let bv = self
                    .params
                    .vector(bias)
                    .ok_or_else(|| mismatch(format!("parameter slot '{bias}'"), "missing slot".into()))?;
                if bv.len() != *out_channels {
                    return Err(mismatch(format!("bias of length {out_channels}"), format!("bias of length {}", bv.len())));
                }
                let oh = conv_out(h, *kernel, *stride, *padding)
                    .ok_or_else(|| mismatch("an integral conv output height".into(), format!("height {h} with kernel {kernel}, stride {stride}, padding {padding}")))?;
                let ow = conv_out(w, *kernel, *stride, *padding)
                    .ok_or_else(|| mismatch("an integral conv output width".into(), format!("width {w} with kernel {kernel}, stride {stride}, padding {padding}")))?;
                Ok((*out_channels, oh, ow))
            }
            LayerSpec::ReLU => Ok((c, h, w)),
            LayerSpec::MaxPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(mismatch("even spatial dims".into(), format!("{h}x{w}")));
                }
                Ok((c, h / 2, w / 2))
            }
            LayerSpec::GlobalAvgPool => Ok((c, 1, 1)),
            LayerSpec::Flatten => Ok((c * h * w, 1, 1)),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
                weight,
                bias,
            } => {
                if (c, h, w) != (*in_features, 1, 1) {
                    return Err(mismatch(format!("({in_features}, 1, 1)"), format!("({c}, {h}, {w})")));
                }
                let wt = self
                    .params
                    .tensor(weight)
                    .ok_or_else(|| mismatch(format!("parameter slot '{weight}'"), "missing slot".into()))?;
                if wt.dims() != (*out_features, *in_features, 1, 1) {
                    return Err(mismatch(
                        format!("weights ({out_features}, {in_features}, 1, 1)"),
                        format!("weights {:?}", wt.dims()),
                    ));
                }
                let bv = self
                    .params
                    .vector(bias)
                    .ok_or_else(|| mismatch(format!("parameter slot '{bias}'"), "missing slot".into()))?;
                if bv.len() != *out_features {
                    return Err(mismatch(format!("bias of length {out_features}"), format!("bias of length {}", bv.len())));
                }
                Ok((*out_features, 1, 1))
            }
            LayerSpec::PointwiseConvHead {
                in_channels,
                out_channels,
                weight,
                bias,
            } => {
                if c != *in_channels {
                    return Err(mismatch(format!("{in_channels} input channels"), format!("{c} channels")));
                }
                let wt = self
                    .params
                    .tensor(weight)
                    .ok_or_else(|| mismatch(format!("parameter slot '{weight}'"), "missing slot".into()))?;
                if wt.dims() != (*out_channels, *in_channels, 1, 1) {
                    return Err(mismatch(
                        format!("weights ({out_channels}, {in_channels}, 1, 1)"),
                        format!("weights {:?}", wt.dims()),
                    ));
                }
                let bv = self
                    .params
                    .vector(bias)
                    .ok_or_else(|| mismatch(format!("parameter slot '{bias}'"), "missing slot".into()))?;
                if bv.len() != *out_channels {
                    return Err(mismatch(format!("bias of length {out_channels}"), format!("bias of length {}", bv.len())));
                }
                Ok((*out_channels, h, w))
            }
            LayerSpec::SpatialAverage => Ok((c, 1, 1)),
            LayerSpec::Softmax => {
                if h != 1 || w != 1 {
                    return Err(mismatch("a vector (c, 1, 1)".into(), format!("({c}, {h}, {w})")));
                }
                Ok((c, 1, 1))
            }
        }
    }

    /// Runs the graph on a batch. Increments `counter` by exactly one
    /// forward regardless of batch size; fills a cache iff requested.
    pub fn forward(&self, batch: &Tensor4, want_cache: bool, counter: &mut PassCounter) -> Result<ForwardOutput> {
        let (_, c, h, w) = batch.dims();
        if (c, h, w) != self.input_shape {
            return Err(Error::Shape {
                op: "forward",
                expected: format!("input shape {:?}", self.input_shape),
                actual: format!("({c}, {h}, {w})"),
            });
        }
        counter.record_forward();

        let head_start = self.head_start();
        let mut inputs = Vec::with_capacity(if want_cache { self.layers.len() } else { 0 });
        let mut current = batch.clone();
        for layer in &self.layers {
            let next = self.apply(layer, &current)?;
            if want_cache {
                inputs.push(current);
            }
            current = next;
        }
        let cache = want_cache.then(|| ActivationCache {
            layer_inputs: inputs,
            output: current.clone(),
            head_start,
        });
        Ok(ForwardOutput { logits: current, cache })
    }

    fn conv_params_for(&self, weight: &str, bias: &str, stride: usize, padding: usize) -> Result<ConvParams> {
        let wt = self.params.tensor(weight).ok_or_else(|| Error::Shape {
            op: "forward",
            expected: format!("parameter slot '{weight}'"),
            actual: "missing slot".into(),
        })?;
        let bv = self.params.vector(bias).ok_or_else(|| Error::Shape {
            op: "forward",
            expected: format!("parameter slot '{bias}'"),
            actual: "missing slot".into(),
        })?;
        ConvParams::new(wt.clone(), bv.clone(), stride, padding)
    }

    fn apply(&self, layer: &LayerSpec, input: &Tensor4) -> Result<Tensor4> {
        match layer {
            LayerSpec::Conv {
                stride,
                padding,
                weight,
                bias,
                ..
            } => {
                let params = self.conv_params_for(weight, bias, *stride, *padding)?;
                tensor::conv2d(input, &params)
            }
            LayerSpec::ReLU => Ok(tensor::relu(input)),
            LayerSpec::MaxPool2 => tensor::maxpool2(input),
            LayerSpec::GlobalAvgPool => Ok(tensor::global_avg_pool(input)),
            LayerSpec::Flatten => {
                let (n, c, h, w) = input.dims();
                input.reshaped(n, c * h * w, 1, 1)
            }
            LayerSpec::FullyConnected { weight, bias, .. } => {
                let wt = self.params.tensor(weight).expect("validated slot");
                let bv = self.params.vector(bias).expect("validated slot");
                let (n, c, _, _) = input.dims();
                let cout = bv.len();
                let mut data = Vec::with_capacity(n * cout);
                for s in 0..n {
                    let row = &input.data()[s * c..(s + 1) * c];
                    data.extend(tensor::fully_connected(row, wt, bv)?);
                }
                Tensor4::new(n, cout, 1, 1, data)
            }
            LayerSpec::PointwiseConvHead { weight, bias, .. } => {
                let params = self.conv_params_for(weight, bias, 1, 0)?;
                tensor::conv2d(input, &params)
            }
            LayerSpec::SpatialAverage => Ok(tensor::global_avg_pool(input)),
            LayerSpec::Softmax => {
                let (n, c, _, _) = input.dims();
                let mut data = Vec::with_capacity(n * c);
                for s in 0..n {
                    data.extend(tensor::softmax(&input.data()[s * c..(s + 1) * c]));
                }
                Tensor4::new(n, c, 1, 1, data)
            }
        }
    }

    /// Reverse-mode pass from an upstream gradient on the logits down to
    /// the input, collecting parameter gradients along the way.
    pub fn backward(&self, cache: &ActivationCache, upstream: &Tensor4, counter: &mut PassCounter) -> Result<BackwardOutput> {
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        if upstream.dims() != cache.output.dims() {
            return Err(Error::Shape {
                op: "backward",
                expected: format!("upstream {:?}", cache.output.dims()),
                actual: format!("{:?}", upstream.dims()),
            });
        }
        counter.record_backward();

        let head_start = cache.head_start;
        let mut grad = upstream.clone();
        let mut param_grads = ParamStore::new();
        let mut feature_grad = if head_start == self.layers.len() {
            Some(upstream.clone())
        } else {
            None
        };

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.layer_inputs[i];
            if input.batch() != grad.batch() {
                return Err(Error::StaleCache);
            }
            grad = self.apply_backward(layer, input, &grad, &mut param_grads)?;
            if i == head_start {
                feature_grad = Some(grad.clone());
            }
        }

        Ok(BackwardOutput {
            input_grad: grad,
            param_grads,
            feature_grad: feature_grad.expect("head_start within bounds"),
        })
    }

    fn apply_backward(
        &self,
        layer: &LayerSpec,
        input: &Tensor4,
        upstream: &Tensor4,
        param_grads: &mut ParamStore,
    ) -> Result<Tensor4> {
        match layer {
            LayerSpec::Conv {
                stride,
                padding,
                weight,
                bias,
                ..
            } => {
                let params = self.conv_params_for(weight, bias, *stride, *padding)?;
                let bundle = tensor::conv2d_backward(input, &params, upstream)?;
                param_grads.insert_tensor(weight.clone(), bundle.weight_grad.expect("conv weight grad"));
                param_grads.insert_vector(bias.clone(), bundle.bias_grad.expect("conv bias grad"));
                Ok(bundle.input_grad)
            }
            LayerSpec::PointwiseConvHead { weight, bias, .. } => {
                let params = self.conv_params_for(weight, bias, 1, 0)?;
                let bundle = tensor::conv2d_backward(input, &params, upstream)?;
                param_grads.insert_tensor(weight.clone(), bundle.weight_grad.expect("conv weight grad"));
                param_grads.insert_vector(bias.clone(), bundle.bias_grad.expect("conv bias grad"));
                Ok(bundle.input_grad)
            }
            LayerSpec::ReLU => tensor::relu_backward(input, upstream),
            LayerSpec::MaxPool2 => tensor::maxpool2_backward(input, upstream),
            LayerSpec::GlobalAvgPool | LayerSpec::SpatialAverage => {
                tensor::global_avg_pool_backward(input, upstream)
            }
            LayerSpec::Flatten => {
                let (n, c, h, w) = input.dims();
                upstream.reshaped(n, c, h, w)
            }
            LayerSpec::FullyConnected { weight, bias, .. } => {
                let wt = self.params.tensor(weight).expect("validated slot");
                let (n, kin, _, _) = input.dims();
                let cout = upstream.dims().1;
                let mut input_grad = Vec::with_capacity(n * kin);
                let mut weight_acc: Option<Tensor4> = None;
                let mut bias_acc = vec![0.0f32; cout];
                for s in 0..n {
                    let row = &input.data()[s * kin..(s + 1) * kin];
                    let up = &upstream.data()[s * cout..(s + 1) * cout];
                    let (ig, wg, bg) = tensor::fully_connected_backward(row, wt, up)?;
                    input_grad.extend(ig);
                    weight_acc = Some(match weight_acc {
                        None => wg,
                        Some(acc) => acc.zip(&wg, "fc weight grad", |a, b| a + b)?,
                    });
                    for (a, b) in bias_acc.iter_mut().zip(bg) {
                        *a += b;
                    }
                }
                param_grads.insert_tensor(weight.clone(), weight_acc.expect("non-empty batch"));
                param_grads.insert_vector(bias.clone(), bias_acc);
                Tensor4::new(n, kin, 1, 1, input_grad)
            }
            LayerSpec::Softmax => {
                // dL/dz_i = p_i * (g_i - sum_j g_j p_j), recomputing p from
                // the cached input.
                let (n, c, _, _) = input.dims();
                let mut data = Vec::with_capacity(n * c);
                for s in 0..n {
                    let p = tensor::softmax(&input.data()[s * c..(s + 1) * c]);
                    let g = &upstream.data()[s * c..(s + 1) * c];
                    let dot: f32 = g.iter().zip(&p).map(|(gi, pi)| gi * pi).sum();
                    data.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
                }
                Tensor4::new(n, c, 1, 1, data)
            }
        }
    }

    /// Softmax predictions per sample; argmax ties resolve to the lowest
    /// class index.
    pub fn predict(&self, batch: &Tensor4, counter: &mut PassCounter) -> Result<Vec<Prediction>> {
        let out = self.forward(batch, false, counter)?;
        let n = batch.batch();
        let mut predictions = Vec::with_capacity(n);
        for s in 0..n {
            let logits = out.sample_logits(s);
            let probabilities = tensor::softmax(&logits);
            predictions.push(Prediction {
                class: argmax(&probabilities),
                probabilities,
                logits,
            });
        }
        Ok(predictions)
    }
}

fn conv_out(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    let span = padded - kernel;
    (span % stride == 0).then(|| span / stride + 1)
}

/// Canonical slot names for the layer at `index`.
pub fn slot_names(index: usize) -> (String, String) {
    (format!("layer{index}.weight"), format!("layer{index}.bias"))
}

fn kaiming_uniform(stream: &mut Stream, dims: (usize, usize, usize, usize), fan_in: usize) -> Tensor4 {
    let bound = (6.0 / fan_in as f32).sqrt();
    let (n, c, h, w) = dims;
    let data = (0..n * c * h * w).map(|_| stream.range_f32(-bound, bound)).collect();
    Tensor4::new(n, c, h, w, data).expect("sized data")
}

const INIT_TAG: u64 = 0x1217;

/// The reference backbone: three 3x3 conv blocks (8, 16, 16 channels, two
/// 2x2 pools) followed by a GAP -> Flatten -> FC classifier. Stride 4
/// overall, so a 64x64 input produces a 16x16 feature map with 16
/// channels.
pub fn tiny_net(height: usize, width: usize, classes: usize, seed: u64) -> Result<ModelGraph> {
    let mut params = ParamStore::new();
    let mut layers = Vec::new();

    let conv = |index: usize, ic: usize, oc: usize, params: &mut ParamStore| {
        let (wslot, bslot) = slot_names(index);
        let mut stream = Stream::new(seed, &[INIT_TAG, index as u64]);
        params.insert_tensor(&wslot, kaiming_uniform(&mut stream, (oc, ic, 3, 3), ic * 9));
        params.insert_vector(&bslot, vec![0.0; oc]);
        LayerSpec::Conv {
            in_channels: ic,
            out_channels: oc,
            kernel: 3,
            stride: 1,
            padding: 1,
            weight: wslot,
            bias: bslot,
        }
    };

    layers.push(conv(0, 3, 8, &mut params));
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::MaxPool2);
    layers.push(conv(3, 8, 16, &mut params));
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::MaxPool2);
    layers.push(conv(6, 16, 16, &mut params));
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Flatten);

    let (wslot, bslot) = slot_names(10);
    let mut stream = Stream::new(seed, &[INIT_TAG, 10]);
    params.insert_tensor(&wslot, kaiming_uniform(&mut stream, (classes, 16, 1, 1), 16));
    params.insert_vector(&bslot, vec![0.0; classes]);
    layers.push(LayerSpec::FullyConnected {
        in_features: 16,
        out_features: classes,
        weight: wslot,
        bias: bslot,
    });

    ModelGraph::new(layers, params, (3, height, width), classes, HeadKind::GapFc)
}
