//! Test-time head surgery: replaces a [GlobalAvgPool, Flatten,
//! FullyConnected] classification tail with a pointwise convolution
//! followed by a spatial average.
//!
//! The classifier weights are reused unchanged: an FC row over K pooled
//! features becomes one 1x1 filter over K channels, and because average
//! pooling commutes with a linear map, the transformed model produces the
//! same logits while the pre-average maps double as per-class activation
//! maps. The bias rides inside each map (see [`BiasPolicy::BiasInMap`]),
//! so the spatial mean of class `c`'s map reproduces logit `c` exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{slot_names, HeadKind, LayerSpec, ModelGraph, ParamStore, PassCounter};
use crate::tensor::{softmax, Tensor4};

/// How the classifier bias enters the activation maps. With `BiasInMap`
/// the per-class bias is added at every spatial position (it is the 1x1
/// convolution's bias), so each map's spatial mean equals the logit with
/// no correction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPolicy {
    BiasInMap,
}

/// Outcome of a compatibility check, also emitted as the transform
/// command's JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct SurgeryReport {
    pub compatible: bool,
    pub feature_channels: usize,
    pub class_count: usize,
    /// Why the model was rejected; `None` when compatible.
    pub reason: Option<String>,
    pub bias_policy: BiasPolicy,
}

/// Decides whether `model` has the exact head shape surgery understands.
pub fn check_compatibility(model: &ModelGraph) -> Result<SurgeryReport> {
    let report = model.validate()?;
    let feature_channels = report.feature_shape.0;
    let make = |compatible: bool, reason: Option<String>| SurgeryReport {
        compatible,
        feature_channels,
        class_count: model.class_count(),
        reason,
        bias_policy: BiasPolicy::BiasInMap,
    };

    if model.head_kind() == HeadKind::BuiltInCam {
        return Ok(make(false, Some("model already ends in a built-in-CAM head".into())));
    }

    if !report.gapfc_tail {
        let layers = model.layers();
        let n = layers.len();
        // A Flatten feeding the classifier from a spatial tensor means the
        // FC weights are tied to pixel positions and cannot become 1x1
        // filters.
        let flat_fc = n >= 2
            && matches!(layers[n - 1], LayerSpec::FullyConnected { .. })
            && matches!(layers[n - 2], LayerSpec::Flatten);
        if flat_fc {
            let before_flatten = if n >= 3 {
                report.layer_shapes[n - 3]
            } else {
                model.input_shape()
            };
            if before_flatten.1 * before_flatten.2 > 1 {
                return Ok(make(false, Some("head consumes spatial layout".into())));
            }
        }
        return Ok(make(
            false,
            Some("head is not [GlobalAvgPool, Flatten, FullyConnected]".into()),
        ));
    }

    if let Some(LayerSpec::FullyConnected { in_features, .. }) = model.layers().last() {
        if *in_features != feature_channels {
            return Ok(make(
                false,
                Some(format!(
                    "classifier expects {in_features} features but the feature map has {feature_channels} channels"
                )),
            ));
        }
    }

    Ok(make(true, None))
}

/// Builds the transformed model. The backbone is copied verbatim (same
/// layer indices, same parameter slots); the tail becomes
/// [PointwiseConvHead, SpatialAverage] with the FC weights viewed as
/// `(classes, channels, 1, 1)` filters and the FC bias as the conv bias.
/// The input model is not modified.
pub fn transform(model: &ModelGraph) -> Result<ModelGraph> {
    let report = check_compatibility(model)?;
    if !report.compatible {
        return Err(Error::Surgery {
            reason: report.reason.unwrap_or_else(|| "incompatible model".into()),
        });
    }

    let (fc_weights, fc_bias) = model.fc_head().ok_or(Error::Surgery {
        reason: "classifier parameters missing".into(),
    })?;
    let classes = model.class_count();
    let channels = report.feature_channels;

    let backbone_len = model.head_start();
    let mut layers: Vec<LayerSpec> = model.layers()[..backbone_len].to_vec();
    let mut params = ParamStore::new();
    for layer in &layers {
        if let LayerSpec::Conv { weight, bias, .. }
        | LayerSpec::FullyConnected { weight, bias, .. }
        | LayerSpec::PointwiseConvHead { weight, bias, .. } = layer
        {
            params.insert_tensor(
                weight.clone(),
                model.params().tensor(weight).expect("validated slot").clone(),
            );
            params.insert_vector(
                bias.clone(),
                model.params().vector(bias).expect("validated slot").clone(),
            );
        }
    }

    let (wslot, bslot) = slot_names(backbone_len);
    let head_weights = fc_weights.reshaped(classes, channels, 1, 1)?;
    params.insert_tensor(&wslot, head_weights);
    params.insert_vector(&bslot, fc_bias.clone());
    layers.push(LayerSpec::PointwiseConvHead {
        in_channels: channels,
        out_channels: classes,
        weight: wslot,
        bias: bslot,
    });
    layers.push(LayerSpec::SpatialAverage);

    ModelGraph::new(
        layers,
        params,
        model.input_shape(),
        classes,
        HeadKind::BuiltInCam,
    )
}

/// Per-class maps read directly off a transformed model's head.
#[derive(Debug, Clone)]
pub struct BuiltInExplanation {
    pub logits: Vec<f32>,
    pub probabilities: Vec<f32>,
    pub predicted_class: usize,
    /// One `(1, 1, h, w)` map per class, in class order.
    pub cams: Vec<Tensor4>,
    pub pass_counts: PassCounter,
}

/// Evaluates a transformed model on one sample and returns its built-in
/// class activation maps. Costs exactly one forward pass and no backward
/// passes.
pub fn explain_builtin(model: &ModelGraph, input: &Tensor4) -> Result<BuiltInExplanation> {
    if model.head_kind() != HeadKind::BuiltInCam {
        return Err(Error::HeadKind {
            op: "explain_builtin",
            expected: "built-in-CAM",
        });
    }
    if input.batch() != 1 {
        return Err(Error::Shape {
            op: "explain_builtin",
            expected: "a single-sample batch".into(),
            actual: format!("batch of {}", input.batch()),
        });
    }

    let mut counter = PassCounter::new();
    let out = model.forward(input, true, &mut counter)?;
    let cache = out.cache.as_ref().expect("cache requested");

    // The maps are the tensor entering the final spatial average.
    let maps = cache.layer_input(model.layers().len() - 1);
    let classes = model.class_count();
    let mut cams = Vec::with_capacity(classes);
    for class in 0..classes {
        cams.push(maps.extract_plane(0, class));
    }

    let logits = out.sample_logits(0);
    let probabilities = softmax(&logits);
    let predicted_class = crate::graph::argmax(&probabilities);
    Ok(BuiltInExplanation {
        logits,
        probabilities,
        predicted_class,
        cams,
        pass_counts: counter,
    })
}
