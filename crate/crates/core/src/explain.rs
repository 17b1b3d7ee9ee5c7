//! Post-hoc saliency baselines: CAM, GradCAM, LayerCAM, ScoreCAM, and
//! Integrated Gradients.
//!
//! Every explainer consumes a model exclusively through
//! [`ModelGraph::forward`] and [`ModelGraph::backward`], so the pass
//! counts reported in each [`SaliencyMap`] are exact: cam (1, 0),
//! grad_cam (1, 1), layer_cam (1, 1), score_cam (K+1, 0), and
//! integrated_gradients (m, m). Feature-resolution methods all explain
//! the same layer: the tensor entering the classification head. The
//! ScoreCAM channel score subtracts the baseline-image probability in
//! its definition; since that term is the same for every channel it
//! cancels inside the softmax weighting, so no separate baseline forward
//! is spent on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{argmax, ActivationCache, HeadKind, ModelGraph, PassCounter};
use crate::surgery;
use crate::tensor::{bilinear_resize, minmax_normalize, softmax, Tensor4};

/// Saliency method tags, including the transformed model's built-in maps
/// (`Tte`), which the evaluation pipeline treats as a sixth method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cam,
    GradCam,
    LayerCam,
    ScoreCam,
    Ig,
    Tte,
}

pub const ALL_METHODS: [Method; 6] = [
    Method::Cam,
    Method::GradCam,
    Method::LayerCam,
    Method::ScoreCam,
    Method::Ig,
    Method::Tte,
];

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cam => "cam",
            Method::GradCam => "gradcam",
            Method::LayerCam => "layercam",
            Method::ScoreCam => "scorecam",
            Method::Ig => "ig",
            Method::Tte => "tte",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        ALL_METHODS.iter().copied().find(|m| m.name() == name)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which class a map should explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTarget {
    /// The model's own argmax on this input (ties to the lowest index).
    Predicted,
    Explicit(usize),
}

/// Reference input for path/masking methods. Only the all-zeros image is
/// supported; the variant exists so the choice is visible in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplainerConfig {
    /// Riemann steps for integrated gradients; must be at least 2.
    pub ig_steps: usize,
    pub ig_baseline: Baseline,
    pub scorecam_baseline: Baseline,
    pub target_class: ClassTarget,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            ig_steps: 64,
            ig_baseline: Baseline::Zeros,
            scorecam_baseline: Baseline::Zeros,
            target_class: ClassTarget::Predicted,
        }
    }
}

/// One explanation: a relevance grid `(1, 1, h, w)` at feature resolution
/// (input resolution for integrated gradients), plus the exact number of
/// model evaluations it cost.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub method: Method,
    pub class_id: usize,
    pub grid: Tensor4,
    pub pass_counts: PassCounter,
    /// Raw explainer output is unnormalized; overlays set this.
    pub normalized: bool,
}

fn resolve_target(target: ClassTarget, logits: &[f32]) -> usize {
    match target {
        ClassTarget::Predicted => argmax(logits),
        ClassTarget::Explicit(c) => c,
    }
}

fn check_explicit(target: ClassTarget, classes: usize) -> Result<()> {
    if let ClassTarget::Explicit(c) = target {
        if c >= classes {
            return Err(Error::LabelRange { label: c, classes });
        }
    }
    Ok(())
}

fn single_sample(op: &'static str, input: &Tensor4) -> Result<()> {
    if input.batch() != 1 {
        return Err(Error::Shape {
            op,
            expected: "a single-sample batch".into(),
            actual: format!("batch of {}", input.batch()),
        });
    }
    Ok(())
}

fn one_hot_upstream(classes: usize, class: usize) -> Tensor4 {
    let mut upstream = Tensor4::zeros(1, classes, 1, 1);
    upstream.set(0, class, 0, 0, 1.0);
    upstream
}

/// `ReLU(sum_k weights[k] * features[k])` per cell, accumulating channels
/// in ascending order.
fn weighted_sum_map(features: &Tensor4, weights: &[f32], bias: f32, relu: bool) -> Tensor4 {
    let (_, k, h, w) = features.dims();
    debug_assert_eq!(k, weights.len());
    let mut grid = Tensor4::zeros(1, 1, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ch, &weight) in weights.iter().enumerate().take(k) {
                acc += weight * features.at(0, ch, y, x);
            }
            acc += bias;
            if relu {
                acc = acc.max(0.0);
            }
            grid.set(0, 0, y, x, acc);
        }
    }
    grid
}

fn cached_forward(
    model: &ModelGraph,
    input: &Tensor4,
    counter: &mut PassCounter,
) -> Result<(Vec<f32>, ActivationCache)> {
    let out = model.forward(input, true, counter)?;
    let logits = out.sample_logits(0);
    Ok((logits, out.cache.expect("cache requested")))
}

/// Classic class activation mapping: the classifier row for the target
/// class weights the feature channels. Bias is excluded, so the map is
/// the transformed model's built-in map minus the constant `b_c`.
pub fn cam(model: &ModelGraph, input: &Tensor4, target: ClassTarget) -> Result<SaliencyMap> {
    single_sample("cam", input)?;
    check_explicit(target, model.class_count())?;
    let report = surgery::check_compatibility(model)?;
    if !report.compatible {
        return Err(Error::HeadKind {
            op: "cam",
            expected: "GAP-FC classification",
        });
    }

    let mut counter = PassCounter::new();
    let (logits, cache) = cached_forward(model, input, &mut counter)?;
    let class = resolve_target(target, &logits);
    let (weights, _) = model.fc_head().expect("compatible model has an FC head");
    let features = cache.feature_map();
    let k = features.dims().1;
    let row: Vec<f32> = (0..k).map(|i| weights.at(class, i, 0, 0)).collect();

    Ok(SaliencyMap {
        method: Method::Cam,
        class_id: class,
        grid: weighted_sum_map(features, &row, 0.0, false),
        pass_counts: counter,
        normalized: false,
    })
}

/// GradCAM: channel weights are the spatial means of the target logit's
/// gradient at the feature layer; the weighted sum is rectified.
pub fn grad_cam(model: &ModelGraph, input: &Tensor4, target: ClassTarget) -> Result<SaliencyMap> {
    single_sample("grad_cam", input)?;
    check_explicit(target, model.class_count())?;

    let mut counter = PassCounter::new();
    let (logits, cache) = cached_forward(model, input, &mut counter)?;
    let class = resolve_target(target, &logits);
    let upstream = one_hot_upstream(logits.len(), class);
    let back = model.backward(&cache, &upstream, &mut counter)?;

    let features = cache.feature_map();
    let grads = &back.feature_grad;
    let (_, k, h, w) = features.dims();
    let mut alphas = Vec::with_capacity(k);
    for ch in 0..k {
        let mut acc = 0.0f32;
        for y in 0..h {
            for x in 0..w {
                acc += grads.at(0, ch, y, x);
            }
        }
        alphas.push(acc / (h * w) as f32);
    }

    Ok(SaliencyMap {
        method: Method::GradCam,
        class_id: class,
        grid: weighted_sum_map(features, &alphas, 0.0, true),
        pass_counts: counter,
        normalized: false,
    })
}

/// LayerCAM: each gradient element is rectified before weighting its own
/// feature cell, then the channel sum is rectified.
pub fn layer_cam(model: &ModelGraph, input: &Tensor4, target: ClassTarget) -> Result<SaliencyMap> {
    single_sample("layer_cam", input)?;
    check_explicit(target, model.class_count())?;

    let mut counter = PassCounter::new();
    let (logits, cache) = cached_forward(model, input, &mut counter)?;
    let class = resolve_target(target, &logits);
    let upstream = one_hot_upstream(logits.len(), class);
    let back = model.backward(&cache, &upstream, &mut counter)?;

    let features = cache.feature_map();
    let grads = &back.feature_grad;
    let (_, k, h, w) = features.dims();
    let mut grid = Tensor4::zeros(1, 1, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for ch in 0..k {
                let g = grads.at(0, ch, y, x).max(0.0);
                acc += g * features.at(0, ch, y, x);
            }
            grid.set(0, 0, y, x, acc.max(0.0));
        }
    }

    Ok(SaliencyMap {
        method: Method::LayerCam,
        class_id: class,
        grid,
        pass_counts: counter,
        normalized: false,
    })
}

/// ScoreCAM: each feature channel, upsampled to input size and min-max
/// normalized, masks the input; the target-class probabilities of the
/// masked inputs are softmax-weighted into channel weights. The score is
/// defined relative to the zero-baseline probability, a constant shift
/// the softmax cancels, so the baseline image is never evaluated.
pub fn score_cam(
    model: &ModelGraph,
    input: &Tensor4,
    target: ClassTarget,
    config: &ExplainerConfig,
) -> Result<SaliencyMap> {
    single_sample("score_cam", input)?;
    check_explicit(target, model.class_count())?;
    let Baseline::Zeros = config.scorecam_baseline;

    let mut counter = PassCounter::new();
    let (logits, cache) = cached_forward(model, input, &mut counter)?;
    let class = resolve_target(target, &logits);

    let features = cache.feature_map().clone();
    let (_, k, _, _) = features.dims();
    let (_, _, in_h, in_w) = input.dims();

    let mut scores = Vec::with_capacity(k);
    for ch in 0..k {
        let plane = features.extract_plane(0, ch);
        let mask = minmax_normalize(&bilinear_resize(&plane, in_h, in_w)?);
        let masked = apply_mask(input, &mask);
        let out = model.forward(&masked, false, &mut counter)?;
        let probabilities = softmax(&out.sample_logits(0));
        scores.push(probabilities[class]);
    }
    let weights = softmax(&scores);

    Ok(SaliencyMap {
        method: Method::ScoreCam,
        class_id: class,
        grid: weighted_sum_map(&features, &weights, 0.0, true),
        pass_counts: counter,
        normalized: false,
    })
}

/// Multiplies every input channel by a single-channel spatial mask.
fn apply_mask(input: &Tensor4, mask: &Tensor4) -> Tensor4 {
    let (_, c, h, w) = input.dims();
    let mut out = input.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set(0, ch, y, x, input.at(0, ch, y, x) * mask.at(0, 0, y, x));
            }
        }
    }
    out
}

/// Integrated gradients from a zero baseline to the input along the
/// straight-line path, right-endpoint Riemann sum with `config.ig_steps`
/// steps, attributing the pre-softmax target logit. Channel attributions
/// are summed (signed) into an input-resolution grid.
pub fn integrated_gradients(
    model: &ModelGraph,
    input: &Tensor4,
    target: ClassTarget,
    config: &ExplainerConfig,
) -> Result<SaliencyMap> {
    single_sample("integrated_gradients", input)?;
    check_explicit(target, model.class_count())?;
    let Baseline::Zeros = config.ig_baseline;
    let m = config.ig_steps;
    if m < 2 {
        return Err(Error::Config {
            detail: format!("ig_steps must be at least 2, got {m}"),
        });
    }

    let mut counter = PassCounter::new();

    // The t = m endpoint is the input itself; evaluate it first so the
    // predicted class comes from the actual input, then fold its gradient
    // in as the final term of the sum.
    let (logits, cache) = cached_forward(model, input, &mut counter)?;
    let class = resolve_target(target, &logits);
    let classes = logits.len();
    let upstream = one_hot_upstream(classes, class);
    let grad_m = model.backward(&cache, &upstream, &mut counter)?.input_grad;

    let mut acc = vec![0.0f64; input.len()];
    for t in 1..m {
        let scale = t as f32 / m as f32;
        let point = input.map(|v| v * scale);
        let out = model.forward(&point, true, &mut counter)?;
        let back = model.backward(&out.cache.expect("cache requested"), &upstream, &mut counter)?;
        for (a, &g) in acc.iter_mut().zip(back.input_grad.iter()) {
            *a += g as f64;
        }
    }
    for (a, &g) in acc.iter_mut().zip(grad_m.iter()) {
        *a += g as f64;
    }

    let (_, c, h, w) = input.dims();
    let mut grid = Tensor4::zeros(1, 1, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut cell = 0.0f64;
            for ch in 0..c {
                let idx = ch * h * w + y * w + x;
                let avg = acc[idx] / m as f64;
                cell += input.at(0, ch, y, x) as f64 * avg;
            }
            grid.set(0, 0, y, x, cell as f32);
        }
    }

    Ok(SaliencyMap {
        method: Method::Ig,
        class_id: class,
        grid,
        pass_counts: counter,
        normalized: false,
    })
}

/// Resamples a map to the requested resolution and min-max normalizes it
/// for display or cell metrics. Signed integrated-gradients maps take
/// their absolute value before normalizing.
pub fn upsample_overlay(map: &SaliencyMap, out_h: usize, out_w: usize) -> Result<Tensor4> {
    let resized = bilinear_resize(&map.grid, out_h, out_w)?;
    let magnitude = if map.method == Method::Ig {
        resized.map(f32::abs)
    } else {
        resized
    };
    Ok(minmax_normalize(&magnitude))
}

/// Runs the built-in explanation of a transformed model and packages the
/// target class's map in the common saliency type.
pub fn tte_map(model: &ModelGraph, input: &Tensor4, target: ClassTarget) -> Result<SaliencyMap> {
    if model.head_kind() != HeadKind::BuiltInCam {
        return Err(Error::HeadKind {
            op: "tte_map",
            expected: "built-in-CAM",
        });
    }
    check_explicit(target, model.class_count())?;
    let explanation = surgery::explain_builtin(model, input)?;
    let class = resolve_target(target, &explanation.logits);
    Ok(SaliencyMap {
        method: Method::Tte,
        class_id: class,
        grid: explanation.cams[class].clone(),
        pass_counts: explanation.pass_counts,
        normalized: false,
    })
}
