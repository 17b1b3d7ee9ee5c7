//! `camforge explain`: write saliency maps for one or more inputs.
//!
//! For every (input, method) pair three files land in the output
//! directory: the raw map as T4F (`stem.method.t4f`), a JSON sidecar with
//! the audited pass counts (`stem.method.json`), and an 8-bit PGM overlay
//! upsampled to input resolution (`stem.method.pgm`).
//!
//! A GAP+FC checkpoint supports every method; `tte` transforms a working
//! copy internally. A checkpoint that already has the built-in-CAM head
//! supports only `tte`.

use std::path::PathBuf;

use camforge_core::explain::{
    cam, grad_cam, integrated_gradients, layer_cam, score_cam, tte_map, upsample_overlay,
    ClassTarget, ExplainerConfig, Method, SaliencyMap,
};
use camforge_core::graph::{load, HeadKind, ModelGraph};
use camforge_core::surgery::transform;
use camforge_core::tensor::t4f;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::{load_config, merge, parse_methods, pgm_bytes, require, write_bytes, CliError, RunLog};

#[derive(Args)]
pub struct ExplainArgs {
    /// Checkpoint to explain [required]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input image as T4F; repeat for several inputs [required]
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Comma-separated methods: cam, gradcam, layercam, scorecam, ig, tte [default: cam,tte]
    #[arg(long)]
    methods: Option<String>,
    /// Explain this class instead of the predicted one
    #[arg(long)]
    class: Option<usize>,
    /// Integration steps for ig [default: 64]
    #[arg(long)]
    ig_steps: Option<usize>,
    /// Output directory [default: .]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write wall-clock progress notes to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExplainFile {
    checkpoint: Option<PathBuf>,
    input: Option<Vec<PathBuf>>,
    methods: Option<String>,
    class: Option<usize>,
    ig_steps: Option<usize>,
    out_dir: Option<PathBuf>,
    log: Option<PathBuf>,
}

/// What `explain` records next to each map file.
#[derive(Serialize)]
struct Sidecar<'a> {
    method: &'a str,
    class_id: usize,
    forward_passes: u64,
    backward_passes: u64,
    normalized: bool,
}

/// Computes one method's map, transparently routing `tte` through an
/// internally transformed copy when the checkpoint still has its GAP+FC
/// head.
pub fn method_map(
    model: &ModelGraph,
    tte_model: &ModelGraph,
    method: Method,
    input: &camforge_core::tensor::Tensor4,
    target: ClassTarget,
    config: &ExplainerConfig,
) -> Result<SaliencyMap, CliError> {
    let map = match method {
        Method::Cam => cam(model, input, target)?,
        Method::GradCam => grad_cam(model, input, target)?,
        Method::LayerCam => layer_cam(model, input, target)?,
        Method::ScoreCam => score_cam(model, input, target, config)?,
        Method::Ig => integrated_gradients(model, input, target, config)?,
        Method::Tte => tte_map(tte_model, input, target)?,
    };
    Ok(map)
}

/// Prepares the model used for `tte` maps: the checkpoint itself when it
/// already has the built-in-CAM head, otherwise a transformed copy.
pub fn tte_twin(model: &ModelGraph) -> Result<ModelGraph, CliError> {
    match model.head_kind() {
        HeadKind::BuiltInCam => Ok(model.clone()),
        HeadKind::GapFc => Ok(transform(model)?),
    }
}

pub fn execute(args: ExplainArgs) -> Result<(), CliError> {
    let file: ExplainFile = load_config(&args.config)?;
    let checkpoint = require(merge(args.checkpoint, file.checkpoint), "--checkpoint")?;
    let inputs = if args.input.is_empty() {
        file.input.unwrap_or_default()
    } else {
        args.input
    };
    if inputs.is_empty() {
        return Err(CliError::Usage("missing required --input (flag or config key)".into()));
    }
    let methods = parse_methods(&merge(args.methods, file.methods).unwrap_or_else(|| "cam,tte".into()))?;
    let target = match merge(args.class, file.class) {
        Some(c) => ClassTarget::Explicit(c),
        None => ClassTarget::Predicted,
    };
    let explainer_config = ExplainerConfig {
        ig_steps: merge(args.ig_steps, file.ig_steps).unwrap_or(ExplainerConfig::default().ig_steps),
        ..ExplainerConfig::default()
    };
    let out_dir = merge(args.out_dir, file.out_dir).unwrap_or_else(|| PathBuf::from("."));

    let mut log = RunLog::new(merge(args.log, file.log));
    let model = load(&checkpoint)?;
    let tte_model = if methods.contains(&Method::Tte) {
        tte_twin(&model)?
    } else {
        model.clone()
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| camforge_core::Error::io(&out_dir, e))?;

    for input_path in &inputs {
        let image = t4f::read(input_path)?;
        let stem = input_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into());
        let (_, _, h, w) = image.dims();

        for &method in &methods {
            let map = method_map(&model, &tte_model, method, &image, target, &explainer_config)?;
            let overlay = upsample_overlay(&map, h, w)?;
            let file = |ext: &str| out_dir.join(format!("{stem}.{}.{ext}", method.name()));

            t4f::write(&file("t4f"), &map.grid)?;
            let (forward_passes, backward_passes) = map.pass_counts.counts();
            let sidecar = Sidecar {
                method: method.name(),
                class_id: map.class_id,
                forward_passes,
                backward_passes,
                normalized: map.normalized,
            };
            let sidecar_json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
            write_bytes(&file("json"), sidecar_json.as_bytes())?;
            write_bytes(&file("pgm"), &pgm_bytes(&overlay))?;

            log.note(&format!(
                "{stem}: {} class {} in {forward_passes} forward / {backward_passes} backward passes",
                method.name(),
                map.class_id,
            ));
        }
    }
    log.finish()
}
