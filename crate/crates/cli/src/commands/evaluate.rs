//! `camforge evaluate`: score saliency methods over a corpus split.
//!
//! Every sample is classified by the checkpoint under evaluation; each
//! requested method then explains the predicted class and is scored. The
//! explanation metrics (top-k sensitivity, top-k localization, activation
//! precision) aggregate over the positive samples, the ones with ground
//! truth to localize; accuracy and AUC cover the whole split. Outputs are
//! the metrics report JSON (one record per method, also printed to
//! stdout) and a per-sample CSV.
//!
//! Samples are processed in parallel; results are reduced in corpus order
//! so reports and CSVs are byte-identical across runs and thread counts.

use std::path::PathBuf;

use camforge_core::explain::{upsample_overlay, ClassTarget, ExplainerConfig, Method};
use camforge_core::graph::{load, HeadKind, ModelGraph, PassCounter};
use camforge_core::metrics::{
    accuracy, activation_precision, auc, topk_localization, topk_sensitivity,
    ActivationPrecisionMode, CellGrid, MaskFill, MethodSamples, MetricsReport,
};
use camforge_core::synth::{load_manifest, load_sample, ManifestEntry, Split};
use clap::Args;
use rayon::prelude::*;
use serde::Deserialize;

use super::explain::{method_map, tte_twin};
use crate::{load_config, merge, parse_methods, require, write_bytes, CliError, RunLog};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Checkpoint to evaluate [required]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Corpus directory produced by gen-data [required]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Metrics report JSON output path [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample CSV path [default: report path with .csv extension]
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Comma-separated methods: cam, gradcam, layercam, scorecam, ig, tte [default: cam,tte]
    #[arg(long)]
    methods: Option<String>,
    /// Number of top cells to mask and localize [default: 10]
    #[arg(long)]
    k: Option<usize>,
    /// Metric cell size in pixels [default: the model's feature stride]
    #[arg(long)]
    cell: Option<usize>,
    /// Corpus split to evaluate: train, val, test, or all [default: test]
    #[arg(long)]
    split: Option<String>,
    /// Fill for masked cells: "means" (corpus channel means) or "original"
    /// (leave pixels untouched) [default: means]
    #[arg(long)]
    mask_fill: Option<String>,
    /// Integration steps for ig [default: 64]
    #[arg(long)]
    ig_steps: Option<usize>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write wall-clock progress notes to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
    methods: Option<String>,
    k: Option<usize>,
    cell: Option<usize>,
    split: Option<String>,
    mask_fill: Option<String>,
    ig_steps: Option<usize>,
    log: Option<PathBuf>,
}

fn parse_split(name: &str) -> Result<Option<Split>, CliError> {
    match name {
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(CliError::Usage(format!(
            "unknown split '{other}'; valid splits: train, val, test, all"
        ))),
    }
}

struct MethodScores {
    sensitivity: f32,
    localization: Option<f32>,
    activation: Option<f32>,
}

struct EvalRow {
    id: usize,
    label: usize,
    split: Split,
    predicted: usize,
    prob_positive: f32,
    scores: Vec<MethodScores>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_entry(
    entry: &ManifestEntry,
    corpus: &std::path::Path,
    model: &ModelGraph,
    tte_model: &ModelGraph,
    methods: &[Method],
    grid: CellGrid,
    k: usize,
    fill: &MaskFill,
    config: &ExplainerConfig,
) -> Result<EvalRow, CliError> {
    let sample = load_sample(corpus, entry)?;
    let (_, _, h, w) = sample.image.dims();

    let mut counter = PassCounter::new();
    let prediction = model
        .predict(&sample.image, &mut counter)?
        .into_iter()
        .next()
        .expect("one sample in, one prediction out");

    let mut scores = Vec::with_capacity(methods.len());
    for &method in methods {
        let map = method_map(model, tte_model, method, &sample.image, ClassTarget::Predicted, config)?;
        let overlay = upsample_overlay(&map, h, w)?;
        let sensitivity = topk_sensitivity(model, &sample.image, &overlay, grid, k, fill)?;
        let (localization, activation) = if entry.label == 1 {
            (
                Some(topk_localization(&overlay, grid, k, &sample.gt)?),
                Some(activation_precision(
                    &overlay,
                    &sample.gt,
                    ActivationPrecisionMode::SoftMass,
                )?),
            )
        } else {
            (None, None)
        };
        scores.push(MethodScores {
            sensitivity,
            localization,
            activation,
        });
    }

    Ok(EvalRow {
        id: entry.id,
        label: entry.label,
        split: entry.split,
        predicted: prediction.class,
        prob_positive: prediction.probabilities[1],
        scores,
    })
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

pub fn execute(args: EvaluateArgs) -> Result<(), CliError> {
    let file: EvaluateFile = load_config(&args.config)?;
    let checkpoint = require(merge(args.checkpoint, file.checkpoint), "--checkpoint")?;
    let corpus = require(merge(args.corpus, file.corpus), "--corpus")?;
    let out = require(merge(args.out, file.out), "--out")?;
    let csv_path = merge(args.csv, file.csv).unwrap_or_else(|| out.with_extension("csv"));
    let methods =
        parse_methods(&merge(args.methods, file.methods).unwrap_or_else(|| "cam,tte".into()))?;
    let k = merge(args.k, file.k).unwrap_or(10);
    let split = parse_split(&merge(args.split, file.split).unwrap_or_else(|| "test".into()))?;
    let fill_mode = merge(args.mask_fill, file.mask_fill).unwrap_or_else(|| "means".into());
    let config = ExplainerConfig {
        ig_steps: merge(args.ig_steps, file.ig_steps).unwrap_or(ExplainerConfig::default().ig_steps),
        ..ExplainerConfig::default()
    };

    let mut log = RunLog::new(merge(args.log, file.log));
    let manifest = load_manifest(&corpus)?;
    let model = load(&checkpoint)?;
    let shape = model.validate()?;

    if model.head_kind() == HeadKind::BuiltInCam {
        if let Some(bad) = methods.iter().find(|&&m| m != Method::Tte) {
            return Err(CliError::Usage(format!(
                "method '{}' needs the original GAP+FC checkpoint; this one has a built-in-CAM \
                 head and supports only 'tte'",
                bad.name()
            )));
        }
    }
    let tte_model = if methods.contains(&Method::Tte) {
        tte_twin(&model)?
    } else {
        model.clone()
    };

    let (_, feature_h, _) = shape.feature_shape;
    let default_cell = model.input_shape().1 / feature_h.max(1);
    let cell = merge(args.cell, file.cell).unwrap_or(default_cell);
    let grid = CellGrid::new(cell, cell)?;

    let fill = match fill_mode.as_str() {
        "means" => MaskFill::ChannelValues(manifest.channel_means.to_vec()),
        "original" => MaskFill::Original,
        other => {
            return Err(CliError::Usage(format!(
                "unknown mask fill '{other}'; valid fills: means, original"
            )))
        }
    };

    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .collect();
    if entries.is_empty() {
        return Err(CliError::Usage(format!(
            "no samples in the requested split of {}",
            corpus.display()
        )));
    }
    log.note(&format!(
        "evaluating {} methods on {} samples (k={k}, cell={cell})",
        methods.len(),
        entries.len()
    ));

    let rows: Vec<EvalRow> = entries
        .par_iter()
        .map(|entry| {
            evaluate_entry(entry, &corpus, &model, &tte_model, &methods, grid, k, &fill, &config)
        })
        .collect::<Result<_, _>>()?;

    let predictions: Vec<usize> = rows.iter().map(|r| r.predicted).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let scores: Vec<f32> = rows.iter().map(|r| r.prob_positive).collect();
    let split_accuracy = accuracy(&predictions, &labels)?;
    let split_auc = auc(&scores, &labels)?;

    let mut report = MetricsReport::default();
    for (mi, &method) in methods.iter().enumerate() {
        let mut samples = MethodSamples::default();
        for row in &rows {
            let s = &row.scores[mi];
            if let (Some(loc), Some(act)) = (s.localization, s.activation) {
                samples.sensitivity.push(f64::from(s.sensitivity));
                samples.localization.push(f64::from(loc));
                samples.activation.push(f64::from(act));
            }
        }
        let record = samples.aggregate_record(split_accuracy, split_auc, k)?;
        report.methods.insert(method.name().to_string(), record);
    }

    let mut csv = String::from(
        "id,label,split,predicted,prob_positive,method,topk_sensitivity,topk_localization,activation_precision\n",
    );
    for row in &rows {
        for (mi, &method) in methods.iter().enumerate() {
            let s = &row.scores[mi];
            let fmt_opt = |v: Option<f32>| v.map(|x| x.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.id,
                row.label,
                split_name(row.split),
                row.predicted,
                row.prob_positive,
                method.name(),
                s.sensitivity,
                fmt_opt(s.localization),
                fmt_opt(s.activation),
            ));
        }
    }

    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{report_json}");
    write_bytes(&out, report_json.as_bytes())?;
    write_bytes(&csv_path, csv.as_bytes())?;
    log.note(&format!(
        "accuracy {split_accuracy:.4}, auc {split_auc:.4}; report at {}",
        out.display()
    ));
    log.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_names_round_trip() {
        for name in ["train", "val", "test"] {
            let parsed = parse_split(name).unwrap().unwrap();
            assert_eq!(split_name(parsed), name);
        }
        assert_eq!(parse_split("all").unwrap(), None);
        assert!(parse_split("holdout").is_err());
    }
}
