//! `camforge gen-data`: write a synthetic lesion corpus to disk.

use std::path::PathBuf;

use camforge_core::synth::{generate_corpus, Split, SynthSpec};
use clap::Args;
use serde::Deserialize;

use crate::{load_config, merge, require, CliError, RunLog};

#[derive(Args)]
pub struct GenDataArgs {
    /// Output directory for the corpus [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of samples to generate [required]
    #[arg(long)]
    n: Option<usize>,
    /// Master seed for all randomness [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Image height in pixels [default: 64]
    #[arg(long)]
    height: Option<usize>,
    /// Image width in pixels [default: 64]
    #[arg(long)]
    width: Option<usize>,
    /// Fraction of positive samples, applied exactly [default: 0.5]
    #[arg(long)]
    balance: Option<f64>,
    /// Standard deviation of the uniform pixel noise [default: 0.05]
    #[arg(long)]
    noise_sigma: Option<f32>,
    /// Minimum lesions per positive sample [default: 1]
    #[arg(long)]
    blob_min: Option<usize>,
    /// Maximum lesions per positive sample [default: 3]
    #[arg(long)]
    blob_max: Option<usize>,
    /// Minimum lesion radius in pixels [default: 5]
    #[arg(long)]
    radius_min: Option<f32>,
    /// Maximum lesion radius in pixels [default: 8]
    #[arg(long)]
    radius_max: Option<f32>,
    /// Minimum lesion intensity [default: 0.75]
    #[arg(long)]
    lesion_min: Option<f32>,
    /// Maximum lesion intensity [default: 0.95]
    #[arg(long)]
    lesion_max: Option<f32>,
    /// Minimum background intensity [default: 0.20]
    #[arg(long)]
    background_min: Option<f32>,
    /// Maximum background intensity [default: 0.40]
    #[arg(long)]
    background_max: Option<f32>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write wall-clock progress notes to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenDataFile {
    out: Option<PathBuf>,
    n: Option<usize>,
    seed: Option<u64>,
    height: Option<usize>,
    width: Option<usize>,
    balance: Option<f64>,
    noise_sigma: Option<f32>,
    blob_min: Option<usize>,
    blob_max: Option<usize>,
    radius_min: Option<f32>,
    radius_max: Option<f32>,
    lesion_min: Option<f32>,
    lesion_max: Option<f32>,
    background_min: Option<f32>,
    background_max: Option<f32>,
    log: Option<PathBuf>,
}

pub fn execute(args: GenDataArgs) -> Result<(), CliError> {
    let file: GenDataFile = load_config(&args.config)?;
    let out = require(merge(args.out, file.out), "--out")?;
    let n = require(merge(args.n, file.n), "--n")?;
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }

    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        height: merge(args.height, file.height).unwrap_or(defaults.height),
        width: merge(args.width, file.width).unwrap_or(defaults.width),
        blob_count_min: merge(args.blob_min, file.blob_min).unwrap_or(defaults.blob_count_min),
        blob_count_max: merge(args.blob_max, file.blob_max).unwrap_or(defaults.blob_count_max),
        radius_min: merge(args.radius_min, file.radius_min).unwrap_or(defaults.radius_min),
        radius_max: merge(args.radius_max, file.radius_max).unwrap_or(defaults.radius_max),
        lesion_min: merge(args.lesion_min, file.lesion_min).unwrap_or(defaults.lesion_min),
        lesion_max: merge(args.lesion_max, file.lesion_max).unwrap_or(defaults.lesion_max),
        background_min: merge(args.background_min, file.background_min)
            .unwrap_or(defaults.background_min),
        background_max: merge(args.background_max, file.background_max)
            .unwrap_or(defaults.background_max),
        noise_sigma: merge(args.noise_sigma, file.noise_sigma).unwrap_or(defaults.noise_sigma),
        balance: merge(args.balance, file.balance).unwrap_or(defaults.balance),
        seed: merge(args.seed, file.seed).unwrap_or(defaults.seed),
    };

    let mut log = RunLog::new(merge(args.log, file.log));
    log.note(&format!("generating {n} samples into {}", out.display()));
    let manifest = generate_corpus(&spec, n, &out)?;

    let count = |s: Split| manifest.entries.iter().filter(|e| e.split == s).count();
    let positives = manifest.entries.iter().filter(|e| e.label == 1).count();
    log.note(&format!(
        "wrote {} samples ({} positive): {} train / {} val / {} test",
        manifest.entries.len(),
        positives,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    ));
    log.finish()
}
