//! `camforge train`: fit the reference CNN on a corpus.
//!
//! Trains on the train split, measures accuracy on the val split after
//! every epoch, and saves the checkpoint from the best-validation epoch
//! (ties keep the earliest). A CSV with one row per epoch records the
//! training loss and validation accuracy.

use std::path::{Path, PathBuf};

use camforge_core::graph::{
    argmax, model_to_bytes, tiny_net, ModelGraph, PassCounter, TrainConfig, Trainer,
};
use camforge_core::synth::{load_manifest, load_sample, Manifest, Split};
use camforge_core::tensor::Tensor4;
use clap::Args;
use serde::Deserialize;

use crate::{load_config, merge, require, write_bytes, CliError, RunLog};

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus directory produced by gen-data [required]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output checkpoint path [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-curve CSV path [default: checkpoint path with .csv extension]
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Training epochs [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate [default: 0.2]
    #[arg(long)]
    lr: Option<f32>,
    /// Minibatch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for weight init and batch shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write wall-clock progress notes to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    curve: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f32>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    log: Option<PathBuf>,
}

/// Stacks one split of the corpus into a batch tensor plus labels.
fn load_split(
    dir: &Path,
    manifest: &Manifest,
    split: Split,
) -> Result<(Tensor4, Vec<usize>), CliError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for entry in manifest.entries.iter().filter(|e| e.split == split) {
        let sample = load_sample(dir, entry)?;
        images.push(sample.image);
        labels.push(sample.label);
    }
    if images.is_empty() {
        return Err(CliError::Usage(format!(
            "corpus {} has no {:?} samples; generate a larger corpus",
            dir.display(),
            split
        )));
    }
    Ok((Tensor4::stack(&images)?, labels))
}

fn split_accuracy(
    model: &ModelGraph,
    inputs: &Tensor4,
    labels: &[usize],
) -> Result<f64, CliError> {
    let mut counter = PassCounter::new();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let sample = inputs.extract_sample(i);
        let out = model.forward(&sample, false, &mut counter)?;
        if argmax(&out.sample_logits(0)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

pub fn execute(args: TrainArgs) -> Result<(), CliError> {
    let file: TrainFile = load_config(&args.config)?;
    let corpus = require(merge(args.corpus, file.corpus), "--corpus")?;
    let out = require(merge(args.out, file.out), "--out")?;
    let curve_path =
        merge(args.curve, file.curve).unwrap_or_else(|| out.with_extension("csv"));

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: merge(args.epochs, file.epochs).unwrap_or(defaults.epochs),
        learning_rate: merge(args.lr, file.lr).unwrap_or(defaults.learning_rate),
        batch_size: merge(args.batch_size, file.batch_size).unwrap_or(defaults.batch_size),
        seed: merge(args.seed, file.seed).unwrap_or(defaults.seed),
    };
    if config.epochs == 0 {
        return Err(CliError::Usage("--epochs must be positive".into()));
    }

    let mut log = RunLog::new(merge(args.log, file.log));
    let manifest = load_manifest(&corpus)?;
    let (train_x, train_y) = load_split(&corpus, &manifest, Split::Train)?;
    let (val_x, val_y) = load_split(&corpus, &manifest, Split::Val)?;
    log.note(&format!(
        "loaded {} train / {} val samples at {}x{}",
        train_y.len(),
        val_y.len(),
        manifest.spec.height,
        manifest.spec.width
    ));

    let model = tiny_net(manifest.spec.height, manifest.spec.width, 2, config.seed)?;
    let mut trainer = Trainer::new(model, config)?;

    let mut csv = String::from("epoch,train_loss,val_accuracy\n");
    let mut best: Option<(f64, usize, Vec<u8>)> = None;
    for epoch in 0..config.epochs {
        let loss = trainer.run_epoch(&train_x, &train_y, epoch)?;
        let val_acc = split_accuracy(trainer.model(), &val_x, &val_y)?;
        csv.push_str(&format!("{epoch},{loss},{val_acc}\n"));
        log.note(&format!(
            "epoch {epoch}: train loss {loss:.4}, val accuracy {val_acc:.4}"
        ));
        let improved = match &best {
            None => true,
            Some((best_acc, _, _)) => val_acc > *best_acc,
        };
        if improved {
            best = Some((val_acc, epoch, model_to_bytes(trainer.model())));
        }
    }

    let (best_acc, best_epoch, bytes) = best.expect("at least one epoch");
    write_bytes(&out, &bytes)?;
    write_bytes(&curve_path, csv.as_bytes())?;
    log.note(&format!(
        "saved epoch-{best_epoch} checkpoint (val accuracy {best_acc:.4}) to {}",
        out.display()
    ));
    log.finish()
}
