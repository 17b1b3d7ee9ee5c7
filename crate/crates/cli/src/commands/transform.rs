//! `camforge transform`: rewrite a trained GAP+FC head into a built-in-CAM
//! head with transferred weights.
//!
//! The compatibility report is printed to stdout as JSON (and optionally
//! written to a file). Incompatible models exit with code 4 and leave no
//! output checkpoint behind.

use std::path::PathBuf;

use camforge_core::graph::{load, model_to_bytes};
use camforge_core::surgery::{check_compatibility, transform};
use camforge_core::Error as CoreError;
use clap::Args;
use serde::Deserialize;

use crate::{load_config, merge, require, write_bytes, CliError, RunLog};

#[derive(Args)]
pub struct TransformArgs {
    /// Checkpoint to transform [required]
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output path for the transformed checkpoint [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the compatibility report JSON here
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write wall-clock progress notes to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TransformFile {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    log: Option<PathBuf>,
}

pub fn execute(args: TransformArgs) -> Result<(), CliError> {
    let file: TransformFile = load_config(&args.config)?;
    let input = require(merge(args.input, file.input), "--input")?;
    let out = require(merge(args.out, file.out), "--out")?;
    let report_path = merge(args.report, file.report);

    let mut log = RunLog::new(merge(args.log, file.log));
    let model = load(&input)?;
    let report = check_compatibility(&model)?;

    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{report_json}");
    if let Some(path) = &report_path {
        write_bytes(path, report_json.as_bytes())?;
    }

    if !report.compatible {
        let reason = report
            .reason
            .unwrap_or_else(|| "model head is not transformable".into());
        return Err(CoreError::Surgery { reason }.into());
    }

    let transformed = transform(&model)?;
    write_bytes(&out, &model_to_bytes(&transformed))?;
    log.note(&format!(
        "transformed {} feature channels x {} classes into {}",
        report.feature_channels,
        report.class_count,
        out.display()
    ));
    log.finish()
}
