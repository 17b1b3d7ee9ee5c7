//! Command-line front end for the camforge pipeline.
//!
//! One executable, five subcommands: `gen-data` writes a synthetic lesion
//! corpus, `train` fits the reference CNN and keeps the best-validation
//! checkpoint, `transform` rewrites a GAP+FC head into a built-in-CAM
//! head, `explain` emits saliency maps with audited pass counts, and
//! `evaluate` scores methods over a corpus into a metrics report.
//!
//! Every flag can also come from a JSON config file with the same name in
//! snake_case; explicit flags win, unknown keys are rejected. All file
//! outputs are written atomically and are byte-reproducible for a fixed
//! seed; wall-clock timings go to stderr and an optional log file, never
//! into result files. Exit codes: 0 success, 2 usage or validation, 3
//! I/O, 4 surgery incompatibility, 5 numeric failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use camforge_core::explain::{Method, ALL_METHODS};
use camforge_core::tensor::Tensor4;
use camforge_core::Error as CoreError;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

mod commands;

pub use commands::evaluate::EvaluateArgs;
pub use commands::explain::ExplainArgs;
pub use commands::gen_data::GenDataArgs;
pub use commands::train::TrainArgs;
pub use commands::transform::TransformArgs;

#[derive(Parser)]
#[command(
    name = "camforge",
    version,
    about = "Train small CNNs, rewrite their heads for built-in class activation maps, \
             and compare saliency methods under exact pass accounting"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic lesion corpus
    #[command(name = "gen-data")]
    GenData(GenDataArgs),
    /// Train the reference CNN on a corpus, keeping the best-validation checkpoint
    Train(TrainArgs),
    /// Rewrite a GAP+FC classification head into a built-in-CAM head
    Transform(TransformArgs),
    /// Write saliency maps, sidecars with pass counts, and PGM overlays
    Explain(ExplainArgs),
    /// Score saliency methods over a corpus into a metrics report
    Evaluate(EvaluateArgs),
}

/// Errors carrying their process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values; exits 2.
    Usage(String),
    /// Anything surfaced by the core library; the variant decides the code.
    Core(CoreError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        CliError::Core(err)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(err) => match err {
                CoreError::Io { .. } | CoreError::Format { .. } => 3,
                CoreError::Surgery { .. } => 4,
                CoreError::NonFinite { .. } | CoreError::Diverged { .. } => 5,
                _ => 2,
            },
        }
    }
}

/// Parses argv, runs the chosen subcommand, and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    init_threads();
    let outcome = match cli.command {
        Command::GenData(args) => commands::gen_data::execute(args),
        Command::Train(args) => commands::train::execute(args),
        Command::Transform(args) => commands::transform::execute(args),
        Command::Explain(args) => commands::explain::execute(args),
        Command::Evaluate(args) => commands::evaluate::execute(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

/// Caps the rayon worker pool when CAMFORGE_THREADS is set.
fn init_threads() {
    if let Ok(value) = std::env::var("CAMFORGE_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring CAMFORGE_THREADS={value} (want a positive integer)"),
        }
    }
}

/// Wall-clock progress notes: echoed to stderr immediately, flushed to the
/// log file at the end when one was requested. Result files never contain
/// timings, so reruns stay byte-identical.
pub struct RunLog {
    path: Option<PathBuf>,
    start: Instant,
    lines: Vec<String>,
}

impl RunLog {
    pub fn new(path: Option<PathBuf>) -> Self {
        RunLog {
            path,
            start: Instant::now(),
            lines: Vec::new(),
        }
    }

    pub fn note(&mut self, message: &str) {
        let line = format!("[{:>9.3}s] {message}", self.start.elapsed().as_secs_f64());
        eprintln!("{line}");
        self.lines.push(line);
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.note("done");
        if let Some(path) = &self.path {
            let body = self.lines.join("\n") + "\n";
            std::fs::write(path, body).map_err(|e| CoreError::io(path, e))?;
        }
        Ok(())
    }
}

/// Loads a subcommand's JSON config file; `None` means all-defaults.
/// Unknown keys are rejected so typos cannot silently fall back.
pub fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Flag value if given, else config-file value.
pub fn merge<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Unwraps a merged value that has no default.
pub fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required {flag} (flag or config key)")))
}

/// Parses a comma-separated method list, rejecting unknown names with the
/// full list of valid ones.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for raw in list.split(',') {
        let name = raw.trim();
        if name.is_empty() {
            continue;
        }
        let method = Method::parse(name).ok_or_else(|| {
            let valid: Vec<&str> = ALL_METHODS.iter().map(|m| m.name()).collect();
            CliError::Usage(format!(
                "unknown method '{name}'; valid methods: {}",
                valid.join(", ")
            ))
        })?;
        if !methods.contains(&method) {
            methods.push(method);
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage("no methods requested".into()));
    }
    Ok(methods)
}

/// Encodes a normalized single-plane overlay as an 8-bit binary PGM,
/// mapping overlay value 1.0 to gray level 255.
pub fn pgm_bytes(overlay: &Tensor4) -> Vec<u8> {
    let (_, _, h, w) = overlay.dims();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(h * w);
    for &v in overlay.plane(0, 0) {
        let level = (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8;
        bytes.push(level);
    }
    bytes
}

/// Writes arbitrary bytes atomically (temp file + rename).
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    camforge_core::tensor::t4f::write_atomic(path, bytes)?;
    Ok(())
}
