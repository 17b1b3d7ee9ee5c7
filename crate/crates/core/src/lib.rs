//! Core library for camforge: a small CNN stack built around test-time
//! head surgery.
//!
//! The pieces fit together like this: [`tensor`] provides NCHW `f32`
//! tensors and the forward/backward ops; [`graph`] assembles them into
//! sequential models with training and a binary checkpoint format;
//! [`surgery`] rewrites a trained GAP+FC classification head into an
//! equivalent 1x1-convolution head whose pre-pooling activations are
//! class activation maps; [`explain`] computes those built-in maps plus
//! five post-hoc saliency baselines under strict forward/backward pass
//! accounting; [`metrics`] scores explanations against exact ground
//! truth; and [`synth`] generates the deterministic lesion corpus used
//! to exercise all of it.

pub mod error;
pub mod explain;
pub mod graph;
pub mod metrics;
pub mod rng;
pub mod surgery;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
