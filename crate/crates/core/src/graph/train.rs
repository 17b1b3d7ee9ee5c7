//! Minibatch SGD on the softmax cross-entropy objective.
//!
//! Each epoch shuffles the sample order with a stream keyed on
//! `(seed, epoch)`, so runs are reproducible regardless of how many
//! epochs were run before. Parameter updates walk slots in name order,
//! which keeps the whole procedure deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, PassCounter};
use crate::rng::Stream;
use crate::tensor::{self, Tensor4};

const SHUFFLE_TAG: u64 = 0x51f5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.2,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config {
                detail: "batch_size must be at least 1".into(),
            });
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config {
                detail: format!("learning_rate must be finite and non-negative, got {}", self.learning_rate),
            });
        }
        Ok(())
    }
}

/// Owns a model while it is being optimized.
pub struct Trainer {
    model: ModelGraph,
    config: TrainConfig,
    counter: PassCounter,
}

impl Trainer {
    pub fn new(model: ModelGraph, config: TrainConfig) -> Result<Self> {
        config.check()?;
        Ok(Trainer {
            model,
            config,
            counter: PassCounter::new(),
        })
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }

    pub fn into_model(self) -> ModelGraph {
        self.model
    }

    pub fn counter(&self) -> PassCounter {
        self.counter
    }

    /// Runs one pass over the data in shuffled order and returns the mean
    /// per-sample loss.
    pub fn run_epoch(&mut self, inputs: &Tensor4, labels: &[usize], epoch: usize) -> Result<f32> {
        let n = inputs.batch();
        if n == 0 || n != labels.len() {
            return Err(Error::Shape {
                op: "train",
                expected: format!("{n} labels for {n} samples"),
                actual: format!("{} labels", labels.len()),
            });
        }
        let classes = self.model.class_count();
        for &label in labels {
            if label >= classes {
                return Err(Error::LabelRange { label, classes });
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        let mut stream = Stream::new(self.config.seed, &[SHUFFLE_TAG, epoch as u64]);
        stream.shuffle(&mut order);

        let (_, c, h, w) = inputs.dims();
        let per = c * h * w;
        let mut loss_sum = 0.0f64;

        for chunk in order.chunks(self.config.batch_size) {
            let bn = chunk.len();
            let mut data = Vec::with_capacity(bn * per);
            for &idx in chunk {
                data.extend_from_slice(&inputs.data()[idx * per..(idx + 1) * per]);
            }
            let batch = Tensor4::new(bn, c, h, w, data)?;

            let out = self.model.forward(&batch, true, &mut self.counter)?;
            let cache = out.cache.as_ref().expect("cache requested");

            let mut upstream = Vec::with_capacity(bn * classes);
            for (row, &idx) in chunk.iter().enumerate() {
                let logits = out.sample_logits(row);
                let probabilities = tensor::softmax(&logits);
                loss_sum += tensor::cross_entropy(&probabilities, labels[idx])? as f64;
                let grad = tensor::softmax_cross_entropy_backward(&probabilities, labels[idx])?;
                upstream.extend(grad.into_iter().map(|g| g / bn as f32));
            }
            let upstream = Tensor4::new(bn, classes, 1, 1, upstream)?;
            let back = self.model.backward(cache, &upstream, &mut self.counter)?;

            let lr = self.config.learning_rate;
            let params = self.model.params_mut();
            for (name, grad) in back.param_grads.tensors() {
                let slot = params.tensor_mut(name).expect("gradient for known slot");
                for (w, g) in slot.data_mut().iter_mut().zip(grad.iter()) {
                    *w -= lr * g;
                }
            }
            for (name, grad) in back.param_grads.vectors() {
                let slot = params.vector_mut(name).expect("gradient for known slot");
                for (b, g) in slot.iter_mut().zip(grad) {
                    *b -= lr * g;
                }
            }
        }

        let loss = (loss_sum / n as f64) as f32;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        Ok(loss)
    }
}

/// Trains `model` for `config.epochs` epochs; returns the updated model
/// and the per-epoch mean loss curve.
pub fn train(
    model: ModelGraph,
    inputs: &Tensor4,
    labels: &[usize],
    config: TrainConfig,
) -> Result<(ModelGraph, Vec<f32>)> {
    let mut trainer = Trainer::new(model, config)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        curve.push(trainer.run_epoch(inputs, labels, epoch)?);
    }
    Ok((trainer.into_model(), curve))
}
