//! Mini-batch training: seeded shuffling, batch-mean gradients, global-norm
//! clipping and Adam.

use std::fmt;
use std::time::Instant;

use crate::corpus::DialogExample;
use crate::error::{Error, Result};
use crate::model::{ExampleGrads, Gradients, RankingModel};
use crate::numkit::{mix64, Rng};
use crate::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::par::{map_ordered, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub clip_norm: f64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 1,
            max_steps: None,
            seed: 42,
            clip_norm: 10.0,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1");
        }
        if self.max_steps == Some(0) {
            problems.push("max_steps must be >= 1");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            problems.push("clip_norm must be > 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    /// Seeds for parameter init and for shuffling, both derived from `seed`.
    pub fn init_seed(&self) -> u64 {
        mix64(self.seed ^ 0x1217_0000_0000_0001)
    }

    fn shuffle_seed(&self) -> u64 {
        mix64(self.seed ^ 0x5eed_0000_0000_0002)
    }
}

/// One optimizer step, printed as `key=value` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_secs: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} epoch={} loss={:.6} grad_norm={:.6} wall={:.3}",
            self.step, self.epoch, self.loss, self.grad_norm, self.wall_secs
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub examples_seen: usize,
    pub wall_secs: f64,
}

impl TrainStats {
    pub fn final_epoch_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Hooks called during training. Both default to no-ops.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch_end(&mut self, _epoch: usize, _mean_loss: f64, _model: &RankingModel) {}
}

impl TrainObserver for () {}

/// Batch-mean loss and gradients, reduced in example order.
pub fn batch_gradients(model: &RankingModel, batch: &[&DialogExample], exec: Execution) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let per_example: Vec<Result<ExampleGrads>> = map_ordered(batch, exec, |ex| model.example_grads(ex));
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_for(model);
    let mut loss = 0.0;
    for eg in per_example {
        let eg = eg?;
        loss += eg.loss;
        grads.add_example(model, &eg, scale)?;
    }
    Ok((loss * scale, grads))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: &mut RankingModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam_cfg = AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        };
        let shapes: Vec<usize> = model.trainable_params_mut().iter().map(|p| p.data.len()).collect();
        Ok(Trainer {
            rng: Rng::new(config.shuffle_seed()),
            config,
            adam: AdamState::new(adam_cfg, shapes),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Clip, then apply one Adam update. Returns the pre-clip gradient norm.
    pub fn apply(&mut self, model: &mut RankingModel, mut grads: Gradients) -> Result<f64> {
        let norm = clip_global_norm(&mut grads, self.config.clip_norm);
        let mut views = model.trainable_params_mut();
        let mut slices: Vec<&mut [f64]> = views.iter_mut().map(|v| &mut *v.data).collect();
        self.adam.step(&mut slices, &grads.tensors)?;
        Ok(norm)
    }

    pub fn run(
        &mut self,
        model: &mut RankingModel,
        data: &[DialogExample],
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainStats> {
        if data.is_empty() {
            return Err(Error::Empty("training data".into()));
        }
        let start = Instant::now();
        let mut stats = TrainStats::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        'epochs: for epoch in 0..self.config.epochs {
            self.rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            let mut epoch_batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                if self.config.max_steps.is_some_and(|m| self.step >= m) {
                    if epoch_batches > 0 {
                        stats.epoch_losses.push(epoch_loss / epoch_batches as f64);
                        observer.on_epoch_end(epoch, epoch_loss / epoch_batches as f64, model);
                    }
                    break 'epochs;
                }
                let batch: Vec<&DialogExample> = chunk.iter().map(|&i| &data[i]).collect();
                let (loss, grads) = batch_gradients(model, &batch, self.config.execution)?;
                self.step += 1;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        step: self.step,
                        epoch,
                        value: loss,
                    });
                }
                let grad_norm = self.apply(model, grads)?;
                stats.step_losses.push(loss);
                stats.examples_seen += batch.len();
                epoch_loss += loss;
                epoch_batches += 1;
                observer.on_step(&StepRecord {
                    step: self.step,
                    epoch,
                    loss,
                    grad_norm,
                    wall_secs: start.elapsed().as_secs_f64(),
                });
            }
            let mean = epoch_loss / epoch_batches as f64;
            stats.epoch_losses.push(mean);
            observer.on_epoch_end(epoch, mean, model);
        }
        stats.wall_secs = start.elapsed().as_secs_f64();
        Ok(stats)
    }
}

/// Convenience wrapper: fresh optimizer state, full run.
pub fn train(
    model: &mut RankingModel,
    data: &[DialogExample],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainStats> {
    Trainer::new(model, config.clone())?.run(model, data, observer)
}

/// Mean loss over a dataset without updating anything.
pub fn mean_loss(model: &RankingModel, data: &[DialogExample], exec: Execution) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let losses = map_ordered(data, exec, |ex| model.loss(ex));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}
