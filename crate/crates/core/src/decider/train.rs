use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{evaluate, EvalReport};
use super::model::{gradients_finite, Real};
use super::optim::{validate_scheduler, AdamW, SchedulerState};
use super::{assemble_input_dim, DeciderError, DeciderModel, Label, PairInput, PairSample, Scheduler};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub max_epochs: usize,
    pub scheduler: Scheduler,
    /// Drives batch order and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            batch_size: 64,
            max_epochs: 10,
            scheduler: Scheduler::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DeciderError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DeciderError::InvalidConfig("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(DeciderError::InvalidConfig("weight_decay must be >= 0"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(DeciderError::InvalidConfig("betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(DeciderError::InvalidConfig("batch_size must be positive"));
        }
        validate_scheduler(&self.scheduler)
    }
}

/// Assembled inputs with their labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPairs {
    pub inputs: Vec<PairInput>,
    pub labels: Vec<Label>,
}

impl LabeledPairs {
    pub fn from_samples(samples: &[PairSample], dim: usize) -> Result<Self, DeciderError> {
        let mut out = Self::default();
        for s in samples {
            out.inputs.push(assemble_input_dim(s, dim)?);
            out.labels.push(s.label);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T = f32> {
    pub model: DeciderModel<T>,
    pub history: Vec<EpochRecord>,
    pub val_report: EvalReport,
}

impl<T: Real> DeciderModel<T> {
    /// Mean eval-mode cross-entropy over a labeled set.
    pub fn loss(&self, set: &LabeledPairs) -> Result<f64, DeciderError> {
        if set.is_empty() {
            return Err(DeciderError::Empty);
        }
        let probs = self.forward(&set.inputs)?;
        let wide: Vec<[f64; 2]> = probs
            .iter()
            .map(|p| [p[0].to_f64().unwrap_or(f64::NAN), p[1].to_f64().unwrap_or(f64::NAN)])
            .collect();
        super::cross_entropy_loss(&wide, &set.labels)
    }

    pub fn evaluate(&self, set: &LabeledPairs) -> Result<EvalReport, DeciderError> {
        evaluate(self, &set.inputs, &set.labels)
    }

    /// Mini-batch AdamW training; returns the model after the last epoch.
    /// Everything random (shuffles, dropout) follows `config.seed`.
    pub fn train(self, train: &LabeledPairs, val: &LabeledPairs, config: &TrainConfig) -> Result<TrainOutcome<T>, DeciderError> {
        config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(DeciderError::Empty);
        }
        if train.inputs.len() != train.labels.len() {
            return Err(DeciderError::LabelCount {
                inputs: train.inputs.len(),
                labels: train.labels.len(),
            });
        }
        let mut model = self;
        let mut opt = AdamW::new(model.params(), config.learning_rate, config.weight_decay, config.betas);
        let mut sched = SchedulerState::new(config.scheduler, config.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = Vec::with_capacity(config.max_epochs);
        let mut grads = model.params().zeros_like();

        for epoch in 0..config.max_epochs {
            let lr = sched.lr();
            opt.lr = lr;
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                for t in grads.tensors_mut() {
                    t.fill(T::zero());
                }
                let loss = model
                    .accumulate_indexed(
                        chunk.iter().map(|&i| (&train.inputs[i], train.labels[i])),
                        Some(&mut rng),
                        &mut grads,
                    )?
                    .to_f64()
                    .unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    return Err(DeciderError::Diverged { epoch: epoch + 1, batch: b, loss });
                }
                gradients_finite(&grads)?;
                opt.step(model.params_mut(), &grads)?;
                loss_sum += loss * chunk.len() as f64;
            }
            let train_loss = loss_sum / train.len() as f64;
            let val_loss = model.loss(val)?;
            if !val_loss.is_finite() {
                return Err(DeciderError::Diverged {
                    epoch: epoch + 1,
                    batch: 0,
                    loss: val_loss,
                });
            }
            history.push(EpochRecord {
                epoch: epoch + 1,
                train_loss,
                val_loss,
                lr,
            });
            sched.advance(val_loss, epoch, config.max_epochs);
        }
        let val_report = model.evaluate(val)?;
        Ok(TrainOutcome {
            model,
            history,
            val_report,
        })
    }
}
