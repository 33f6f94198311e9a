use super::model::{cast, Real};
use super::{DeciderError, Params};

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    step: u64,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(shape: &Params<T>, lr: f64, weight_decay: f64, betas: (f64, f64)) -> Self {
        Self {
            lr,
            weight_decay,
            betas,
            eps: 1e-8,
            step: 0,
            m: shape.zeros_like(),
            v: shape.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` from `grads`. Parameters are left untouched
    /// if the update would make any of them non-finite.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<(), DeciderError> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(DeciderError::StateMismatch);
        }
        let t = self.step + 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - libm::pow(b1, t as f64);
        let bc2 = 1.0 - libm::pow(b2, t as f64);
        let decay: T = cast(1.0 - self.lr * self.weight_decay);
        let lr: T = cast(self.lr);
        let (b1t, b2t): (T, T) = (cast(b1), cast(b2));
        let (one_b1, one_b2): (T, T) = (cast(1.0 - b1), cast(1.0 - b2));
        let (bc1t, bc2t): (T, T) = (cast(bc1), cast(bc2));
        let eps: T = cast(self.eps);

        let mut next = params.clone();
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let g_all = grads.tensors();
        for (((p, m), v), (_, g)) in next
            .tensors_mut()
            .into_iter()
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
            .zip(g_all.iter())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1t * m[i] + one_b1 * gi;
                v[i] = b2t * v[i] + one_b2 * gi * gi;
                let mhat = m[i] / bc1t;
                let vhat = v[i] / bc2t;
                p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        if !next.all_finite() {
            return Err(DeciderError::NonFinite);
        }
        *params = next;
        self.m = m;
        self.v = v;
        self.step = t;
        Ok(())
    }
}

/// Learning-rate policy applied once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduler {
    /// Multiply the rate by `factor` once validation loss has failed to
    /// improve for more than `patience` consecutive epochs.
    ReduceOnPlateau { factor: f64, patience: usize },
    /// Half-cosine from the initial rate down to `min_lr` over the run.
    Cosine { min_lr: f64 },
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler::ReduceOnPlateau {
            factor: 0.5,
            patience: 3,
        }
    }
}

/// Mutable scheduler bookkeeping across epochs.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SchedulerState {
    kind: Scheduler,
    base_lr: f64,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

/// Relative improvement needed to reset the plateau counter.
const PLATEAU_THRESHOLD: f64 = 1e-4;

impl SchedulerState {
    pub(crate) fn new(kind: Scheduler, base_lr: f64) -> Self {
        Self {
            kind,
            base_lr,
            lr: base_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub(crate) fn lr(&self) -> f64 {
        self.lr
    }

    /// Rate for the epoch after `epoch` (0-based) of `total`.
    pub(crate) fn advance(&mut self, val_loss: f64, epoch: usize, total: usize) -> f64 {
        match self.kind {
            Scheduler::ReduceOnPlateau { factor, patience } => {
                if val_loss < self.best * (1.0 - PLATEAU_THRESHOLD) {
                    self.best = val_loss;
                    self.bad_epochs = 0;
                } else {
                    self.bad_epochs += 1;
                }
                if self.bad_epochs > patience {
                    self.lr *= factor;
                    self.bad_epochs = 0;
                }
            }
            Scheduler::Cosine { min_lr } => {
                let done = (epoch + 1) as f64 / total.max(1) as f64;
                self.lr = min_lr + 0.5 * (self.base_lr - min_lr) * (1.0 + libm::cos(core::f64::consts::PI * done));
            }
        }
        self.lr
    }
}

pub(crate) fn validate_scheduler(s: &Scheduler) -> Result<(), DeciderError> {
    match *s {
        Scheduler::ReduceOnPlateau { factor, .. } if !(0.0..1.0).contains(&factor) => {
            Err(DeciderError::InvalidConfig("plateau factor must lie in [0, 1)"))
        }
        Scheduler::Cosine { min_lr } if !(min_lr >= 0.0) => Err(DeciderError::InvalidConfig("min_lr must be >= 0")),
        _ => Ok(()),
    }
}
