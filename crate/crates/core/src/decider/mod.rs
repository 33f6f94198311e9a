//! The decider: a small conv + MLP classifier that reads the text and image
//! vectors of two products and scores whether they are the same item.
//!
//! Layout of one input: two channels (one per product), each the product's
//! text vector followed by its image vector. A 1-d convolution slides over
//! both channels at once so each filter sees aligned features of the two
//! products side by side.

mod metrics;
mod model;
mod optim;
mod train;

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::vector::{EmbeddingVector, VectorError, REDUCED_DIM};

pub use metrics::{cross_entropy_loss, evaluate, ClassMetrics, Confusion, EvalReport};
pub use model::{DeciderModel, Linear, Params, Real};
pub use optim::{AdamW, Scheduler};
pub use train::{EpochRecord, LabeledPairs, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeciderError {
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("input shape mismatch: expected width {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("batch has {inputs} inputs but {labels} labels")]
    LabelCount { inputs: usize, labels: usize },
    #[error("empty batch or dataset")]
    Empty,
    #[error("model holds non-finite parameters or produced non-finite output")]
    NonFinite,
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(&'static str),
    #[error("optimizer state does not match the model")]
    StateMismatch,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("parameter count mismatch for `{0}`")]
    ParameterShape(&'static str),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NotMatch = 0,
    Match = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_bool(is_match: bool) -> Self {
        if is_match {
            Label::Match
        } else {
            Label::NotMatch
        }
    }

    pub fn is_match(self) -> bool {
        self == Label::Match
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Match => "match",
            Label::NotMatch => "not_match",
        })
    }
}

/// Two products' vectors plus the ground-truth label. A missing image is
/// fed to the network as zeros with its presence flag cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub text_a: EmbeddingVector,
    pub image_a: Option<EmbeddingVector>,
    pub text_b: EmbeddingVector,
    pub image_b: Option<EmbeddingVector>,
    pub label: Label,
}

impl PairSample {
    /// The same pair with products A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            text_a: self.text_b.clone(),
            image_a: self.image_b.clone(),
            text_b: self.text_a.clone(),
            image_b: self.image_a.clone(),
            label: self.label,
        }
    }
}

/// Network input: `2 × width` values, row 0 for product A, row 1 for B.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub data: Vec<f32>,
    pub width: usize,
    /// 1.0 where the product carried an image vector.
    pub image_present: [f32; 2],
}

impl PairInput {
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.width..(r + 1) * self.width]
    }
}

/// Stacks `text_a ∥ image_a` over `text_b ∥ image_b`. Every vector must
/// have width `dim`.
pub fn assemble_input_dim(sample: &PairSample, dim: usize) -> Result<PairInput, DeciderError> {
    let check = |v: &EmbeddingVector| {
        if v.dim() == dim {
            Ok(())
        } else {
            Err(DeciderError::Vector(VectorError::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            }))
        }
    };
    check(&sample.text_a)?;
    check(&sample.text_b)?;
    let width = 2 * dim;
    let mut data = Vec::with_capacity(2 * width);
    let mut present = [0f32; 2];
    for (r, (text, image)) in [(&sample.text_a, &sample.image_a), (&sample.text_b, &sample.image_b)]
        .into_iter()
        .enumerate()
    {
        data.extend_from_slice(text);
        match image {
            Some(img) => {
                check(img)?;
                data.extend_from_slice(img);
                present[r] = 1.0;
            }
            None => data.extend(core::iter::repeat_n(0.0, dim)),
        }
    }
    Ok(PairInput {
        data,
        width,
        image_present: present,
    })
}

/// [`assemble_input_dim`] at the reduced width of 128 (a 2×256 input).
pub fn assemble_input(sample: &PairSample) -> Result<PairInput, DeciderError> {
    assemble_input_dim(sample, REDUCED_DIM)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeciderConfig {
    /// Width of each per-product modality vector.
    pub input_dim: usize,
    pub conv_filters: usize,
    /// Odd, so "same" padding is symmetric.
    pub kernel_size: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for DeciderConfig {
    fn default() -> Self {
        Self {
            input_dim: REDUCED_DIM,
            conv_filters: 16,
            kernel_size: 3,
            hidden_dims: alloc::vec![256, 64],
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl DeciderConfig {
    pub fn validate(&self) -> Result<(), DeciderError> {
        if self.input_dim == 0 {
            return Err(DeciderError::InvalidConfig("input_dim must be positive"));
        }
        if self.conv_filters == 0 {
            return Err(DeciderError::InvalidConfig("conv_filters must be positive"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(DeciderError::InvalidConfig("kernel_size must be odd and positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(DeciderError::InvalidConfig("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DeciderError::InvalidConfig("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Length of one input channel.
    pub fn width(&self) -> usize {
        2 * self.input_dim
    }

    /// Features entering the first linear layer: flattened conv maps plus
    /// the two image-presence flags.
    pub fn flat_features(&self) -> usize {
        self.conv_filters * self.width() + 2
    }
}

/// A scored verdict for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    /// Probability of the match class.
    pub probability: f64,
    pub label: Label,
}
