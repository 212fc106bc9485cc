//! A small decoder-only causal transformer in f64 with exact analytic
//! gradients: pre-norm residual blocks, rotary position encoding, gated MLP.
//! Provides the model and frozen-reference probability distributions for the
//! KL-regularized training loss.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use forward::{forward, loss_and_grads, Batch, Gradients};
pub use params::{ModelParams, Tensor};

use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    InvalidConfig(&'static str),
    IdOutOfRange { id: u32, vocab_size: usize },
    SequenceTooLong { len: usize, max: usize },
    EmptyMask,
    ShapeMismatch(&'static str),
    NonFiniteLoss,
    Format(&'static str),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            ModelError::IdOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} out of range for vocab {vocab_size}")
            }
            ModelError::SequenceTooLong { len, max } => {
                write!(f, "sequence length {len} exceeds max {max}")
            }
            ModelError::EmptyMask => write!(f, "loss mask selects no positions"),
            ModelError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            ModelError::NonFiniteLoss => write!(f, "loss is not finite"),
            ModelError::Format(msg) => write!(f, "checkpoint format error: {msg}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for ModelError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub tie_embeddings: bool,
}

impl TransformerConfig {
    /// Desk-scale default; the loss mechanism is scale-free.
    pub fn toy(vocab_size: usize) -> Self {
        TransformerConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size,
            max_seq_len: 128,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig("d_model must be divisible by n_heads"));
        }
        if self.d_model / self.n_heads % 2 != 0 {
            return Err(ModelError::InvalidConfig("head dim must be even for rotary encoding"));
        }
        if self.max_seq_len == 0 {
            return Err(ModelError::InvalidConfig("max_seq_len must be at least 1"));
        }
        if self.vocab_size == 0 || self.d_ff == 0 {
            return Err(ModelError::InvalidConfig("vocab_size and d_ff must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Decomposition of the training loss: `l_total = l_ce + beta * kl_term`,
/// where the KL term is the forward divergence from the model distribution to
/// the frozen reference, averaged over masked positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_total: f64,
    pub l_ce: f64,
    pub kl_term: f64,
    pub beta: f64,
}
