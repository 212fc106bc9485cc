//! Evaluation: perplexity, accuracy@1 on multiple-choice sets, and the
//! ablation runner that trains named variants from a shared init and reports
//! one row per variant.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::model::{forward, Checkpoint, ModelError};
use crate::tokenizer::TokenizerModel;
use crate::trainer::{continued_pretrain, RegMode, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    EmptyTexts,
    EmptyItems,
    InvalidItem { index: usize, reason: &'static str },
    NoVariants,
    Model(ModelError),
    Train(TrainError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyTexts => write!(f, "perplexity needs at least one non-empty text"),
            EvalError::EmptyItems => write!(f, "accuracy needs at least one item"),
            EvalError::InvalidItem { index, reason } => {
                write!(f, "item {index} is invalid: {reason}")
            }
            EvalError::NoVariants => write!(f, "ablation needs at least one variant"),
            EvalError::Model(e) => write!(f, "model error: {e}"),
            EvalError::Train(e) => write!(f, "training error: {e}"),
        }
    }
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(e)
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for EvalError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McqItem {
    pub question: String,
    pub options: Vec<String>,
    pub answer_idx: usize,
}

impl McqItem {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.options.len() < 2 {
            return Err("needs at least two options");
        }
        if self.answer_idx >= self.options.len() {
            return Err("answer_idx out of range");
        }
        for (i, a) in self.options.iter().enumerate() {
            if self.options[i + 1..].contains(a) {
                return Err("options must be distinct");
            }
        }
        Ok(())
    }
}

/// How an option's token log-probabilities aggregate into its score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptionScoring {
    SumLogProb,
    /// Length-normalized; the default, to avoid short-option bias.
    #[default]
    MeanLogProb,
}

/// exp(mean next-token negative log-likelihood, natural log) over already
/// tokenized sequences. Each sequence is split into `max_seq_len` windows;
/// the first position of each window is context only.
pub fn perplexity_ids(ckpt: &Checkpoint, seqs: &[Vec<u32>]) -> Result<f64, EvalError> {
    let v = ckpt.config.vocab_size;
    let mut total_nll = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        for chunk in seq.chunks(ckpt.config.max_seq_len) {
            if chunk.len() < 2 {
                continue;
            }
            let logits = forward(&ckpt.params, &ckpt.config, &[chunk.to_vec()])?;
            for t in 1..chunk.len() {
                let row = &logits[0][(t - 1) * v..t * v];
                total_nll -= log_softmax_at(row, chunk[t] as usize);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyTexts);
    }
    Ok(math::exp(total_nll / count as f64))
}

/// Perplexity of raw texts: each is tokenized with a leading bos.
pub fn perplexity(
    ckpt: &Checkpoint,
    tokenizer: &TokenizerModel,
    texts: &[String],
) -> Result<f64, EvalError> {
    let bos = tokenizer.special_ids().bos;
    let seqs: Vec<Vec<u32>> = texts
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let mut ids = alloc::vec![bos];
            ids.extend(tokenizer.encode(t).token_ids);
            ids
        })
        .collect();
    if seqs.is_empty() {
        return Err(EvalError::EmptyTexts);
    }
    perplexity_ids(ckpt, &seqs)
}

fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| math::exp(x - max)).sum();
    row[idx] - max - math::ln(sum)
}

/// Accuracy@1: each option is scored by the (sum or mean) log-probability of
/// its tokens conditioned on the question; argmax wins, ties go to the lowest
/// index.
pub fn mcq_accuracy(
    ckpt: &Checkpoint,
    tokenizer: &TokenizerModel,
    items: &[McqItem],
    scoring: OptionScoring,
) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyItems);
    }
    let specials = tokenizer.special_ids();
    let v = ckpt.config.vocab_size;
    let mut correct = 0usize;
    for (index, item) in items.iter().enumerate() {
        item.validate().map_err(|reason| EvalError::InvalidItem { index, reason })?;
        let mut context = alloc::vec![specials.bos];
        context.extend(tokenizer.encode(&item.question).token_ids);
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0usize;
        for (opt_idx, option) in item.options.iter().enumerate() {
            let opt_ids = tokenizer.encode(option).token_ids;
            if opt_ids.is_empty() {
                return Err(EvalError::InvalidItem { index, reason: "option tokenizes to nothing" });
            }
            let mut ids = context.clone();
            ids.extend(&opt_ids);
            // keep the suffix when the rendered item overflows the window,
            // so every option token stays scored
            let max = ckpt.config.max_seq_len;
            let start = ids.len().saturating_sub(max);
            let ids = ids[start..].to_vec();
            let opt_start = ids.len() - opt_ids.len();
            let logits = forward(&ckpt.params, &ckpt.config, &[ids.clone()])?;
            let mut score = 0.0;
            for t in opt_start.max(1)..ids.len() {
                let row = &logits[0][(t - 1) * v..t * v];
                score += log_softmax_at(row, ids[t] as usize);
            }
            if scoring == OptionScoring::MeanLogProb {
                score /= (ids.len() - opt_start.max(1)) as f64;
            }
            if score > best {
                best = score;
                best_idx = opt_idx;
            }
        }
        if best_idx == item.answer_idx {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Named metrics for one evaluated model, plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ppl: f64,
    pub accuracy: f64,
    pub seed: u64,
    pub config_hash: u64,
    pub dataset_id: String,
}

/// FNV-1a over the model dimensions, so reports from mismatched configs are
/// distinguishable.
pub fn config_hash(ckpt: &Checkpoint) -> u64 {
    let c = &ckpt.config;
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for v in [
        c.n_layers as u64,
        c.n_heads as u64,
        c.d_model as u64,
        c.d_ff as u64,
        c.vocab_size as u64,
        c.max_seq_len as u64,
        c.tie_embeddings as u64,
    ] {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

pub fn evaluate(
    ckpt: &Checkpoint,
    tokenizer: &TokenizerModel,
    texts: &[String],
    items: &[McqItem],
    scoring: OptionScoring,
    seed: u64,
    dataset_id: &str,
) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        ppl: perplexity(ckpt, tokenizer, texts)?,
        accuracy: mcq_accuracy(ckpt, tokenizer, items, scoring)?,
        seed,
        config_hash: config_hash(ckpt),
        dataset_id: String::from(dataset_id),
    })
}

/// One training recipe to compare: a config plus its (already tokenized)
/// training stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariant {
    pub name: String,
    pub cfg: TrainConfig,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub ppl: Option<f64>,
    pub accuracy: Option<f64>,
    /// Mean KL to the reference over the run's optimizer steps, when a
    /// reference participated.
    pub mean_kl: Option<f64>,
    pub diverged: bool,
}

/// Trains every variant from the same init with the same seed and evaluates
/// on shared sets. A diverging variant is flagged in its row; the run
/// continues.
pub fn run_ablation(
    init: &Checkpoint,
    tokenizer: &TokenizerModel,
    variants: &[AblationVariant],
    eval_texts: &[String],
    mcq_items: &[McqItem],
    scoring: OptionScoring,
    seed: u64,
) -> Result<Vec<AblationRow>, EvalError> {
    if variants.is_empty() {
        return Err(EvalError::NoVariants);
    }
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut cfg = variant.cfg;
        cfg.seed = seed;
        let reference = match cfg.reg_mode {
            RegMode::None => None,
            _ => Some(init),
        };
        match continued_pretrain(init, reference, &variant.tokens, &cfg) {
            Ok((trained, log)) => {
                let mean_kl = if reference.is_some() && !log.is_empty() {
                    Some(log.iter().map(|m| m.kl_term).sum::<f64>() / log.len() as f64)
                } else {
                    None
                };
                let ppl = perplexity(&trained, tokenizer, eval_texts)?;
                let accuracy = if mcq_items.is_empty() {
                    None
                } else {
                    Some(mcq_accuracy(&trained, tokenizer, mcq_items, scoring)?)
                };
                rows.push(AblationRow {
                    variant: variant.name.clone(),
                    ppl: Some(ppl),
                    accuracy,
                    mean_kl,
                    diverged: false,
                });
            }
            Err(
                TrainError::NonFiniteGradient
                | TrainError::Model(ModelError::NonFiniteLoss),
            ) => rows.push(AblationRow {
                variant: variant.name.clone(),
                ppl: None,
                accuracy: None,
                mean_kl: None,
                diverged: true,
            }),
            Err(e) => return Err(EvalError::Train(e)),
        }
    }
    Ok(rows)
}
