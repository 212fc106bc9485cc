//! Optimization loops: AdamW with linear warmup, gradient accumulation,
//! KL-penalty or periodic parameter-interpolation regularization toward a
//! frozen reference model, and the masked-loss instruction-tuning variant.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::model::{loss_and_grads, Batch, Checkpoint, ModelError};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    InvalidConfig(&'static str),
    Model(ModelError),
    MissingReference,
    NonFiniteGradient,
    EmptyCorpus,
    EmptyOutput { example: usize },
    ShapeMismatch,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid train config: {msg}"),
            TrainError::Model(e) => write!(f, "model error: {e}"),
            TrainError::MissingReference => {
                write!(f, "regularized training requires a reference checkpoint")
            }
            TrainError::NonFiniteGradient => {
                write!(f, "non-finite gradient: training diverged")
            }
            TrainError::EmptyCorpus => write!(f, "corpus does not yield a full batch"),
            TrainError::EmptyOutput { example } => {
                write!(f, "example {example} has no output positions to train on")
            }
            TrainError::ShapeMismatch => write!(f, "parameter vectors differ in length"),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for TrainError {}

/// How the run is pulled toward the frozen reference model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegMode {
    /// Plain cross-entropy.
    None,
    /// Add `beta * KL(model ‖ reference)` to the loss.
    Kl { beta: f64 },
    /// Spherically interpolate the parameters toward the reference by `t`
    /// after every `every_n_steps` optimizer steps.
    Slerp { t: f64, every_n_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub adamw_eps: f64,
    pub adamw_betas: (f64, f64),
    pub warmup_steps: u64,
    pub accumulation_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seq_len: usize,
    pub weight_decay: f64,
    pub reg_mode: RegMode,
    pub seed: u64,
}

impl TrainConfig {
    /// Published large-scale continued-pretraining recipe, stored verbatim
    /// (including the atypical beta ordering with beta1 > beta2).
    pub fn paper_pretrain() -> Self {
        TrainConfig {
            lr: 1e-3,
            adamw_eps: 1e-8,
            adamw_betas: (0.99, 0.95),
            warmup_steps: 10,
            accumulation_steps: 128,
            batch_size: 3,
            epochs: 1,
            seq_len: 1024,
            weight_decay: 0.0,
            reg_mode: RegMode::Kl { beta: 1.0 },
            seed: 0,
        }
    }

    /// Published instruction-tuning recipe.
    pub fn paper_sft() -> Self {
        TrainConfig {
            lr: 1e-5,
            adamw_eps: 1e-8,
            adamw_betas: (0.99, 0.95),
            warmup_steps: 10,
            accumulation_steps: 64,
            batch_size: 3,
            epochs: 3,
            seq_len: 1024,
            weight_decay: 0.0,
            reg_mode: RegMode::None,
            seed: 0,
        }
    }

    /// Desk-scale defaults; lr is lowered from the published 1e-3 for
    /// stability at tiny model sizes.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 3e-4,
            adamw_eps: 1e-8,
            adamw_betas: (0.9, 0.999),
            warmup_steps: 10,
            accumulation_steps: 1,
            batch_size: 4,
            epochs: 1,
            seq_len: 128,
            weight_decay: 0.0,
            reg_mode: RegMode::None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("lr must be positive"));
        }
        let (b1, b2) = self.adamw_betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(TrainError::InvalidConfig("betas must lie in (0, 1)"));
        }
        if self.accumulation_steps == 0 {
            return Err(TrainError::InvalidConfig("accumulation_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if self.seq_len < 2 {
            return Err(TrainError::InvalidConfig("seq_len must be at least 2"));
        }
        if !self.adamw_eps.is_finite() || self.adamw_eps <= 0.0 {
            return Err(TrainError::InvalidConfig("adamw_eps must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig("weight_decay must be non-negative"));
        }
        if let RegMode::Slerp { t, every_n_steps } = self.reg_mode {
            if !(0.0..=1.0).contains(&t) {
                return Err(TrainError::InvalidConfig("slerp t must lie in [0, 1]"));
            }
            if every_n_steps == 0 {
                return Err(TrainError::InvalidConfig("slerp interval must be at least 1"));
            }
        }
        Ok(())
    }
}

/// AdamW first/second moments over the flattened parameter vector plus the
/// step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState { step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }
}

/// Linear warmup from 0 to `lr` over `warmup_steps`, constant afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if step >= cfg.warmup_steps {
        cfg.lr
    } else {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    }
}

/// One AdamW update over flattened parameters: bias-corrected moments plus
/// decoupled weight decay. `lr` is the already-scheduled learning rate.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch);
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    let (b1, b2) = cfg.adamw_betas;
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - math::powf(b1, t);
    let bc2 = 1.0 - math::powf(b2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (math::sqrt(v_hat) + cfg.adamw_eps)
            + cfg.weight_decay * params[i]);
    }
    Ok(())
}

/// Spherical linear interpolation between two flattened parameter vectors,
/// falling back to linear interpolation when the angle between them is below
/// 1e-6 radians.
pub fn slerp_params(p: &[f64], q: &[f64], t: f64) -> Result<Vec<f64>, TrainError> {
    if p.len() != q.len() {
        return Err(TrainError::ShapeMismatch);
    }
    if t == 0.0 {
        return Ok(p.to_vec());
    }
    if t == 1.0 {
        return Ok(q.to_vec());
    }
    let norm_p = math::sqrt(p.iter().map(|x| x * x).sum());
    let norm_q = math::sqrt(q.iter().map(|x| x * x).sum());
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let omega = if norm_p == 0.0 || norm_q == 0.0 {
        0.0
    } else {
        math::acos((dot / (norm_p * norm_q)).clamp(-1.0, 1.0))
    };
    if omega < 1e-6 {
        return Ok(p.iter().zip(q).map(|(a, b)| (1.0 - t) * a + t * b).collect());
    }
    let sin_omega = math::sin(omega);
    let cp = math::sin((1.0 - t) * omega) / sin_omega;
    let cq = math::sin(t * omega) / sin_omega;
    Ok(p.iter().zip(q).map(|(a, b)| cp * a + cq * b).collect())
}

/// One JSONL metrics record per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub l_total: f64,
    pub l_ce: f64,
    pub kl_term: f64,
    pub tokens_seen: u64,
}

/// Continued pre-training over a flat token stream, chunked into `seq_len`
/// windows. The reference model (when given) is frozen: it supplies the KL
/// target in `Kl` mode and the interpolation target in `Slerp` mode; its
/// per-position KL is logged in every mode.
pub fn continued_pretrain(
    init: &Checkpoint,
    reference: Option<&Checkpoint>,
    token_stream: &[u32],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepMetrics>), TrainError> {
    let chunks: Vec<(Vec<u32>, Vec<bool>)> = token_stream
        .chunks(cfg.seq_len.max(2))
        .filter(|c| c.len() >= 2)
        .map(|c| {
            let mut mask = vec![true; c.len()];
            mask[0] = false;
            (c.to_vec(), mask)
        })
        .collect();
    train_loop(init, reference, &chunks, cfg)
}

/// Instruction tuning: same loop over pre-rendered (token ids, loss mask)
/// examples, where the mask selects output tokens only.
pub fn sft_train(
    init: &Checkpoint,
    examples: &[(Vec<u32>, Vec<bool>)],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepMetrics>), TrainError> {
    for (i, (ids, mask)) in examples.iter().enumerate() {
        if ids.len() != mask.len() || !mask.iter().skip(1).any(|&m| m) {
            return Err(TrainError::EmptyOutput { example: i });
        }
    }
    train_loop(init, None, examples, cfg)
}

fn train_loop(
    init: &Checkpoint,
    reference: Option<&Checkpoint>,
    examples: &[(Vec<u32>, Vec<bool>)],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepMetrics>), TrainError> {
    cfg.validate()?;
    init.config.validate()?;
    init.params.check_shapes(&init.config)?;
    match cfg.reg_mode {
        RegMode::Kl { .. } | RegMode::Slerp { .. } if reference.is_none() => {
            return Err(TrainError::MissingReference)
        }
        _ => {}
    }
    if let Some(r) = reference {
        if r.config != init.config {
            return Err(TrainError::ShapeMismatch);
        }
        r.params.check_shapes(&init.config)?;
    }
    if examples.len() < cfg.batch_size {
        return Err(TrainError::EmptyCorpus);
    }
    let beta = match cfg.reg_mode {
        RegMode::Kl { beta } => beta,
        _ => 0.0,
    };
    let ref_params = reference.map(|r| &r.params);
    let ref_flat = reference.map(|r| r.params.flatten());

    let mut params = init.params.clone();
    let mut state = match &init.optimizer {
        Some(s) if s.m.len() == params.len() => s.clone(),
        Some(_) => return Err(TrainError::ShapeMismatch),
        None => OptimizerState::new(params.len()),
    };
    let mut log = Vec::new();
    let mut tokens_seen: u64 = 0;

    let n = examples.len();
    let micro_batches_per_step = cfg.accumulation_steps;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = Rng::new(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for i in (1..n).rev() {
            order.swap(i, rng.below(i + 1));
        }

        let mut cursor = 0;
        while cursor + cfg.batch_size <= n {
            // one optimizer step: accumulate up to accumulation_steps
            // micro-batches of unnormalized gradient sums
            let mut grad_sum = vec![0.0; params.len()];
            let mut total_masked = 0usize;
            let mut ce_sum = 0.0;
            let mut kl_sum = 0.0;
            let mut micro = 0;
            while micro < micro_batches_per_step && cursor + cfg.batch_size <= n {
                let idx = &order[cursor..cursor + cfg.batch_size];
                let batch = Batch {
                    token_ids: idx.iter().map(|&i| examples[i].0.clone()).collect(),
                    loss_mask: idx.iter().map(|&i| examples[i].1.clone()).collect(),
                };
                tokens_seen += batch.token_ids.iter().map(|s| s.len() as u64).sum::<u64>();
                let (loss, grads) =
                    loss_and_grads(&params, ref_params, &init.config, &batch, beta)?;
                let w = grads.masked_positions as f64;
                let gflat = grads.params.flatten();
                for (s, g) in grad_sum.iter_mut().zip(&gflat) {
                    *s += g * w; // undo the per-micro-batch 1/M normalization
                }
                ce_sum += loss.l_ce * w;
                kl_sum += loss.kl_term * w;
                total_masked += grads.masked_positions;
                cursor += cfg.batch_size;
                micro += 1;
            }
            if total_masked == 0 {
                break;
            }
            let inv = 1.0 / total_masked as f64;
            for g in grad_sum.iter_mut() {
                *g *= inv;
            }
            let lr = lr_at(state.step + 1, cfg);
            let mut flat = params.flatten();
            adamw_step(&mut flat, &grad_sum, &mut state, cfg, lr)?;
            params.unflatten_into(&flat)?;

            if let RegMode::Slerp { t, every_n_steps } = cfg.reg_mode {
                if state.step % every_n_steps as u64 == 0 {
                    let merged =
                        slerp_params(&params.flatten(), ref_flat.as_ref().unwrap(), t)?;
                    params.unflatten_into(&merged)?;
                }
            }

            let l_ce = ce_sum * inv;
            let kl_term = kl_sum * inv;
            log.push(StepMetrics {
                step: state.step,
                lr,
                l_total: l_ce + beta * kl_term,
                l_ce,
                kl_term,
                tokens_seen,
            });
        }
    }

    if !params.all_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    Ok((
        Checkpoint { config: init.config, params, optimizer: Some(state) },
        log,
    ))
}
