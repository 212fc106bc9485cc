//! Pipeline configuration: one TOML file with stage-keyed sections, every
//! field overridable from the command line with `--set section.key=value`.

use std::path::{Path, PathBuf};

use langadapt_core::trainer::{RegMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub tokenizer: TokenizerConfig,
    /// Donor-side tokenizer (the "old" model's vocabulary).
    pub old_tokenizer: TokenizerConfig,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub pretrain: TrainSection,
    pub sft: SftSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig::default(),
            tokenizer: TokenizerConfig::default(),
            old_tokenizer: TokenizerConfig {
                target_vocab: 560,
                ..TokenizerConfig::default()
            },
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainSection::default(),
            sft: SftSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    pub target_corpus: PathBuf,
    pub source_corpus: PathBuf,
    pub instructions: PathBuf,
    pub mcq: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("out"),
            target_corpus: PathBuf::from("data/ru_mini.txt"),
            source_corpus: PathBuf::from("data/en_mini.txt"),
            instructions: PathBuf::from("data/instructions.jsonl"),
            mcq: PathBuf::from("data/mcq.jsonl"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub target_vocab: usize,
    pub seed_vocab: usize,
    pub shrink_factor: f64,
    pub em_iters: usize,
    pub max_piece_chars: usize,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            target_vocab: 800,
            seed_vocab: 12_000,
            shrink_factor: 0.75,
            em_iters: 2,
            max_piece_chars: 12,
            lowercase: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub dedup_threshold: f64,
    pub shingle_k: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub quality_threshold: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            dedup_threshold: 0.85,
            shingle_k: 5,
            num_hashes: 128,
            bands: 16,
            quality_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub tie_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_seq_len: 64,
            tie_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn to_core(&self, vocab_size: usize) -> langadapt_core::model::TransformerConfig {
        langadapt_core::model::TransformerConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            tie_embeddings: self.tie_embeddings,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub adamw_eps: f64,
    pub adamw_beta1: f64,
    pub adamw_beta2: f64,
    pub warmup_steps: u64,
    pub accumulation_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seq_len: usize,
    pub weight_decay: f64,
    /// "none", "kl", or "slerp"
    pub reg_mode: String,
    pub beta: f64,
    pub slerp_t: f64,
    pub slerp_every: usize,
    /// Cap on the number of training paragraphs (0 = no cap), to bound toy
    /// runtimes.
    pub max_paragraphs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 3e-4,
            adamw_eps: 1e-8,
            adamw_beta1: 0.9,
            adamw_beta2: 0.999,
            warmup_steps: 10,
            accumulation_steps: 1,
            batch_size: 4,
            epochs: 1,
            seq_len: 64,
            weight_decay: 0.0,
            reg_mode: "kl".to_string(),
            beta: 0.1,
            slerp_t: 0.1,
            slerp_every: 10,
            max_paragraphs: 600,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let reg_mode = match self.reg_mode.as_str() {
            "none" => RegMode::None,
            "kl" => RegMode::Kl { beta: self.beta },
            "slerp" => RegMode::Slerp { t: self.slerp_t, every_n_steps: self.slerp_every },
            other => {
                return Err(CliError::validation(format!(
                    "reg_mode must be none|kl|slerp, got {other:?}"
                )))
            }
        };
        let cfg = TrainConfig {
            lr: self.lr,
            adamw_eps: self.adamw_eps,
            adamw_betas: (self.adamw_beta1, self.adamw_beta2),
            warmup_steps: self.warmup_steps,
            accumulation_steps: self.accumulation_steps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seq_len: self.seq_len,
            weight_decay: self.weight_decay,
            reg_mode,
            seed,
        };
        cfg.validate().map_err(|e| CliError::validation(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub train: TrainSection,
    pub dedup_threshold: f64,
    pub reward_threshold: f64,
    pub max_pairs: usize,
}

impl Default for SftSection {
    fn default() -> Self {
        SftSection {
            train: TrainSection {
                lr: 1e-4,
                epochs: 1,
                reg_mode: "none".to_string(),
                max_paragraphs: 0,
                ..TrainSection::default()
            },
            dedup_threshold: 0.85,
            reward_threshold: 0.5,
            max_pairs: 400,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// "sum_logprob" or "mean_logprob"
    pub scoring: String,
    /// Trailing paragraphs of the target corpus held out of training.
    pub holdout_paragraphs: usize,
    pub max_mcq_items: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            scoring: "mean_logprob".to_string(),
            holdout_paragraphs: 40,
            max_mcq_items: 60,
        }
    }
}

impl EvalSection {
    pub fn scoring(&self) -> Result<langadapt_core::eval::OptionScoring, CliError> {
        match self.scoring.as_str() {
            "sum_logprob" => Ok(langadapt_core::eval::OptionScoring::SumLogProb),
            "mean_logprob" => Ok(langadapt_core::eval::OptionScoring::MeanLogProb),
            other => Err(CliError::validation(format!(
                "eval.scoring must be sum_logprob|mean_logprob, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub vocab_sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub steps_budget_paragraphs: usize,
    pub noise_fraction: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            vocab_sizes: vec![300, 400, 500, 600],
            betas: vec![0.0, 0.5],
            steps_budget_paragraphs: 240,
            noise_fraction: 0.3,
        }
    }
}

impl PipelineConfig {
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
        out_dir: Option<&Path>,
    ) -> Result<Self, CliError> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::validation(format!("config parse error: {e}")))?
            }
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let mut cfg: PipelineConfig = value
            .try_into()
            .map_err(|e| CliError::validation(format!("config error: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(d) = out_dir {
            cfg.paths.out_dir = d.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects out-of-range hyperparameters before any stage runs.
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, t) in [("tokenizer", &self.tokenizer), ("old_tokenizer", &self.old_tokenizer)] {
            if t.target_vocab < 260 {
                return Err(CliError::validation(format!(
                    "{name}.target_vocab must be at least 260"
                )));
            }
            if t.seed_vocab <= t.target_vocab {
                return Err(CliError::validation(format!(
                    "{name}.seed_vocab must exceed target_vocab"
                )));
            }
            if !(t.shrink_factor > 0.0 && t.shrink_factor < 1.0) {
                return Err(CliError::validation(format!(
                    "{name}.shrink_factor must lie in (0, 1)"
                )));
            }
        }
        if self.corpus.num_hashes == 0
            || self.corpus.bands == 0
            || self.corpus.num_hashes % self.corpus.bands != 0
        {
            return Err(CliError::validation(
                "corpus.bands must evenly divide corpus.num_hashes".to_string(),
            ));
        }
        self.model
            .to_core(self.tokenizer.target_vocab)
            .validate()
            .map_err(|e| CliError::validation(e.to_string()))?;
        self.pretrain.to_core(self.seed)?;
        self.sft.train.to_core(self.seed)?;
        self.eval.scoring()?;
        if self.ablate.vocab_sizes.is_empty() || self.ablate.betas.is_empty() {
            return Err(CliError::validation(
                "ablate.vocab_sizes and ablate.betas must be non-empty".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.ablate.noise_fraction) {
            return Err(CliError::validation(
                "ablate.noise_fraction must lie in [0, 1)".to_string(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Applies one `section.key=value` override into the raw TOML tree; the value
/// side is parsed as TOML so numbers, booleans, strings, and arrays all work.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("--set needs key=value, got {spec:?}")))?;
    let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
        .or_else(|_| toml::from_str(&format!("v = {raw:?}")))
        .map_err(|e| CliError::validation(format!("bad --set value {raw:?}: {e}")))
        .map(|t: toml::Value| t["v"].clone())?;
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| CliError::validation(format!("--set path {path:?} crosses a non-table")))?
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| CliError::validation(format!("--set path {path:?} crosses a non-table")))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
