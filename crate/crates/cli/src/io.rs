//! File IO: corpus and JSONL loaders, tokenizer/checkpoint artifacts, metric
//! logs, reports, and run manifests with content digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use langadapt_core::corpus::{split_paragraphs, Document};
use langadapt_core::eval::McqItem;
use langadapt_core::instruct::{InstructionPair, Language};
use langadapt_core::model::Checkpoint;
use langadapt_core::tokenizer::TokenizerModel;
use langadapt_core::trainer::StepMetrics;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// A plain-text corpus file becomes one `Document` tagged with the file stem;
/// blank lines separate paragraphs.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CliError> {
    let text = read_to_string(path)?;
    let tag = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    let paragraphs = split_paragraphs(&text);
    if paragraphs.is_empty() {
        return Err(CliError::validation(format!("{} contains no text", path.display())));
    }
    Ok(vec![Document { source_tag: tag, paragraphs }])
}

#[derive(Debug, Deserialize)]
struct InstructionRecord {
    prompt: String,
    output: String,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    reward: Option<f64>,
}

/// JSONL instruction loader; errors carry the 1-based line number.
pub fn load_instructions(path: &Path) -> Result<Vec<InstructionPair>, CliError> {
    let text = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstructionRecord = serde_json::from_str(line).map_err(|e| {
            CliError::validation(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let mut pair = InstructionPair::new(
            rec.prompt,
            rec.output,
            Language::from_tag(rec.language.as_deref().unwrap_or("other")),
            rec.source.unwrap_or_else(|| "unknown".to_string()),
        )
        .map_err(|e| CliError::validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        pair.reward = rec.reward;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(CliError::validation(format!("{} has no records", path.display())));
    }
    Ok(pairs)
}

#[derive(Debug, Deserialize)]
struct McqRecord {
    question: String,
    options: Vec<String>,
    answer_idx: usize,
}

pub fn load_mcq(path: &Path) -> Result<Vec<McqItem>, CliError> {
    let text = read_to_string(path)?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: McqRecord = serde_json::from_str(line).map_err(|e| {
            CliError::validation(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let item =
            McqItem { question: rec.question, options: rec.options, answer_idx: rec.answer_idx };
        item.validate().map_err(|reason| {
            CliError::validation(format!("{}:{}: {reason}", path.display(), lineno + 1))
        })?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(CliError::validation(format!("{} has no records", path.display())));
    }
    Ok(items)
}

pub fn save_tokenizer(path: &Path, model: &TokenizerModel) -> Result<(), CliError> {
    write_bytes(path, &model.to_bytes())
}

pub fn load_tokenizer(path: &Path) -> Result<TokenizerModel, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    TokenizerModel::from_bytes(&bytes)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    write_bytes(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct MetricsLine {
    step: u64,
    lr: f64,
    l_total: f64,
    l_ce: f64,
    kl_term: f64,
    tokens_seen: u64,
}

pub fn write_metrics_jsonl(path: &Path, log: &[StepMetrics]) -> Result<(), CliError> {
    let mut out = String::new();
    for m in log {
        let line = MetricsLine {
            step: m.step,
            lr: m.lr,
            l_total: m.l_total,
            l_ce: m.l_ce,
            kl_term: m.kl_term,
            tokens_seen: m.tokens_seen,
        };
        out.push_str(&serde_json::to_string(&line).expect("metrics serialize"));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("serialize error: {e}")))?;
    write_bytes(path, format!("{text}\n").as_bytes())
}

/// Minimal CSV writer; quotes any field containing a delimiter or quote.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let escape = |field: &str| -> String {
        if field.contains([',', '"', '\n']) {
            format!("\"{}\"", field.replace('"', "\"\""))
        } else {
            field.to_string()
        }
    };
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| escape(c)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// Run manifest: enough to reproduce an artifact — the exact config, the
/// seed, and content digests of every input and output.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_toml: &str) -> Self {
        Manifest {
            command: command.to_string(),
            seed,
            config_digest: sha256_hex(config_toml.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        write_json(&out_dir.join(format!("manifest-{}.json", self.command)), self)
    }
}
