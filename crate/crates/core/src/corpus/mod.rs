//! Corpus preparation: paragraph splitting, MinHash/LSH near-duplicate
//! removal, quality filtration, and per-source statistics.

mod minhash;
mod quality;

pub use minhash::{dedup, minhash, DedupError, DedupReport, MinHashSignature};
pub(crate) use minhash::dedup_keep_flags;
pub use quality::{filter, FilterReport, HeuristicScorer, QualityScore, QualityScorer};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::tokenizer::TokenizerModel;

/// A source-tagged document: one entry of the raw corpus, already split into
/// paragraphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub source_tag: String,
    pub paragraphs: Vec<String>,
}

impl Document {
    pub fn new(source_tag: &str, paragraphs: Vec<String>) -> Self {
        Document { source_tag: source_tag.to_string(), paragraphs }
    }
}

/// Splits raw text into paragraphs on runs of one or more blank lines, after
/// CRLF -> LF normalization. Paragraphs are trimmed; empty results dropped.
pub fn split_paragraphs(raw: &str) -> Vec<String> {
    let normalized = raw.replace("\r\n", "\n");
    let mut out = Vec::new();
    let mut current = String::new();
    for line in normalized.split('\n') {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                out.push(current.trim().to_string());
            }
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        out.push(current.trim().to_string());
    }
    out
}

/// One row of the corpus statistics table: per-source size in bytes,
/// paragraph count, and token count under a given tokenizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRow {
    pub source_tag: String,
    pub bytes: usize,
    pub paragraphs: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

impl StatsTable {
    pub fn total_tokens(&self) -> usize {
        self.rows.iter().map(|r| r.tokens).sum()
    }
}

/// Per-source byte size, paragraph count, and token count. Rows appear in
/// order of first occurrence of each source tag.
pub fn corpus_stats(corpus: &[Document], tokenizer: &TokenizerModel) -> StatsTable {
    let mut rows: Vec<StatsRow> = Vec::new();
    for doc in corpus {
        let idx = match rows.iter().position(|r| r.source_tag == doc.source_tag) {
            Some(i) => i,
            None => {
                rows.push(StatsRow {
                    source_tag: doc.source_tag.clone(),
                    bytes: 0,
                    paragraphs: 0,
                    tokens: 0,
                });
                rows.len() - 1
            }
        };
        for p in &doc.paragraphs {
            rows[idx].bytes += p.len();
            rows[idx].paragraphs += 1;
            rows[idx].tokens += tokenizer.encode(p).len();
        }
    }
    StatsTable { rows }
}
