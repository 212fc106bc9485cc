//! Tokenizer efficiency report: mean tokens per whitespace-delimited word
//! (fertility), total token counts, and compression relative to a pure byte
//! baseline.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{TokenizerError, TokenizerModel};

#[derive(Debug, Clone, PartialEq)]
pub struct FertilityRow {
    pub name: String,
    /// Mean tokens per whitespace-delimited word.
    pub fertility: f64,
    pub total_tokens: usize,
    /// fertility / byte-baseline fertility; < 1 means more efficient than
    /// encoding every byte as one token.
    pub vs_bytes: f64,
    /// fertility / fertility of the first model in the input list.
    pub ratio_to_baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FertilityReport {
    /// Rows sorted by fertility, most efficient first.
    pub rows: Vec<FertilityRow>,
    /// Mean bytes per word: the fertility of a pure byte tokenizer.
    pub byte_fertility: f64,
    pub word_count: usize,
}

/// Compares tokenizers on a shared corpus. The first model in the list is the
/// baseline for `ratio_to_baseline`.
pub fn fertility_report(
    models: &[(&str, &TokenizerModel)],
    corpus: &[&str],
) -> Result<FertilityReport, TokenizerError> {
    let word_count: usize = corpus.iter().map(|t| t.split_whitespace().count()).sum();
    if corpus.is_empty() || word_count == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    let total_bytes: usize = corpus
        .iter()
        .map(|t| t.split_whitespace().map(|w| w.len()).sum::<usize>())
        .sum();
    let byte_fertility = total_bytes as f64 / word_count as f64;

    let mut rows: Vec<FertilityRow> = Vec::with_capacity(models.len());
    let mut baseline_fertility = None;
    for (name, model) in models {
        let total_tokens: usize = corpus.iter().map(|t| model.encode(t).len()).sum();
        let fertility = total_tokens as f64 / word_count as f64;
        let baseline = *baseline_fertility.get_or_insert(fertility);
        rows.push(FertilityRow {
            name: name.to_string(),
            fertility,
            total_tokens,
            vs_bytes: fertility / byte_fertility,
            ratio_to_baseline: fertility / baseline,
        });
    }
    rows.sort_by(|a, b| a.fertility.partial_cmp(&b.fertility).unwrap());
    Ok(FertilityReport { rows, byte_fertility, word_count })
}
