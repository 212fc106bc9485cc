//! Instruction-output dataset handling: validation, near-duplicate removal,
//! reward-based filtration, and chat-template rendering into (token ids,
//! loss mask) pairs for instruction tuning.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use hashbrown::HashSet;

use crate::corpus::{dedup_keep_flags, DedupError, DedupReport};
use crate::tokenizer::TokenizerModel;

#[derive(Debug, Clone, PartialEq)]
pub enum InstructError {
    EmptyPrompt,
    EmptyOutput,
    PromptTooLong { prompt_tokens: usize, max_seq_len: usize },
    Dedup(DedupError),
}

impl fmt::Display for InstructError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstructError::EmptyPrompt => write!(f, "instruction prompt is empty"),
            InstructError::EmptyOutput => write!(f, "instruction output is empty"),
            InstructError::PromptTooLong { prompt_tokens, max_seq_len } => write!(
                f,
                "rendered prompt takes {prompt_tokens} tokens, leaving no room for output \
                 within max_seq_len {max_seq_len}"
            ),
            InstructError::Dedup(e) => write!(f, "dedup error: {e}"),
        }
    }
}

impl From<DedupError> for InstructError {
    fn from(e: DedupError) -> Self {
        InstructError::Dedup(e)
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for InstructError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    Ru,
    En,
    Other,
}

impl Language {
    pub fn from_tag(tag: &str) -> Language {
        match tag {
            "ru" => Language::Ru,
            "en" => Language::En,
            _ => Language::Other,
        }
    }

    pub fn as_tag(&self) -> &'static str {
        match self {
            Language::Ru => "ru",
            Language::En => "en",
            Language::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionPair {
    pub prompt: String,
    pub output: String,
    pub language: Language,
    pub source: String,
    pub reward: Option<f64>,
}

impl InstructionPair {
    pub fn new(
        prompt: impl Into<String>,
        output: impl Into<String>,
        language: Language,
        source: impl Into<String>,
    ) -> Result<Self, InstructError> {
        let pair = InstructionPair {
            prompt: prompt.into(),
            output: output.into(),
            language,
            source: source.into(),
            reward: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), InstructError> {
        if self.prompt.trim().is_empty() {
            return Err(InstructError::EmptyPrompt);
        }
        if self.output.trim().is_empty() {
            return Err(InstructError::EmptyOutput);
        }
        Ok(())
    }
}

/// Near-duplicate removal over concatenated prompt+output texts; first
/// occurrence survives, order is preserved. Report rows are keyed by pair
/// source.
pub fn dedup_instructions(
    pairs: &[InstructionPair],
    threshold: f64,
) -> Result<(Vec<InstructionPair>, DedupReport), InstructError> {
    let texts: Vec<String> =
        pairs.iter().map(|p| format!("{}\n{}", p.prompt, p.output)).collect();
    let flags = dedup_keep_flags(texts.iter().map(String::as_str), threshold, 5, 128, 16, 0)?;
    let mut report = DedupReport::default();
    let mut out = Vec::new();
    for (pair, keep) in pairs.iter().zip(flags) {
        report.bump(&pair.source, keep);
        if keep {
            out.push(pair.clone());
        }
    }
    Ok((out, report))
}

/// Pluggable reward model stand-in: maps a pair to a reward in [0, 1].
pub trait RewardScorer {
    fn reward(&self, pair: &InstructionPair) -> f64;
}

/// Deterministic heuristic reward: geometric mean of an output-length band,
/// a word-repetition score, and a prompt-echo score, so any degenerate axis
/// (near-empty output, looped n-grams, verbatim echo) zeroes the reward.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicReward;

fn band(x: f64, lo0: f64, lo1: f64, hi1: f64, hi0: f64) -> f64 {
    if x <= lo0 || x >= hi0 {
        0.0
    } else if x < lo1 {
        (x - lo0) / (lo1 - lo0)
    } else if x <= hi1 {
        1.0
    } else {
        (hi0 - x) / (hi0 - hi1)
    }
}

impl RewardScorer for HeuristicReward {
    fn reward(&self, pair: &InstructionPair) -> f64 {
        let words: Vec<&str> = pair.output.split_whitespace().collect();
        let n = words.len();
        let length = band(n as f64, 1.0, 4.0, 300.0, 800.0);

        let distinct: HashSet<&str> = words.iter().copied().collect();
        let repetition = if n == 0 {
            0.0
        } else {
            ((distinct.len() as f64 / n as f64 - 0.2) / 0.6).clamp(0.0, 1.0)
        };

        let prompt_words: HashSet<&str> = pair.prompt.split_whitespace().collect();
        let echoed = words.iter().filter(|w| prompt_words.contains(*w)).count();
        let echo = if n == 0 {
            0.0
        } else {
            (1.0 - (echoed as f64 / n as f64 - 0.6) / 0.4).clamp(0.0, 1.0)
        };

        crate::math::powf(length * repetition * echo, 1.0 / 3.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardReport {
    /// Reward histogram over 10 equal bins of [0, 1].
    pub histogram: [usize; 10],
    pub kept: usize,
    pub dropped: usize,
    pub threshold: f64,
}

/// Keeps pairs whose reward reaches `threshold`; survivors carry their reward
/// and keep input order.
pub fn filter_by_reward(
    pairs: &[InstructionPair],
    scorer: &dyn RewardScorer,
    threshold: f64,
) -> (Vec<InstructionPair>, RewardReport) {
    let threshold = threshold.clamp(0.0, 1.0);
    let mut report = RewardReport { histogram: [0; 10], kept: 0, dropped: 0, threshold };
    let mut out = Vec::new();
    for pair in pairs {
        let r = scorer.reward(pair).clamp(0.0, 1.0);
        report.histogram[((r * 10.0) as usize).min(9)] += 1;
        if r >= threshold {
            let mut kept = pair.clone();
            kept.reward = Some(r);
            out.push(kept);
            report.kept += 1;
        } else {
            report.dropped += 1;
        }
    }
    (out, report)
}

/// Text wrapped around the prompt when rendering a chat turn. The full
/// rendered form is `<s>{prefix}{prompt}{suffix}{output}</s>` with `<s>` and
/// `</s>` as special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTemplate {
    pub prompt_prefix: String,
    pub prompt_suffix: String,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        ChatTemplate {
            prompt_prefix: "[INST] ".to_string(),
            prompt_suffix: " [/INST] ".to_string(),
        }
    }
}

/// Renders a pair into (token ids, loss mask). The mask is true exactly on
/// the output tokens plus the terminal eos; output tokens beyond
/// `max_seq_len` are truncated from the tail.
pub fn render_chat(
    pair: &InstructionPair,
    template: &ChatTemplate,
    tokenizer: &TokenizerModel,
    max_seq_len: usize,
) -> Result<(Vec<u32>, Vec<bool>), InstructError> {
    pair.validate()?;
    let specials = tokenizer.special_ids();
    let prompt_text =
        format!("{}{}{}", template.prompt_prefix, pair.prompt, template.prompt_suffix);
    let prompt_ids = tokenizer.encode(&prompt_text).token_ids;
    let mut output_ids = tokenizer.encode(&pair.output).token_ids;

    // bos + prompt + at least one output token + eos must fit
    let fixed = 1 + prompt_ids.len() + 1;
    if fixed + 1 > max_seq_len {
        return Err(InstructError::PromptTooLong {
            prompt_tokens: 1 + prompt_ids.len(),
            max_seq_len,
        });
    }
    output_ids.truncate(max_seq_len - fixed);

    let mut ids = Vec::with_capacity(fixed + output_ids.len());
    let mut mask = Vec::with_capacity(fixed + output_ids.len());
    ids.push(specials.bos);
    mask.push(false);
    for id in prompt_ids {
        ids.push(id);
        mask.push(false);
    }
    for id in output_ids {
        ids.push(id);
        mask.push(true);
    }
    ids.push(specials.eos);
    mask.push(true);
    Ok((ids, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::test_support::ascii_model;

    fn pair(prompt: &str, output: &str) -> InstructionPair {
        InstructionPair::new(prompt, output, Language::Ru, "test").unwrap()
    }

    #[test]
    fn empty_fields_rejected() {
        assert_eq!(
            InstructionPair::new("", "y", Language::Ru, "s").unwrap_err(),
            InstructError::EmptyPrompt
        );
        assert_eq!(
            InstructionPair::new("x", "  ", Language::Ru, "s").unwrap_err(),
            InstructError::EmptyOutput
        );
    }

    #[test]
    fn dedup_removes_exact_duplicate_keeps_order() {
        let pairs = vec![
            pair("what is rust", "a systems language with memory safety"),
            pair("what is rust", "a systems language with memory safety"),
            pair("name a planet", "mars is the fourth planet from the sun"),
        ];
        let (out, report) = dedup_instructions(&pairs, 0.85).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].prompt, "what is rust");
        assert_eq!(out[1].prompt, "name a planet");
        assert_eq!(report.total_removed(), 1);
    }

    #[test]
    fn dedup_is_idempotent_on_distinct_set() {
        let pairs = vec![
            pair("alpha question", "first detailed answer about mountains"),
            pair("beta question", "second detailed answer about oceans"),
        ];
        let (once, _) = dedup_instructions(&pairs, 0.85).unwrap();
        let (twice, report) = dedup_instructions(&once, 0.85).unwrap();
        assert_eq!(once, twice);
        assert_eq!(report.total_removed(), 0);
    }

    #[test]
    fn reward_filter_thresholds() {
        struct Const(f64);
        impl RewardScorer for Const {
            fn reward(&self, _: &InstructionPair) -> f64 {
                self.0
            }
        }
        let pairs = vec![pair("p", "o k"), pair("q", "r s")];
        let (all, _) = filter_by_reward(&pairs, &Const(0.5), 0.0);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].reward, Some(0.5));
        let (none, report) = filter_by_reward(&pairs, &Const(0.5), 0.6);
        assert!(none.is_empty());
        assert_eq!(report.dropped, 2);
    }

    #[test]
    fn heuristic_removes_planted_degenerates() {
        let mut pairs = Vec::new();
        for i in 0..60 {
            pairs.push(pair(
                "explain the water cycle in simple terms",
                &format!(
                    "water evaporates from oceans rises as vapor condenses into clouds \
                     and falls again as rain variant {i} closes the loop"
                ),
            ));
        }
        // planted degenerates: near-empty, looped n-grams, verbatim echo
        let mut planted = Vec::new();
        for i in 0..20 {
            planted.push(pair(&format!("question {i}"), "ok"));
            planted.push(pair(
                &format!("question {i}"),
                &"again again again again again again again again ".repeat(3),
            ));
            planted.push(pair(
                &format!("please repeat question number {i} exactly word for word"),
                &format!("please repeat question number {i} exactly word for word"),
            ));
        }
        let n_planted = planted.len();
        pairs.extend(planted);
        let (kept, _) = filter_by_reward(&pairs, &HeuristicReward, 0.5);
        let kept_clean = kept.iter().filter(|p| p.output.starts_with("water")).count();
        let kept_planted = kept.len() - kept_clean;
        assert!(kept_clean >= 57, "kept only {kept_clean} clean pairs");
        assert!(
            (kept_planted as f64) <= 0.05 * n_planted as f64,
            "kept {kept_planted} of {n_planted} planted degenerates"
        );
    }

    #[test]
    fn render_chat_mask_shape() {
        let tok = ascii_model();
        let p = pair("ab", "cd e");
        let (ids, mask) = render_chat(&p, &ChatTemplate::default(), &tok, 128).unwrap();
        assert_eq!(ids.len(), mask.len());
        let specials = tok.special_ids();
        assert_eq!(ids[0], specials.bos);
        assert!(!mask[0]);
        assert_eq!(*ids.last().unwrap(), specials.eos);
        assert!(*mask.last().unwrap());
        let out_tokens = tok.encode("cd e").token_ids.len();
        assert_eq!(mask.iter().filter(|&&m| m).count(), out_tokens + 1);
    }

    #[test]
    fn render_chat_unmasked_span_decodes_to_output() {
        let tok = ascii_model();
        let p = pair("ab", "cd e");
        let (ids, mask) = render_chat(&p, &ChatTemplate::default(), &tok, 128).unwrap();
        let out_ids: Vec<u32> = ids
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect();
        // drop the trailing eos (specials decode to nothing anyway)
        assert_eq!(tok.decode(&out_ids).unwrap(), "cd e");
    }

    #[test]
    fn render_chat_truncates_long_output() {
        let tok = ascii_model();
        let p = pair("ab", &"cd ".repeat(200));
        let max = 32;
        let (ids, mask) = render_chat(&p, &ChatTemplate::default(), &tok, max).unwrap();
        assert!(ids.len() <= max);
        assert_eq!(ids.len(), mask.len());
        assert_eq!(*ids.last().unwrap(), tok.special_ids().eos);
    }

    #[test]
    fn render_chat_rejects_oversized_prompt() {
        let tok = ascii_model();
        let p = pair(&"ab ".repeat(100), "cd");
        assert!(matches!(
            render_chat(&p, &ChatTemplate::default(), &tok, 16),
            Err(InstructError::PromptTooLong { .. })
        ));
    }
}
