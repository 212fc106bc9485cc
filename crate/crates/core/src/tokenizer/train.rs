//! Unigram-LM tokenizer training: seed vocabulary from frequent substrings,
//! EM over segmentation lattices, and likelihood-loss pruning down to the
//! target size.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use hashbrown::HashMap;

use crate::math;

use super::{
    byte_piece, Normalization, SpecialIds, TokenizerError, TokenizerModel, BOS_PIECE, EOS_PIECE,
    PAD_PIECE, UNK_PIECE, VOCAB_FLOOR,
};

/// Pieces whose expected count falls below this are dropped during EM.
const MIN_EXPECTED: f64 = 0.5;

/// Trains a unigram tokenizer with the default normalization and piece-length
/// cap. Training is fully deterministic; `seed` is recorded in the interface
/// for forward compatibility but the algorithm itself draws no random numbers.
pub fn train_unigram(
    corpus: &[&str],
    target_vocab: usize,
    seed_vocab: usize,
    shrink_factor: f64,
    em_iters: usize,
    seed: u64,
) -> Result<TokenizerModel, TokenizerError> {
    UnigramTrainer {
        target_vocab,
        seed_vocab,
        shrink_factor,
        em_iters,
        seed,
        ..UnigramTrainer::default()
    }
    .train(corpus)
}

#[derive(Debug, Clone)]
pub struct UnigramTrainer {
    pub target_vocab: usize,
    pub seed_vocab: usize,
    pub shrink_factor: f64,
    pub em_iters: usize,
    pub seed: u64,
    pub normalization: Normalization,
    /// Maximum piece length in characters for seed candidates.
    pub max_piece_chars: usize,
}

impl Default for UnigramTrainer {
    fn default() -> Self {
        UnigramTrainer {
            target_vocab: 40_000,
            seed_vocab: 200_000,
            shrink_factor: 0.75,
            em_iters: 2,
            seed: 0,
            normalization: Normalization::default(),
            max_piece_chars: 16,
        }
    }
}

impl UnigramTrainer {
    pub fn train(&self, corpus: &[&str]) -> Result<TokenizerModel, TokenizerError> {
        if self.target_vocab < VOCAB_FLOOR {
            return Err(TokenizerError::VocabTooSmall {
                requested: self.target_vocab,
                floor: VOCAB_FLOOR,
            });
        }
        if self.seed_vocab <= self.target_vocab {
            return Err(TokenizerError::SeedVocabTooSmall);
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(TokenizerError::InvalidShrinkFactor(self.shrink_factor));
        }

        let sentences = self.collect_sentences(corpus)?;
        let mut pieces = self.seed_pieces(&sentences);
        let n_chars = pieces.iter().filter(|(p, _)| p.chars().count() == 1).count();
        let learned_budget = self.target_vocab - VOCAB_FLOOR;
        // Single chars stay in the working set for lattice connectivity, so
        // budget prune slots for them on top of the learned target; finalize
        // truncates to the exact budget by probability.
        let stop_at = learned_budget + n_chars;

        loop {
            for _ in 0..self.em_iters.max(1) {
                self.em_step(&sentences, &mut pieces);
            }
            if pieces.len() <= stop_at {
                break;
            }
            self.prune(&sentences, &mut pieces, stop_at);
        }

        self.finalize(pieces, learned_budget)
    }

    /// Normalized, line-split, deduplicated sentences with counts.
    fn collect_sentences(&self, corpus: &[&str]) -> Result<Vec<(String, u64)>, TokenizerError> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for doc in corpus {
            let normalized = self.normalization.apply(doc);
            for line in normalized.split('\n') {
                if line.trim().is_empty() {
                    continue;
                }
                *counts.entry(line.to_string()).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut sentences: Vec<(String, u64)> = counts.into_iter().collect();
        sentences.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        Ok(sentences)
    }

    /// Seed vocabulary: every character of the corpus, plus the most frequent
    /// within-word substrings (and space-prefixed whole words) up to
    /// `max_piece_chars`, scored by count * byte length.
    fn seed_pieces(&self, sentences: &[(String, u64)]) -> Vec<(String, f64)> {
        let mut char_counts: HashMap<char, u64> = HashMap::new();
        let mut word_counts: HashMap<&str, u64> = HashMap::new();
        for (sent, cnt) in sentences {
            for c in sent.chars() {
                *char_counts.entry(c).or_insert(0) += cnt;
            }
            for word in sent.split_whitespace() {
                *word_counts.entry(word).or_insert(0) += cnt;
            }
        }

        let mut substr_counts: HashMap<&str, u64> = HashMap::new();
        let mut spaced_counts: HashMap<String, u64> = HashMap::new();
        for (&word, &cnt) in &word_counts {
            let boundaries: Vec<usize> =
                word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
            let nchars = boundaries.len() - 1;
            for i in 0..nchars {
                let max_j = (i + self.max_piece_chars).min(nchars);
                for j in (i + 2)..=max_j {
                    *substr_counts.entry(&word[boundaries[i]..boundaries[j]]).or_insert(0) +=
                        cnt;
                }
            }
            if nchars + 1 <= self.max_piece_chars {
                let mut spaced = String::with_capacity(word.len() + 1);
                spaced.push(' ');
                spaced.push_str(word);
                *spaced_counts.entry(spaced).or_insert(0) += cnt;
            }
        }

        let usable = |p: &str| {
            !matches!(p, UNK_PIECE | BOS_PIECE | EOS_PIECE | PAD_PIECE)
                && super::parse_byte_piece(p).is_none()
        };

        let mut scored: Vec<(String, u64)> = substr_counts
            .into_iter()
            .map(|(p, c)| (p.to_string(), c))
            .chain(spaced_counts)
            .filter(|(p, _)| usable(p))
            .map(|(p, c)| {
                let score = c * p.len() as u64;
                (p, score)
            })
            .collect();
        scored.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut chars: Vec<(String, u64)> = char_counts
            .into_iter()
            .map(|(c, n)| (c.to_string(), n))
            .filter(|(p, _)| usable(p))
            .collect();
        chars.sort_unstable_by(|a, b| a.0.cmp(&b.0));

        let budget = self.seed_vocab.saturating_sub(chars.len());
        scored.truncate(budget);
        let total: f64 = chars.iter().chain(scored.iter()).map(|(_, c)| *c as f64).sum();
        let log_total = math::ln(total.max(1.0));
        chars
            .into_iter()
            .chain(scored)
            .map(|(p, c)| (p, math::ln(c as f64) - log_total))
            .collect()
    }

    /// One EM iteration: forward-backward expected piece counts over every
    /// sentence, then a Bayesianized M-step (digamma normalization). Pieces
    /// whose expected count vanishes are dropped; single characters are kept
    /// so every lattice stays connected.
    fn em_step(&self, sentences: &[(String, u64)], pieces: &mut Vec<(String, f64)>) {
        let table = PieceTable::build(pieces);
        let mut expected = vec![0.0f64; pieces.len()];

        for (sent, cnt) in sentences {
            let bytes = sent.as_bytes();
            let n = bytes.len();
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            for i in 0..n {
                if alpha[i] == f64::NEG_INFINITY {
                    continue;
                }
                table.edges_at(sent, i, |idx, lp, end| {
                    alpha[end] = math::log_sum_exp(alpha[end], alpha[i] + lp);
                    let _ = idx;
                });
            }
            beta[n] = 0.0;
            for i in (0..n).rev() {
                table.edges_at(sent, i, |_idx, lp, end| {
                    if beta[end] != f64::NEG_INFINITY {
                        beta[i] = math::log_sum_exp(beta[i], lp + beta[end]);
                    }
                });
            }
            let z = alpha[n];
            if z == f64::NEG_INFINITY {
                continue; // unreachable while all chars are pieces
            }
            for i in 0..n {
                if alpha[i] == f64::NEG_INFINITY {
                    continue;
                }
                table.edges_at(sent, i, |idx, lp, end| {
                    if beta[end] != f64::NEG_INFINITY {
                        expected[idx] += *cnt as f64 * math::exp(alpha[i] + lp + beta[end] - z);
                    }
                });
            }
        }

        let mut kept: Vec<(String, f64)> = Vec::with_capacity(pieces.len());
        let mut counts: Vec<f64> = Vec::with_capacity(pieces.len());
        for (idx, (piece, _)) in pieces.iter().enumerate() {
            let single_char = piece.chars().count() == 1;
            let e = expected[idx];
            if e < MIN_EXPECTED && !single_char {
                continue;
            }
            kept.push((piece.clone(), 0.0));
            counts.push(e.max(MIN_EXPECTED));
        }
        let total: f64 = counts.iter().sum();
        let dg_total = math::digamma(total);
        for (entry, &c) in kept.iter_mut().zip(&counts) {
            entry.1 = (math::digamma(c) - dg_total).min(0.0);
        }
        drop(table);
        *pieces = kept;
    }

    /// Removes the pieces whose deletion costs the likelihood the least,
    /// shrinking toward `stop_at` by `shrink_factor` per round. For each
    /// multi-character piece the cost is its Viterbi frequency times the
    /// log-probability gap to segmenting it out of the remaining vocabulary.
    fn prune(&self, sentences: &[(String, u64)], pieces: &mut Vec<(String, f64)>, stop_at: usize) {
        let table = PieceTable::build(pieces);
        let mut freq = vec![0.0f64; pieces.len()];
        for (sent, cnt) in sentences {
            if let Some(path) = table.viterbi(sent, None) {
                for idx in path {
                    freq[idx] += *cnt as f64;
                }
            }
        }

        let keep_total =
            stop_at.max((pieces.len() as f64 * self.shrink_factor) as usize).max(1);

        let mut chars: Vec<usize> = Vec::new();
        let mut candidates: Vec<(usize, f64)> = Vec::new();
        for (idx, (piece, lp)) in pieces.iter().enumerate() {
            if piece.chars().count() == 1 {
                chars.push(idx);
                continue;
            }
            if freq[idx] == 0.0 {
                continue; // never on a Viterbi path: free to remove
            }
            let alt = table
                .viterbi(piece, Some(idx))
                .map(|path| path.iter().map(|&j| pieces[j].1).sum::<f64>())
                .unwrap_or(f64::NEG_INFINITY);
            candidates.push((idx, freq[idx] * (lp - alt)));
        }
        candidates.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap().then_with(|| pieces[a.0].0.cmp(&pieces[b.0].0))
        });

        let mut keep_idx: Vec<usize> = chars;
        for (idx, _) in candidates {
            if keep_idx.len() >= keep_total {
                break;
            }
            keep_idx.push(idx);
        }
        keep_idx.sort_unstable();
        let kept: Vec<(String, f64)> =
            keep_idx.into_iter().map(|i| pieces[i].clone()).collect();
        drop(table);
        *pieces = kept;
    }

    /// Assembles the final model: specials at ids 0..4, byte tokens at 4..260,
    /// then the top `learned_budget` pieces by probability, renormalized.
    fn finalize(
        &self,
        mut pieces: Vec<(String, f64)>,
        learned_budget: usize,
    ) -> Result<TokenizerModel, TokenizerError> {
        pieces.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        pieces.truncate(learned_budget);

        if !pieces.is_empty() {
            let mut lse = f64::NEG_INFINITY;
            for (_, lp) in &pieces {
                lse = math::log_sum_exp(lse, *lp);
            }
            for (_, lp) in &mut pieces {
                *lp = (*lp - lse).min(0.0);
            }
        }
        let byte_lp = pieces
            .iter()
            .map(|(_, lp)| *lp)
            .fold(f64::INFINITY, f64::min)
            .min(-10.0)
            - 10.0;

        let mut entries: Vec<(String, f64)> =
            Vec::with_capacity(VOCAB_FLOOR + pieces.len());
        entries.push((UNK_PIECE.to_string(), 0.0));
        entries.push((BOS_PIECE.to_string(), 0.0));
        entries.push((EOS_PIECE.to_string(), 0.0));
        entries.push((PAD_PIECE.to_string(), 0.0));
        for b in 0..=255u8 {
            entries.push((byte_piece(b), byte_lp));
        }
        entries.extend(pieces);

        TokenizerModel::new(
            entries,
            SpecialIds { unk: 0, bos: 1, eos: 2, pad: 3 },
            self.normalization,
        )
    }
}

/// Matching table over working pieces during training: piece string -> (index,
/// log prob), plus the sorted set of piece byte lengths.
struct PieceTable<'a> {
    map: HashMap<&'a str, (usize, f64)>,
    lengths: Vec<usize>,
}

impl<'a> PieceTable<'a> {
    fn build(pieces: &'a [(String, f64)]) -> Self {
        let mut map = HashMap::with_capacity(pieces.len());
        let mut lengths: Vec<usize> = Vec::new();
        for (idx, (piece, lp)) in pieces.iter().enumerate() {
            map.insert(piece.as_str(), (idx, *lp));
            if !lengths.contains(&piece.len()) {
                lengths.push(piece.len());
            }
        }
        lengths.sort_unstable();
        PieceTable { map, lengths }
    }

    /// Calls `f(piece_index, log_prob, end_pos)` for every piece matching the
    /// text at byte position `i`.
    fn edges_at(&self, text: &str, i: usize, mut f: impl FnMut(usize, f64, usize)) {
        let bytes = text.as_bytes();
        for &len in &self.lengths {
            let end = i + len;
            if end > bytes.len() {
                break;
            }
            if let Ok(s) = core::str::from_utf8(&bytes[i..end]) {
                if let Some(&(idx, lp)) = self.map.get(s) {
                    f(idx, lp, end);
                }
            }
        }
    }

    /// Best segmentation of `text`, optionally excluding one piece index.
    /// Returns the piece indices on the path, or None if no path exists.
    fn viterbi(&self, text: &str, exclude: Option<usize>) -> Option<Vec<usize>> {
        let n = text.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back: Vec<Option<(usize, usize)>> = vec![None; n + 1]; // (piece idx, start)
        best[0] = 0.0;
        for i in 0..n {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            self.edges_at(text, i, |idx, lp, end| {
                if Some(idx) == exclude {
                    return;
                }
                let cand = best[i] + lp;
                if cand > best[end] {
                    best[end] = cand;
                    back[end] = Some((idx, i));
                }
            });
        }
        if best[n] == f64::NEG_INFINITY {
            return None;
        }
        let mut path = Vec::new();
        let mut pos = n;
        while pos > 0 {
            let (idx, start) = back[pos].unwrap();
            path.push(idx);
            pos = start;
        }
        path.reverse();
        Some(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::string::String;

    fn junk_corpus(reps: usize) -> String {
        // repeated "abc " interleaved with uniform random latin characters
        let mut rng = Rng::new(99);
        let mut s = String::new();
        for i in 0..reps {
            s.push_str("abc ");
            if i % 4 == 3 {
                for _ in 0..3 {
                    s.push((b'd' + rng.below(20) as u8) as char);
                }
                s.push(' ');
            }
            if i % 16 == 15 {
                s.push('\n');
            }
        }
        s
    }

    #[test]
    fn frequent_substring_survives_pruning() {
        let corpus = junk_corpus(1000);
        let model = train_unigram(&[&corpus], 280, 600, 0.75, 2, 0).unwrap();
        assert!(model.id_of("abc").is_some(), "expected 'abc' to survive pruning");
        let seg = model.encode("abc");
        assert_eq!(seg.token_ids.len(), 1);
    }

    #[test]
    fn floor_vocab_is_bytes_plus_specials() {
        let corpus = junk_corpus(50);
        let model = train_unigram(&[&corpus], VOCAB_FLOOR, 400, 0.75, 2, 0).unwrap();
        assert_eq!(model.vocab_size(), VOCAB_FLOOR);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = junk_corpus(200);
        let a = train_unigram(&[&corpus], 300, 600, 0.75, 2, 7).unwrap();
        let b = train_unigram(&[&corpus], 300, 600, 0.75, 2, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            train_unigram(&["ab"], 10, 600, 0.75, 2, 0),
            Err(TokenizerError::VocabTooSmall { .. })
        ));
        assert!(matches!(
            train_unigram(&["ab"], 300, 300, 0.75, 2, 0),
            Err(TokenizerError::SeedVocabTooSmall)
        ));
        assert!(matches!(
            train_unigram(&[], 300, 600, 0.75, 2, 0),
            Err(TokenizerError::EmptyCorpus)
        ));
        assert!(matches!(
            train_unigram(&["ab"], 300, 600, 1.5, 2, 0),
            Err(TokenizerError::InvalidShrinkFactor(_))
        ));
    }

    #[test]
    fn exact_target_vocab_size() {
        let corpus = junk_corpus(500);
        let model = train_unigram(&[&corpus], 270, 600, 0.75, 2, 0).unwrap();
        assert_eq!(model.vocab_size(), 270);
    }
}
