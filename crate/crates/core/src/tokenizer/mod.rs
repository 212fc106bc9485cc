//! Unigram-LM subword tokenizer: model type, Viterbi segmentation, decoding,
//! fertility analysis, and a binary serialization format.
//!
//! A vocabulary holds four special tokens, 256 byte-fallback tokens (one per
//! byte value, so every UTF-8 string is encodable), and learned subword pieces
//! with log-probabilities. Segmentation maximizes total log-probability;
//! ties break toward fewer tokens, then the lexicographically smallest id
//! sequence.

mod fertility;
mod serialize;
mod train;

pub use fertility::{fertility_report, FertilityReport, FertilityRow};
pub use train::{train_unigram, UnigramTrainer};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use hashbrown::HashMap;
use unicode_normalization::UnicodeNormalization;

pub const UNK_PIECE: &str = "<unk>";
pub const BOS_PIECE: &str = "<s>";
pub const EOS_PIECE: &str = "</s>";
pub const PAD_PIECE: &str = "<pad>";

/// 4 specials + 256 byte tokens: the smallest possible vocabulary.
pub const VOCAB_FLOOR: usize = 260;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenizerError {
    EmptyCorpus,
    VocabTooSmall { requested: usize, floor: usize },
    SeedVocabTooSmall,
    InvalidShrinkFactor(f64),
    DuplicatePiece(String),
    InvalidLogProb { piece: String, log_prob: f64 },
    MissingByteToken(u8),
    BadSpecialId(u32),
    IdOutOfRange { id: u32, vocab_size: usize },
    InvalidByteSequence,
    Format(&'static str),
}

impl fmt::Display for TokenizerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerError::EmptyCorpus => write!(f, "corpus is empty"),
            TokenizerError::VocabTooSmall { requested, floor } => {
                write!(f, "target vocab {requested} below floor {floor}")
            }
            TokenizerError::SeedVocabTooSmall => {
                write!(f, "seed vocab must exceed target vocab")
            }
            TokenizerError::InvalidShrinkFactor(s) => {
                write!(f, "shrink factor {s} outside (0, 1)")
            }
            TokenizerError::DuplicatePiece(p) => write!(f, "duplicate piece {p:?}"),
            TokenizerError::InvalidLogProb { piece, log_prob } => {
                write!(f, "piece {piece:?} has invalid log prob {log_prob}")
            }
            TokenizerError::MissingByteToken(b) => {
                write!(f, "byte fallback token for 0x{b:02X} missing")
            }
            TokenizerError::BadSpecialId(id) => write!(f, "special id {id} out of range"),
            TokenizerError::IdOutOfRange { id, vocab_size } => {
                write!(f, "id {id} out of range for vocab of {vocab_size}")
            }
            TokenizerError::InvalidByteSequence => {
                write!(f, "byte fallback run does not form valid UTF-8")
            }
            TokenizerError::Format(msg) => write!(f, "tokenizer file format error: {msg}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for TokenizerError {}

/// Text normalization applied before segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalization {
    pub nfkc: bool,
    pub lowercase: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        // NFKC on, lowercasing off: case distinctions are kept.
        Normalization { nfkc: true, lowercase: false }
    }
}

impl Normalization {
    pub fn apply(&self, text: &str) -> String {
        let mut s: String = if self.nfkc { text.nfkc().collect() } else { text.to_string() };
        if self.lowercase {
            s = s.chars().flat_map(|c| c.to_lowercase()).collect();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos: u32,
    pub eos: u32,
    pub unk: u32,
    pub pad: u32,
}

/// The surface string of the byte-fallback token for byte `b`.
pub fn byte_piece(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn parse_byte_piece(piece: &str) -> Option<u8> {
    let rest = piece.strip_prefix("<0x")?.strip_suffix('>')?;
    if rest.len() != 2 {
        return None;
    }
    u8::from_str_radix(rest, 16).ok()
}

/// A trained unigram vocabulary. Ids are contiguous from 0; pieces are unique;
/// every log-probability is finite and non-positive; all 256 byte-fallback
/// tokens are present.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    entries: Vec<(String, f64)>,
    special_ids: SpecialIds,
    normalization: Normalization,
    // derived
    byte_ids: [u32; 256],
    piece_to_id: HashMap<String, u32>,
    match_lengths: Vec<usize>,
}

impl TokenizerModel {
    /// Validates the invariants and builds the lookup tables.
    pub fn new(
        entries: Vec<(String, f64)>,
        special_ids: SpecialIds,
        normalization: Normalization,
    ) -> Result<Self, TokenizerError> {
        let n = entries.len() as u32;
        for &id in &[special_ids.bos, special_ids.eos, special_ids.unk, special_ids.pad] {
            if id >= n {
                return Err(TokenizerError::BadSpecialId(id));
            }
        }
        let mut piece_to_id: HashMap<String, u32> = HashMap::with_capacity(entries.len());
        let mut byte_ids = [u32::MAX; 256];
        for (id, (piece, log_prob)) in entries.iter().enumerate() {
            if !log_prob.is_finite() || *log_prob > 0.0 {
                return Err(TokenizerError::InvalidLogProb {
                    piece: piece.clone(),
                    log_prob: *log_prob,
                });
            }
            if piece_to_id.insert(piece.clone(), id as u32).is_some() {
                return Err(TokenizerError::DuplicatePiece(piece.clone()));
            }
            if let Some(b) = parse_byte_piece(piece) {
                byte_ids[b as usize] = id as u32;
            }
        }
        for b in 0..256 {
            if byte_ids[b] == u32::MAX {
                return Err(TokenizerError::MissingByteToken(b as u8));
            }
        }
        // Lengths (in bytes) at which a learned piece can match in text.
        // Specials and byte tokens never match text directly.
        let special_set = [special_ids.bos, special_ids.eos, special_ids.unk, special_ids.pad];
        let mut match_lengths: Vec<usize> = Vec::new();
        for (id, (piece, _)) in entries.iter().enumerate() {
            let id = id as u32;
            if special_set.contains(&id) || parse_byte_piece(piece).is_some() {
                continue;
            }
            if !match_lengths.contains(&piece.len()) {
                match_lengths.push(piece.len());
            }
        }
        match_lengths.sort_unstable();
        Ok(TokenizerModel {
            entries,
            special_ids,
            normalization,
            byte_ids,
            piece_to_id,
            match_lengths,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn special_ids(&self) -> SpecialIds {
        self.special_ids
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn byte_id(&self, b: u8) -> u32 {
        self.byte_ids[b as usize]
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|(p, _)| p.as_str())
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    fn is_special(&self, id: u32) -> bool {
        let s = self.special_ids;
        id == s.bos || id == s.eos || id == s.unk || id == s.pad
    }

    fn is_byte(&self, id: u32) -> bool {
        self.entries
            .get(id as usize)
            .is_some_and(|(p, _)| parse_byte_piece(p).is_some())
    }

    /// Viterbi maximum-log-probability segmentation of `text` (after
    /// normalization). Total: every string is encodable via byte fallback.
    pub fn encode(&self, text: &str) -> Segmentation {
        let normalized = self.normalization.apply(text);
        let bytes = normalized.as_bytes();
        let n = bytes.len();
        if n == 0 {
            return Segmentation { token_ids: Vec::new(), offsets: Vec::new() };
        }

        // Right-to-left DP so that tie-breaking by "lexicographically smallest
        // id sequence" reduces to comparing the first token id at each suffix.
        #[derive(Clone, Copy)]
        struct Cell {
            log_prob: f64,
            count: usize,
            piece_len: usize,
            id: u32,
        }
        let mut dp: Vec<Cell> =
            vec![Cell { log_prob: f64::NEG_INFINITY, count: 0, piece_len: 0, id: 0 }; n + 1];
        dp[n] = Cell { log_prob: 0.0, count: 0, piece_len: 0, id: 0 };

        for i in (0..n).rev() {
            let mut best: Option<Cell> = None;
            let consider = |id: u32, lp: f64, len: usize, best: &mut Option<Cell>| {
                let tail = dp[i + len];
                if tail.log_prob == f64::NEG_INFINITY {
                    return;
                }
                let cand = Cell {
                    log_prob: lp + tail.log_prob,
                    count: tail.count + 1,
                    piece_len: len,
                    id,
                };
                let better = match best {
                    None => true,
                    Some(b) => {
                        cand.log_prob > b.log_prob
                            || (cand.log_prob == b.log_prob
                                && (cand.count < b.count
                                    || (cand.count == b.count && cand.id < b.id)))
                    }
                };
                if better {
                    *best = Some(cand);
                }
            };
            for &len in &self.match_lengths {
                if i + len > n {
                    break;
                }
                if let Ok(s) = core::str::from_utf8(&bytes[i..i + len]) {
                    if let Some(&id) = self.piece_to_id.get(s) {
                        if !self.is_special(id) && !self.is_byte(id) {
                            let lp = self.entries[id as usize].1;
                            consider(id, lp, len, &mut best);
                        }
                    }
                }
            }
            // byte fallback edge
            let bid = self.byte_ids[bytes[i] as usize];
            consider(bid, self.entries[bid as usize].1, 1, &mut best);
            dp[i] = best.expect("byte fallback always yields a path");
        }

        let mut token_ids = Vec::with_capacity(dp[0].count);
        let mut offsets = Vec::with_capacity(dp[0].count);
        let mut pos = 0;
        while pos < n {
            let cell = dp[pos];
            token_ids.push(cell.id);
            offsets.push((pos, pos + cell.piece_len));
            pos += cell.piece_len;
        }
        Segmentation { token_ids, offsets }
    }

    /// Inverse of `encode` up to normalization: `decode(encode(x)) ==
    /// normalize(x)`. Adjacent byte-fallback tokens are re-fused into UTF-8;
    /// special tokens decode to nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut pending: Vec<u8> = Vec::new();
        let flush = |pending: &mut Vec<u8>, out: &mut String| -> Result<(), TokenizerError> {
            if !pending.is_empty() {
                let s = core::str::from_utf8(pending)
                    .map_err(|_| TokenizerError::InvalidByteSequence)?;
                out.push_str(s);
                pending.clear();
            }
            Ok(())
        };
        for &id in ids {
            if id as usize >= self.entries.len() {
                return Err(TokenizerError::IdOutOfRange { id, vocab_size: self.entries.len() });
            }
            if let Some(b) = parse_byte_piece(&self.entries[id as usize].0) {
                pending.push(b);
                continue;
            }
            flush(&mut pending, &mut out)?;
            if !self.is_special(id) {
                out.push_str(&self.entries[id as usize].0);
            }
        }
        flush(&mut pending, &mut out)?;
        Ok(out)
    }
}

/// Result of segmenting one text: token ids plus byte offsets into the
/// normalized text. Offsets are contiguous, non-overlapping, and cover the
/// full normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub token_ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Hand-assembled model for tests and fixtures: given learned pieces, lays out
/// specials at ids 0..4, byte tokens at 4..260, learned pieces after.
pub fn model_from_pieces(
    pieces: &[(&str, f64)],
    normalization: Normalization,
) -> Result<TokenizerModel, TokenizerError> {
    let mut entries: Vec<(String, f64)> = Vec::with_capacity(VOCAB_FLOOR + pieces.len());
    entries.push((UNK_PIECE.to_string(), 0.0));
    entries.push((BOS_PIECE.to_string(), 0.0));
    entries.push((EOS_PIECE.to_string(), 0.0));
    entries.push((PAD_PIECE.to_string(), 0.0));
    for b in 0..=255u8 {
        entries.push((byte_piece(b), BYTE_FALLBACK_LOG_PROB));
    }
    for (p, lp) in pieces {
        entries.push((p.to_string(), *lp));
    }
    TokenizerModel::new(
        entries,
        SpecialIds { unk: 0, bos: 1, eos: 2, pad: 3 },
        normalization,
    )
}

/// Log-probability assigned to byte-fallback tokens in hand-assembled models.
/// Low enough that any learned piece is preferred.
pub const BYTE_FALLBACK_LOG_PROB: f64 = -30.0;


#[cfg(test)]
pub mod test_support {
    use super::*;

    /// Small hand-assembled model for cross-module tests: a few ascii pieces,
    /// everything else served by byte fallback.
    pub fn ascii_model() -> TokenizerModel {
        model_from_pieces(
            &[
                ("ab", -1.0),
                ("cd", -1.2),
                ("e", -1.5),
                (" ", -0.5),
                ("[INST]", -2.0),
                ("[/INST]", -2.0),
            ],
            Normalization::default(),
        )
        .unwrap()
    }
}
