//! Vocabulary transplant: map each token of a new vocabulary onto the old
//! one, then initialize new embedding matrices (and LM-head rows) by copying
//! kept rows and averaging the rows of each composite token's pieces.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::tokenizer::TokenizerModel;

#[derive(Debug, Clone, PartialEq)]
pub enum TransplantError {
    DimensionMismatch { expected: usize, got: usize },
    OldIdOutOfRange { id: u32, rows: usize },
    NonFiniteValue,
}

impl fmt::Display for TransplantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransplantError::DimensionMismatch { expected, got } => {
                write!(f, "matrix row count {got} does not match vocab size {expected}")
            }
            TransplantError::OldIdOutOfRange { id, rows } => {
                write!(f, "mapping references old id {id} but matrix has {rows} rows")
            }
            TransplantError::NonFiniteValue => write!(f, "matrix contains a non-finite value"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for TransplantError {}

/// How one new-vocabulary token maps onto the old vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenOrigin {
    /// Identical piece string exists in the old vocabulary.
    Kept(u32),
    /// New piece; decomposed by the old tokenizer into these old ids.
    Composite(Vec<u32>),
}

/// Old-to-new correspondence covering every new id exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMapping {
    origins: Vec<TokenOrigin>,
}

impl VocabMapping {
    pub fn origins(&self) -> &[TokenOrigin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.origins.iter().filter(|o| matches!(o, TokenOrigin::Kept(_))).count()
    }
}

/// Row-major real matrix carrying one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix { rows, dim, values: vec![0.0; rows * dim] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }
}

/// For every new token: `Kept(old_id)` when the identical piece exists in the
/// old vocabulary, otherwise `Composite` of the old tokenizer's segmentation
/// of the piece's surface string. Byte-fallback guarantees the composite list
/// is never empty. Special tokens map onto the old specials.
pub fn build_vocab_mapping(old_tok: &TokenizerModel, new_tok: &TokenizerModel) -> VocabMapping {
    let old_specials = old_tok.special_ids();
    let new_specials = new_tok.special_ids();
    let mut origins = Vec::with_capacity(new_tok.vocab_size());
    for (new_id, (piece, _)) in new_tok.entries().iter().enumerate() {
        let new_id = new_id as u32;
        let origin = if new_id == new_specials.bos {
            TokenOrigin::Kept(old_specials.bos)
        } else if new_id == new_specials.eos {
            TokenOrigin::Kept(old_specials.eos)
        } else if new_id == new_specials.unk {
            TokenOrigin::Kept(old_specials.unk)
        } else if new_id == new_specials.pad {
            TokenOrigin::Kept(old_specials.pad)
        } else if let Some(old_id) = old_tok.id_of(piece) {
            TokenOrigin::Kept(old_id)
        } else {
            let seg = old_tok.encode(piece);
            debug_assert!(!seg.is_empty());
            TokenOrigin::Composite(seg.token_ids)
        };
        origins.push(origin);
    }
    VocabMapping { origins }
}

/// Transplants `old` into a matrix for the new vocabulary: kept rows are
/// copied bit-exactly, composite rows are the arithmetic mean of their piece
/// rows. Applies identically to input embeddings, LM-head weight rows, and
/// (dim = 1) bias vectors.
pub fn transplant_matrix(
    mapping: &VocabMapping,
    old: &EmbeddingMatrix,
) -> Result<EmbeddingMatrix, TransplantError> {
    if old.values.len() != old.rows * old.dim {
        return Err(TransplantError::DimensionMismatch {
            expected: old.rows * old.dim,
            got: old.values.len(),
        });
    }
    if old.values.iter().any(|v| !v.is_finite()) {
        return Err(TransplantError::NonFiniteValue);
    }
    let mut out = EmbeddingMatrix::zeros(mapping.len(), old.dim);
    for (new_id, origin) in mapping.origins().iter().enumerate() {
        match origin {
            TokenOrigin::Kept(old_id) => {
                let old_id = *old_id as usize;
                if old_id >= old.rows {
                    return Err(TransplantError::OldIdOutOfRange {
                        id: old_id as u32,
                        rows: old.rows,
                    });
                }
                out.row_mut(new_id).copy_from_slice(old.row(old_id));
            }
            TokenOrigin::Composite(ids) => {
                let dst = out.row_mut(new_id);
                for &old_id in ids {
                    let old_id = old_id as usize;
                    if old_id >= old.rows {
                        return Err(TransplantError::OldIdOutOfRange {
                            id: old_id as u32,
                            rows: old.rows,
                        });
                    }
                    for (d, v) in dst.iter_mut().zip(old.row(old_id)) {
                        *d += v;
                    }
                }
                let inv = 1.0 / ids.len() as f64;
                for d in dst.iter_mut() {
                    *d *= inv;
                }
            }
        }
    }
    Ok(out)
}
