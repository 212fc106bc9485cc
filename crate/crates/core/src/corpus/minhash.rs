//! MinHash signatures over byte shingles plus banded LSH for near-duplicate
//! paragraph removal. The expected fraction of matching signature slots
//! equals the Jaccard similarity of the shingle sets.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use hashbrown::{HashMap, HashSet};

use crate::rng::Rng;

use super::Document;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DedupError {
    NoHashes,
    InvalidBanding { num_hashes: usize, bands: usize },
}

impl fmt::Display for DedupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DedupError::NoHashes => write!(f, "num_hashes must be at least 1"),
            DedupError::InvalidBanding { num_hashes, bands } => {
                write!(f, "bands {bands} must evenly divide num_hashes {num_hashes}")
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for DedupError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub k: usize,
}

impl MinHashSignature {
    /// Fraction of matching slots: an estimator of shingle-set Jaccard.
    pub fn similarity(&self, other: &MinHashSignature) -> f64 {
        let matches =
            self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        matches as f64 / self.values.len() as f64
    }
}

/// Collapses whitespace runs to single spaces and trims, so formatting
/// differences do not defeat duplicate detection.
fn normalize(paragraph: &str) -> String {
    let mut out = String::with_capacity(paragraph.len());
    let mut last_ws = true;
    for c in paragraph.chars() {
        if c.is_whitespace() {
            if !last_ws {
                out.push(' ');
            }
            last_ws = true;
        } else {
            out.push(c);
            last_ws = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn shingle_hashes(text: &str, k: usize) -> Vec<u64> {
    let bytes = text.as_bytes();
    let fnv = |s: &[u8]| {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for &b in s {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    };
    let mut set: HashSet<u64> = HashSet::new();
    if bytes.len() < k {
        // shorter than one shingle: the whole text is the single shingle
        set.insert(fnv(bytes));
    } else {
        for w in bytes.windows(k) {
            set.insert(fnv(w));
        }
    }
    let mut v: Vec<u64> = set.into_iter().collect();
    v.sort_unstable();
    v
}

/// MinHash signature of the k-byte shingle set of the normalized paragraph.
/// Deterministic for (text, k, num_hashes, seed).
pub fn minhash(
    paragraph: &str,
    k: usize,
    num_hashes: usize,
    seed: u64,
) -> Result<MinHashSignature, DedupError> {
    if num_hashes == 0 {
        return Err(DedupError::NoHashes);
    }
    let shingles = shingle_hashes(&normalize(paragraph), k.max(1));
    let mut rng = Rng::new(seed);
    let mut values = Vec::with_capacity(num_hashes);
    for _ in 0..num_hashes {
        let salt = rng.next_u64();
        let min = shingles.iter().map(|&s| mix(s ^ salt)).min().unwrap_or(salt);
        values.push(min);
    }
    Ok(MinHashSignature { values, k: k.max(1) })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupSourceRow {
    pub source_tag: String,
    pub kept: usize,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DedupReport {
    pub rows: Vec<DedupSourceRow>,
}

impl DedupReport {
    pub fn total_removed(&self) -> usize {
        self.rows.iter().map(|r| r.removed).sum()
    }

    pub(crate) fn bump(&mut self, tag: &str, kept: bool) {
        let row = match self.rows.iter_mut().find(|r| r.source_tag == tag) {
            Some(r) => r,
            None => {
                self.rows.push(DedupSourceRow {
                    source_tag: String::from(tag),
                    kept: 0,
                    removed: 0,
                });
                self.rows.last_mut().unwrap()
            }
        };
        if kept {
            row.kept += 1;
        } else {
            row.removed += 1;
        }
    }
}

/// Core of near-duplicate removal: for texts in order, decides which are
/// first occurrences (true) and which duplicate an earlier kept text (false).
/// Candidate pairs come from LSH banding; a candidate is a duplicate when its
/// signature similarity reaches `threshold`.
pub(crate) fn dedup_keep_flags<'a>(
    texts: impl Iterator<Item = &'a str>,
    threshold: f64,
    k: usize,
    num_hashes: usize,
    bands: usize,
    seed: u64,
) -> Result<Vec<bool>, DedupError> {
    if num_hashes == 0 {
        return Err(DedupError::NoHashes);
    }
    if bands == 0 || num_hashes % bands != 0 {
        return Err(DedupError::InvalidBanding { num_hashes, bands });
    }
    let rows_per_band = num_hashes / bands;

    // band hash -> indices of kept signatures sharing that band
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let mut kept_signatures: Vec<MinHashSignature> = Vec::new();
    let mut flags = Vec::new();

    for text in texts {
        let sig = minhash(text, k, num_hashes, seed)?;
        let band_keys: Vec<(usize, u64)> = (0..bands)
            .map(|b| {
                let slice = &sig.values[b * rows_per_band..(b + 1) * rows_per_band];
                let mut h = 0xCBF2_9CE4_8422_2325u64;
                for v in slice {
                    h = mix(h ^ v);
                }
                (b, h)
            })
            .collect();

        let mut duplicate = false;
        let mut seen: HashSet<usize> = HashSet::new();
        'check: for key in &band_keys {
            if let Some(candidates) = buckets.get(key) {
                for &idx in candidates {
                    if seen.insert(idx)
                        && sig.similarity(&kept_signatures[idx]) >= threshold
                    {
                        duplicate = true;
                        break 'check;
                    }
                }
            }
        }

        if !duplicate {
            let idx = kept_signatures.len();
            for key in band_keys {
                buckets.entry(key).or_default().push(idx);
            }
            kept_signatures.push(sig);
        }
        flags.push(!duplicate);
    }
    Ok(flags)
}

/// Removes near-duplicate paragraphs across the whole corpus. Paragraphs are
/// processed in corpus order; among a duplicate group only the first
/// occurrence survives.
pub fn dedup(
    corpus: &[Document],
    threshold: f64,
    k: usize,
    num_hashes: usize,
    bands: usize,
    seed: u64,
) -> Result<(Vec<Document>, DedupReport), DedupError> {
    let flags = dedup_keep_flags(
        corpus.iter().flat_map(|d| d.paragraphs.iter().map(String::as_str)),
        threshold,
        k,
        num_hashes,
        bands,
        seed,
    )?;
    let mut report = DedupReport::default();
    let mut out: Vec<Document> = Vec::new();
    let mut flag_iter = flags.into_iter();
    for doc in corpus {
        let mut kept_paragraphs: Vec<String> = Vec::new();
        for paragraph in &doc.paragraphs {
            let keep = flag_iter.next().unwrap();
            report.bump(&doc.source_tag, keep);
            if keep {
                kept_paragraphs.push(paragraph.clone());
            }
        }
        if !kept_paragraphs.is_empty() {
            out.push(Document { source_tag: doc.source_tag.clone(), paragraphs: kept_paragraphs });
        }
    }
    Ok((out, report))
}
