//! Quality filtration. The scorer is pluggable; a deterministic heuristic
//! scorer built from surface statistics ships as default so the filtration
//! pathway works without a learned model.

use alloc::string::String;
use alloc::vec::Vec;
use hashbrown::HashSet;

use super::Document;

/// Five rubric sub-scores in [0, 1]; the aggregate is their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScore {
    pub informativeness: f64,
    pub usefulness: f64,
    pub grammar: f64,
    pub style: f64,
    pub safety: f64,
    pub aggregate: f64,
}

impl QualityScore {
    pub fn new(
        informativeness: f64,
        usefulness: f64,
        grammar: f64,
        style: f64,
        safety: f64,
    ) -> Self {
        let aggregate = (informativeness + usefulness + grammar + style + safety) / 5.0;
        QualityScore { informativeness, usefulness, grammar, style, safety, aggregate }
    }
}

pub trait QualityScorer {
    fn score(&self, paragraph: &str) -> QualityScore;
}

/// Trapezoid membership: 0 outside [lo0, hi0], 1 inside [lo1, hi1], linear in
/// between.
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

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Deterministic surface-statistics scorer: alphabetic ratio, word-repetition
/// penalty, word-count and word-length bands, and control-character density.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicScorer;

impl QualityScorer for HeuristicScorer {
    fn score(&self, paragraph: &str) -> QualityScore {
        let words: Vec<&str> = paragraph.split_whitespace().collect();
        let n_words = words.len();
        let chars: Vec<char> = paragraph.chars().collect();
        let non_ws = chars.iter().filter(|c| !c.is_whitespace()).count().max(1);

        let letters_punct = chars
            .iter()
            .filter(|c| {
                c.is_alphabetic() || matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '-' | '—'
                    | '(' | ')' | '«' | '»' | '"' | '\'')
            })
            .count();
        let grammar = clamp01((letters_punct as f64 / non_ws as f64 - 0.5) / 0.4);

        let distinct: HashSet<&str> = words.iter().copied().collect();
        let informativeness = if n_words == 0 {
            0.0
        } else {
            clamp01(distinct.len() as f64 / n_words as f64 * 1.2)
        };

        let usefulness = band(n_words as f64, 2.0, 6.0, 400.0, 1200.0);

        let avg_word_len = if n_words == 0 {
            0.0
        } else {
            words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / n_words as f64
        };
        let style = band(avg_word_len, 1.5, 3.0, 10.0, 16.0);

        let bad = chars
            .iter()
            .filter(|c| c.is_control() || **c == char::REPLACEMENT_CHARACTER)
            .count();
        let safety = clamp01(1.0 - 5.0 * bad as f64 / chars.len().max(1) as f64);

        QualityScore::new(informativeness, usefulness, grammar, style, safety)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSourceRow {
    pub source_tag: String,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    /// Aggregate-score histogram over 10 equal bins of [0, 1].
    pub histogram: [usize; 10],
    pub rows: Vec<FilterSourceRow>,
    pub threshold: f64,
}

impl FilterReport {
    fn bump(&mut self, tag: &str, kept: bool) {
        let row = match self.rows.iter_mut().find(|r| r.source_tag == tag) {
            Some(r) => r,
            None => {
                self.rows.push(FilterSourceRow {
                    source_tag: String::from(tag),
                    kept: 0,
                    dropped: 0,
                });
                self.rows.last_mut().unwrap()
            }
        };
        if kept {
            row.kept += 1;
        } else {
            row.dropped += 1;
        }
    }
}

/// Keeps paragraphs whose aggregate score reaches `threshold` (clamped to
/// [0, 1]). Survivor order matches input order.
pub fn filter(
    corpus: &[Document],
    scorer: &dyn QualityScorer,
    threshold: f64,
) -> (Vec<Document>, FilterReport) {
    let threshold = threshold.clamp(0.0, 1.0);
    let mut report =
        FilterReport { histogram: [0; 10], rows: Vec::new(), threshold };
    let mut out = Vec::new();
    for doc in corpus {
        let mut kept = Vec::new();
        for p in &doc.paragraphs {
            let score = scorer.score(p);
            let bin = ((score.aggregate * 10.0) as usize).min(9);
            report.histogram[bin] += 1;
            if score.aggregate >= threshold {
                kept.push(p.clone());
                report.bump(&doc.source_tag, true);
            } else {
                report.bump(&doc.source_tag, false);
            }
        }
        if !kept.is_empty() {
            out.push(Document { source_tag: doc.source_tag.clone(), paragraphs: kept });
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::string::ToString;
    use alloc::{format, vec};

    const CLEAN: &str =
        "Машинное обучение изменяет мир, и новые методы появляются каждый год.";

    fn noise(rng: &mut Rng) -> String {
        let glyphs: Vec<char> = "0123456789#$%^&*@~qwфы{}[]|\\<>".chars().collect();
        let len = 20 + rng.below(60);
        (0..len).map(|_| glyphs[rng.below(glyphs.len())]).collect()
    }

    #[test]
    fn clean_text_scores_high() {
        let s = HeuristicScorer.score(CLEAN);
        assert!(s.aggregate >= 0.7, "aggregate {}", s.aggregate);
    }

    #[test]
    fn aggregate_is_mean_of_subscores() {
        let s = HeuristicScorer.score(CLEAN);
        let mean =
            (s.informativeness + s.usefulness + s.grammar + s.style + s.safety) / 5.0;
        assert!((s.aggregate - mean).abs() < 1e-12);
    }

    #[test]
    fn threshold_zero_keeps_everything() {
        let corpus = [Document::new("x", vec![CLEAN.into(), "###".into()])];
        let (out, _) = filter(&corpus, &HeuristicScorer, 0.0);
        assert_eq!(out[0].paragraphs.len(), 2);
    }

    #[test]
    fn threshold_one_drops_imperfect() {
        // digits drag the grammar sub-score below 1
        let imperfect = "В 2024 году модель обучалась на 4 миллиардах токенов.";
        let corpus = [Document::new("x", vec![imperfect.into()])];
        let (out, report) = filter(&corpus, &HeuristicScorer, 1.0);
        assert!(out.is_empty());
        assert_eq!(report.rows[0].dropped, 1);
    }

    #[test]
    fn removes_planted_character_noise() {
        let mut rng = Rng::new(5);
        let mut paragraphs = Vec::new();
        for i in 0..100 {
            paragraphs.push(format!(
                "Сегодня номер {i} показывает, что чистый текст проходит фильтрацию без проблем."
            ));
        }
        let noise_count = 100;
        for _ in 0..noise_count {
            paragraphs.push(noise(&mut rng));
        }
        let corpus = [Document::new("mix", paragraphs)];
        let (out, report) = filter(&corpus, &HeuristicScorer, 0.5);
        let kept = &out[0].paragraphs;
        let kept_noise = kept.iter().filter(|p| !p.starts_with("Сегодня")).count();
        assert!(kept.iter().filter(|p| p.starts_with("Сегодня")).count() >= 95);
        assert!(
            kept_noise as f64 <= 0.05 * noise_count as f64,
            "kept {kept_noise} noise paragraphs"
        );
        assert_eq!(report.histogram.iter().sum::<usize>(), 200);
    }

    #[test]
    fn raising_threshold_shrinks_kept_set() {
        let mut rng = Rng::new(9);
        let mut paragraphs: Vec<String> = (0..50).map(|_| noise(&mut rng)).collect();
        paragraphs.push(CLEAN.to_string());
        let corpus = [Document::new("x", paragraphs)];
        let mut previous = usize::MAX;
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (out, _) = filter(&corpus, &HeuristicScorer, t);
            let kept: usize = out.iter().map(|d| d.paragraphs.len()).sum();
            assert!(kept <= previous);
            previous = kept;
        }
    }
}
