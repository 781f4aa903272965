//! Statistical memory inspection with a reference character-trigram model.
//!
//! The model is trained offline on the committed benign corpus; each memory
//! entry is scored as mean negative log probability per character. Entries
//! are flagged when the score leaves the configured band on either side:
//! unusually predictable text looks like a replayed known payload, and
//! unusually surprising text looks like adversarial noise.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Laplace-smoothed character trigram model.
#[derive(Debug, Clone, Default)]
pub struct TrigramModel {
    trigram_counts: HashMap<(char, char, char), u64>,
    bigram_counts: HashMap<(char, char), u64>,
    vocab_size: u64,
}

impl TrigramModel {
    /// Train from corpus texts. Deterministic: same corpus, same model.
    pub fn train<'a, I: IntoIterator<Item = &'a str>>(corpus: I) -> Self {
        let mut trigram_counts = HashMap::new();
        let mut bigram_counts = HashMap::new();
        let mut vocab = std::collections::HashSet::new();
        for text in corpus {
            let chars: Vec<char> = text.chars().collect();
            for c in &chars {
                vocab.insert(*c);
            }
            for window in chars.windows(3) {
                *trigram_counts
                    .entry((window[0], window[1], window[2]))
                    .or_insert(0u64) += 1;
                *bigram_counts.entry((window[0], window[1])).or_insert(0u64) += 1;
            }
        }
        Self {
            trigram_counts,
            bigram_counts,
            // One slot reserved for unseen characters.
            vocab_size: vocab.len() as u64 + 1,
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.bigram_counts.is_empty()
    }

    /// Mean negative log probability per character. Texts with fewer than
    /// three characters carry no trigram evidence and score 0.
    pub fn score(&self, text: &str) -> f64 {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() < 3 {
            return 0.0;
        }
        let mut total_nll = 0.0;
        let mut positions = 0u64;
        for window in chars.windows(3) {
            let tri = self
                .trigram_counts
                .get(&(window[0], window[1], window[2]))
                .copied()
                .unwrap_or(0);
            let bi = self
                .bigram_counts
                .get(&(window[0], window[1]))
                .copied()
                .unwrap_or(0);
            let p = (tri as f64 + 1.0) / (bi as f64 + self.vocab_size as f64);
            total_nll -= p.ln();
            positions += 1;
        }
        total_nll / positions as f64
    }
}

/// Acceptance interval for memory scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBand {
    pub low: f64,
    pub high: f64,
}

impl ScoreBand {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn classify(&self, score: f64) -> BandFlag {
        if score < self.low {
            BandFlag::OutOfBand { side: BandSide::Low }
        } else if score > self.high {
            BandFlag::OutOfBand { side: BandSide::High }
        } else {
            BandFlag::InBand
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSide {
    /// Suspiciously predictable (e.g. a replayed known payload).
    Low,
    /// Suspiciously surprising relative to the benign corpus.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "flag")]
pub enum BandFlag {
    InBand,
    OutOfBand { side: BandSide },
}

/// Score of one memory entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryScore {
    pub entry_index: usize,
    pub score: f64,
    pub flag: BandFlag,
}

/// Inclusive percentile over a score sample (linear interpolation).
pub fn percentile(scores: &[f64], p: f64) -> f64 {
    assert!(!scores.is_empty(), "percentile of empty sample");
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}
