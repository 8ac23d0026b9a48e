//! Sentence-level rewards (BLEU, GLEU, CIDEr-D) and evaluation statistics.
//!
//! Every metric takes content tokens only: no bos, eos or padding.

mod bleu;
mod cider;
mod gleu;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use bleu::{corpus_bleu, sentence_bleu, sentence_bleu_with, BleuConfig};
pub use cider::{cider_d, cider_d_with_sigma, DocFreqTable, CIDER_SIGMA};
pub use gleu::{corpus_gleu, sentence_gleu};

/// Highest n-gram order used by every metric.
pub const MAX_N: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("reference list is empty")]
    NoReferences,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{hyps} hypotheses but {refs} reference sets")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("CIDEr-D requires a document-frequency table")]
    MissingDocFreq,
    #[error("unknown reward kind {0:?}")]
    UnknownKind(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Counts of every n-gram of order `1..=max_n` in a sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NgramCounts {
    max_n: usize,
    counts: BTreeMap<Vec<u32>, usize>,
}

impl NgramCounts {
    pub fn new(seq: &[u32], max_n: usize) -> Self {
        let mut counts = BTreeMap::new();
        for n in 1..=max_n {
            for w in seq.windows(n) {
                *counts.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        Self { max_n, counts }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn get(&self, ngram: &[u32]) -> usize {
        self.counts.get(ngram).copied().unwrap_or(0)
    }

    /// Total count of n-grams of order `n`.
    pub fn total(&self, n: usize) -> usize {
        self.order(n).map(|(_, c)| c).sum()
    }

    /// Total count over all orders.
    pub fn total_all(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], usize)> {
        self.counts.iter().map(|(k, &c)| (k.as_slice(), c))
    }

    /// N-grams of order `n` with their counts.
    pub fn order(&self, n: usize) -> impl Iterator<Item = (&[u32], usize)> {
        self.iter().filter(move |(k, _)| k.len() == n)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

/// Fraction of adjacent positions holding the same token.
pub fn repetition_rate(seq: &[u32]) -> f64 {
    let repeats = seq.windows(2).filter(|w| w[0] == w[1]).count();
    repeats as f64 / seq.len().saturating_sub(1).max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardKind {
    Bleu,
    Gleu,
    CiderD,
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::Bleu => "bleu",
            RewardKind::Gleu => "gleu",
            RewardKind::CiderD => "cider",
        })
    }
}

impl FromStr for RewardKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(RewardKind::Bleu),
            "gleu" => Ok(RewardKind::Gleu),
            "cider" | "cider-d" | "ciderd" => Ok(RewardKind::CiderD),
            _ => Err(MetricError::UnknownKind(s.to_string())),
        }
    }
}

/// A sentence-level reward: a metric plus its parameters.
#[derive(Clone, Debug)]
pub enum RewardFunction {
    Bleu(BleuConfig),
    Gleu,
    CiderD { sigma: f64, df: Arc<DocFreqTable> },
}

impl RewardFunction {
    /// Builds the default reward of a kind. CIDEr-D needs `df`.
    pub fn new(kind: RewardKind, df: Option<Arc<DocFreqTable>>) -> Result<Self> {
        Ok(match kind {
            RewardKind::Bleu => RewardFunction::Bleu(BleuConfig::default()),
            RewardKind::Gleu => RewardFunction::Gleu,
            RewardKind::CiderD => RewardFunction::CiderD {
                sigma: CIDER_SIGMA,
                df: df.ok_or(MetricError::MissingDocFreq)?,
            },
        })
    }

    pub fn kind(&self) -> RewardKind {
        match self {
            RewardFunction::Bleu(_) => RewardKind::Bleu,
            RewardFunction::Gleu => RewardKind::Gleu,
            RewardFunction::CiderD { .. } => RewardKind::CiderD,
        }
    }

    /// Largest attainable reward.
    pub fn upper_bound(&self) -> f64 {
        match self {
            RewardFunction::CiderD { .. } => 10.0,
            _ => 1.0,
        }
    }

    pub fn score<R: AsRef<[u32]>>(&self, hyp: &[u32], refs: &[R]) -> Result<f64> {
        match self {
            RewardFunction::Bleu(cfg) => sentence_bleu_with(hyp, refs, *cfg),
            RewardFunction::Gleu => sentence_gleu(hyp, refs),
            RewardFunction::CiderD { sigma, df } => cider_d_with_sigma(hyp, refs, df, *sigma),
        }
    }
}

fn check_refs<R>(refs: &[R]) -> Result<()> {
    if refs.is_empty() {
        Err(MetricError::NoReferences)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests;
