use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, ParallelCorpus, Provenance, Result};
use crate::vocab::{TokenSequence, NUM_RESERVED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Copy,
    Reverse,
    Sort,
    /// Tokenwise mapping through a seeded bijective lexicon, then every
    /// adjacent pair swapped.
    LexTranslate {
        lexicon_seed: u64,
    },
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Copy => f.write_str("copy"),
            TaskKind::Reverse => f.write_str("reverse"),
            TaskKind::Sort => f.write_str("sort"),
            TaskKind::LexTranslate { lexicon_seed } => write!(f, "lex:{lexicon_seed}"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DataError::InvalidTask(format!("unknown task {s:?}"));
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        match (kind.to_ascii_lowercase().as_str(), arg) {
            ("copy", None) => Ok(TaskKind::Copy),
            ("reverse", None) => Ok(TaskKind::Reverse),
            ("sort", None) => Ok(TaskKind::Sort),
            ("lex", seed) => Ok(TaskKind::LexTranslate {
                lexicon_seed: seed.map_or(Ok(0), |v| v.parse().map_err(|_| bad()))?,
            }),
            _ => Err(bad()),
        }
    }
}

/// A synthetic transduction task over content ids
/// `NUM_RESERVED..NUM_RESERVED + vocab_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    /// Number of content tokens.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    lexicon: Vec<u32>,
}

/// Independent random streams drawn from one task seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Test = 1,
    Unlabeled = 2,
}

impl Task {
    pub fn new(
        kind: TaskKind,
        vocab_size: usize,
        min_len: usize,
        max_len: usize,
        seed: u64,
    ) -> Result<Self> {
        if min_len == 0 || min_len > max_len {
            return Err(DataError::InvalidTask(format!(
                "length range {min_len}..={max_len}"
            )));
        }
        if vocab_size < max_len {
            return Err(DataError::InvalidTask(format!(
                "{vocab_size} content tokens cannot fill distinct sources of length {max_len}"
            )));
        }
        let mut lexicon: Vec<u32> = (0..vocab_size as u32).map(|i| i + NUM_RESERVED).collect();
        if let TaskKind::LexTranslate { lexicon_seed } = kind {
            if vocab_size < 2 {
                return Err(DataError::InvalidTask(
                    "lexicon needs at least 2 tokens".into(),
                ));
            }
            lexicon.shuffle(&mut ChaCha8Rng::seed_from_u64(lexicon_seed));
        }
        Ok(Self {
            kind,
            vocab_size,
            min_len,
            max_len,
            seed,
            lexicon,
        })
    }

    /// Total model vocabulary, reserved ids included.
    pub fn model_vocab(&self) -> usize {
        self.vocab_size + NUM_RESERVED as usize
    }

    /// Lexicon image of content token `t`.
    pub fn translate(&self, t: u32) -> u32 {
        self.lexicon[(t - NUM_RESERVED) as usize]
    }

    /// The target for `source` content.
    pub fn transform(&self, source: &[u32]) -> Vec<u32> {
        match self.kind {
            TaskKind::Copy => source.to_vec(),
            TaskKind::Reverse => source.iter().rev().copied().collect(),
            TaskKind::Sort => {
                let mut t = source.to_vec();
                t.sort_unstable();
                t
            }
            TaskKind::LexTranslate { .. } => {
                let mut t: Vec<u32> = source.iter().map(|&s| self.translate(s)).collect();
                for pair in t.chunks_mut(2) {
                    pair.reverse();
                }
                t
            }
        }
    }

    fn rng(&self, split: Split) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split as u64);
        rng
    }

    fn draw_source(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let len = rng.gen_range(self.min_len..=self.max_len);
        let ids: Vec<u32> = (0..self.vocab_size as u32)
            .map(|i| i + NUM_RESERVED)
            .collect();
        ids.choose_multiple(rng, len).copied().collect()
    }

    /// `n` distinct sources (distinct tokens within each) from `split`,
    /// skipping any content in `exclude`.
    pub fn sources(
        &self,
        split: Split,
        n: usize,
        exclude: &HashSet<Vec<u32>>,
    ) -> Result<Vec<Vec<u32>>> {
        let mut rng = self.rng(split);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(DataError::InvalidTask(format!(
                    "cannot draw {n} distinct sources"
                )));
            }
            let s = self.draw_source(&mut rng);
            if !exclude.contains(&s) && seen.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Labeled corpus of `n` pairs from `split`, excluding `exclude`.
    pub fn corpus(
        &self,
        split: Split,
        n: usize,
        exclude: &HashSet<Vec<u32>>,
    ) -> Result<ParallelCorpus> {
        let mut c = ParallelCorpus::default();
        for s in self.sources(split, n, exclude)? {
            let t = self.transform(&s);
            c.push(
                TokenSequence::from_content(&s),
                vec![TokenSequence::from_content(&t)],
                Provenance::Real,
            );
        }
        Ok(c)
    }
}

/// `n` real training pairs, a pure function of `(task, n)`.
pub fn generate_task(task: &Task, n: usize) -> Result<ParallelCorpus> {
    if n == 0 {
        return Err(DataError::InvalidTask("need at least one example".into()));
    }
    task.corpus(Split::Train, n, &HashSet::new())
}
