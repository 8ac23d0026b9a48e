//! Synthetic tasks, parallel corpora, distillation and augmentation.

mod corpus;
mod task;

use std::collections::HashSet;

pub use corpus::{Pair, ParallelCorpus, Provenance};
pub use task::{generate_task, Split, Task, TaskKind};

use crate::model::{beam_search, ModelError, Seq2Seq};
use crate::vocab::TokenSequence;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("pair {index} has provenance {found:?}, expected {expected:?}")]
    Provenance {
        index: usize,
        expected: Provenance,
        found: Provenance,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Beam-searched teacher output for every source, as distilled pairs.
pub fn distill<'a>(
    teacher: &Seq2Seq,
    sources: impl IntoIterator<Item = &'a TokenSequence>,
    beam_width: usize,
) -> Result<ParallelCorpus> {
    let max_len = teacher.config().max_target_len;
    let mut out = ParallelCorpus::default();
    for s in sources {
        let h = beam_search(teacher, s.as_slice(), beam_width, max_len)?;
        out.push(s.clone(), vec![h.to_sequence()], Provenance::Distilled);
    }
    Ok(out)
}

/// `n` fresh sources from the task's unlabeled stream, none of which occur
/// in `exclude`, labeled by the teacher.
pub fn augment_unlabeled(
    task: &Task,
    n: usize,
    teacher: &Seq2Seq,
    beam_width: usize,
    exclude: &HashSet<Vec<u32>>,
) -> Result<ParallelCorpus> {
    let sources: Vec<TokenSequence> = task
        .sources(Split::Unlabeled, n, exclude)?
        .into_iter()
        .map(TokenSequence::from)
        .collect();
    distill(teacher, &sources, beam_width)
}
