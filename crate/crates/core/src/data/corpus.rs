use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, Result};
use crate::vocab::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Human (here: task-generated) references.
    Real,
    /// Teacher outputs used as pseudo targets.
    Distilled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub source: TokenSequence,
    /// At least one reference.
    pub targets: Vec<TokenSequence>,
    pub provenance: Provenance,
}

impl Pair {
    /// Content of every reference.
    pub fn refs(&self) -> Vec<Vec<u32>> {
        self.targets.iter().map(|t| t.content().to_vec()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParallelCorpus {
    pairs: Vec<Pair>,
}

impl ParallelCorpus {
    pub fn push(
        &mut self,
        source: TokenSequence,
        targets: Vec<TokenSequence>,
        provenance: Provenance,
    ) {
        assert!(!targets.is_empty(), "a pair needs at least one target");
        self.pairs.push(Pair {
            source,
            targets,
            provenance,
        });
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter()
    }

    pub fn extend(&mut self, other: &ParallelCorpus) {
        self.pairs.extend(other.pairs.iter().cloned());
    }

    pub fn with_provenance(&self, p: Provenance) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .filter(|x| x.provenance == p)
                .cloned()
                .collect(),
        }
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.pairs.iter().filter(|x| x.provenance == p).count()
    }

    /// Errors unless every pair has provenance `p`.
    pub fn require(&self, p: Provenance) -> Result<()> {
        match self.pairs.iter().position(|x| x.provenance != p) {
            Some(i) => Err(DataError::Provenance {
                index: i,
                expected: p,
                found: self.pairs[i].provenance,
            }),
            None => Ok(()),
        }
    }

    /// Source contents, for disjointness checks.
    pub fn source_set(&self) -> HashSet<Vec<u32>> {
        self.pairs
            .iter()
            .map(|p| p.source.content().to_vec())
            .collect()
    }

    /// First `n` pairs and the rest.
    pub fn split_at(&self, n: usize) -> (ParallelCorpus, ParallelCorpus) {
        let n = n.min(self.len());
        (
            ParallelCorpus {
                pairs: self.pairs[..n].to_vec(),
            },
            ParallelCorpus {
                pairs: self.pairs[n..].to_vec(),
            },
        )
    }

    /// One pair per line: source ids, a tab, target ids, then optional
    /// further tab-separated references. Eos is implicit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let ids = |s: &TokenSequence| {
            s.content()
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        };
        for p in &self.pairs {
            out.push_str(&ids(&p.source));
            for t in &p.targets {
                let _ = write!(out, "\t{}", ids(t));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`ParallelCorpus::to_text`] output, tagging every pair with
    /// `provenance`.
    pub fn from_text(text: &str, provenance: Provenance) -> Result<Self> {
        let mut c = ParallelCorpus::default();
        for (i, line) in text.lines().enumerate() {
            let malformed = |reason: String| DataError::Malformed {
                line: i + 1,
                reason,
            };
            let mut cols = line.split('\t');
            let src = cols.next().unwrap_or_default();
            let targets: Vec<&str> = cols.collect();
            if targets.is_empty() {
                return Err(malformed("missing tab between source and target".into()));
            }
            let parse = |col: &str| -> Result<TokenSequence> {
                col.split_whitespace()
                    .map(|t| {
                        t.parse::<u32>()
                            .map_err(|_| malformed(format!("invalid token id {t:?}")))
                    })
                    .collect::<Result<Vec<u32>>>()
                    .map(TokenSequence::from)
            };
            let source = parse(src)?;
            let targets = targets.into_iter().map(parse).collect::<Result<Vec<_>>>()?;
            c.push(source, targets, provenance);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, provenance: Provenance) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, provenance)
    }
}
