use std::cmp::Ordering;

use super::{PolicyMatrix, Result, SentenceRule, Seq2Seq};
use crate::vocab::{TokenSequence, BOS, EOS};

/// A finished autoregressive hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends with eos unless `max_len` was reached.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Log-probability per generated token (eos included).
    pub fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    pub fn to_sequence(&self) -> TokenSequence {
        let end = self
            .tokens
            .iter()
            .position(|&t| t == EOS)
            .unwrap_or(self.tokens.len());
        TokenSequence::from_content(&self.tokens[..end])
    }
}

fn prefix_of(tokens: &[u32]) -> Vec<u32> {
    let mut p = Vec::with_capacity(tokens.len() + 1);
    p.push(BOS);
    p.extend_from_slice(tokens);
    p
}

/// Argmax decoding, one token per step, until eos or `max_len` tokens.
pub fn greedy_decode(model: &Seq2Seq, source: &[u32], max_len: usize) -> Result<Hypothesis> {
    let context = model.encode(source)?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let lp = model.ar_step_log_probs(&context, &prefix_of(&tokens))?;
        let mut best = 0;
        for (i, v) in lp.iter().enumerate() {
            if *v > lp[best] {
                best = i;
            }
        }
        log_prob += lp[best];
        tokens.push(best as u32);
        if best as u32 == EOS {
            break;
        }
    }
    Ok(Hypothesis { tokens, log_prob })
}

/// Beam search ranked by length-normalized log-probability.
///
/// Each step expands every live hypothesis by every token and keeps the
/// `beam_width` best extensions by cumulative log-probability; extensions
/// ending in eos leave the beam as finished hypotheses. Live hypotheses are
/// finished when they reach `max_len`. With `beam_width == 1` this is exactly
/// [`greedy_decode`]; with a width covering every extension it is exhaustive.
pub fn beam_search(
    model: &Seq2Seq,
    source: &[u32],
    beam_width: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    let width = beam_width.max(1);
    let context = model.encode(source)?;
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates = Vec::new();
        for h in &alive {
            let lp = model.ar_step_log_probs(&context, &prefix_of(&h.tokens))?;
            for (tok, v) in lp.iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(tok as u32);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: h.log_prob + v,
                });
            }
        }
        // stable: ties keep earlier beam, then lower token id
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(Ordering::Equal)
        });
        candidates.truncate(width);
        alive.clear();
        for c in candidates {
            if c.finished() {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    finished.extend(alive);
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.normalized() > finished[best].normalized() {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

/// Argmax token per agent.
pub fn argmax_decode(policy: &PolicyMatrix) -> Vec<u32> {
    (0..policy.agents()).map(|a| policy.argmax(a)).collect()
}

/// One-pass student decode: argmax per agent, then the sentence rule.
pub fn na_decode(model: &Seq2Seq, source: &[u32]) -> Result<Vec<u32>> {
    let policy = model.policy(source)?;
    Ok(super::truncate(
        &argmax_decode(&policy),
        SentenceRule::from(model.config().agents),
    ))
}

/// Collapses runs of identical adjacent tokens to a single token.
pub fn postprocess(seq: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(seq.len());
    for &t in seq {
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}
