use rand::Rng;
use rand_distr::{Distribution, WeightedIndex};

use super::AgentCount;
use crate::tensor::Tensor;
use crate::vocab::EOS;

/// Per-agent categorical distributions from one non-autoregressive pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMatrix {
    agents: usize,
    vocab: usize,
    d_model: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    states: Vec<f64>,
}

impl PolicyMatrix {
    /// Builds from `[N×|U|]` log-probabilities and `[N×d]` agent states.
    pub fn new(log_probs: Tensor, states: Tensor) -> Self {
        let (agents, vocab) = (log_probs.rows(), log_probs.cols());
        let d_model = states.cols();
        let log_probs = log_probs.into_data();
        let probs = log_probs.iter().map(|v| v.exp()).collect();
        Self {
            agents,
            vocab,
            d_model,
            probs,
            log_probs,
            states: states.into_data(),
        }
    }

    /// Policy from explicit probability rows (no agent states).
    pub fn from_probs(rows: &[Vec<f64>]) -> Self {
        let agents = rows.len();
        let vocab = rows.first().map_or(0, Vec::len);
        let probs: Vec<f64> = rows.iter().flatten().copied().collect();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Self {
            agents,
            vocab,
            d_model: 0,
            probs,
            log_probs,
            states: Vec::new(),
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn probs(&self, agent: usize) -> &[f64] {
        &self.probs[agent * self.vocab..(agent + 1) * self.vocab]
    }

    pub fn log_probs(&self, agent: usize) -> &[f64] {
        &self.log_probs[agent * self.vocab..(agent + 1) * self.vocab]
    }

    pub fn state(&self, agent: usize) -> &[f64] {
        &self.states[agent * self.d_model..(agent + 1) * self.d_model]
    }

    /// Most probable id for `agent`; ties go to the lower id.
    pub fn argmax(&self, agent: usize) -> u32 {
        let row = self.probs(agent);
        let mut best = 0;
        for (i, p) in row.iter().enumerate() {
            if *p > row[best] {
                best = i;
            }
        }
        best as u32
    }

    /// The `k` most probable ids for `agent`, by descending probability with
    /// ties broken by ascending id.
    pub fn top_k(&self, agent: usize, k: usize) -> Vec<u32> {
        let row = self.probs(agent);
        let mut ids: Vec<u32> = (0..self.vocab as u32).collect();
        ids.sort_by(|&a, &b| {
            row[b as usize]
                .partial_cmp(&row[a as usize])
                .expect("finite probabilities")
                .then(a.cmp(&b))
        });
        ids.truncate(k.min(self.vocab));
        ids
    }
}

/// How a joint action becomes a sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SentenceRule {
    /// Fixed agent count: keep the tokens before the first eos.
    TruncateAtEos,
    /// Predicted agent count: every agent's token is kept.
    KeepAll,
}

impl From<AgentCount> for SentenceRule {
    fn from(a: AgentCount) -> Self {
        match a {
            AgentCount::Fixed(_) => SentenceRule::TruncateAtEos,
            AgentCount::Predicted => SentenceRule::KeepAll,
        }
    }
}

pub fn truncate(actions: &[u32], rule: SentenceRule) -> Vec<u32> {
    match rule {
        SentenceRule::TruncateAtEos => {
            let end = actions
                .iter()
                .position(|&t| t == EOS)
                .unwrap_or(actions.len());
            actions[..end].to_vec()
        }
        SentenceRule::KeepAll => actions.to_vec(),
    }
}

/// One sampled joint action `u` with per-agent log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSample {
    pub actions: Vec<u32>,
    pub log_probs: Vec<f64>,
    pub sentence: Vec<u32>,
    /// Team reward `R(u)`; set before advantages are computed.
    pub reward: Option<f64>,
}

impl JointSample {
    /// Joint sample for explicit actions under `policy`.
    pub fn from_actions(policy: &PolicyMatrix, actions: Vec<u32>, rule: SentenceRule) -> Self {
        let log_probs = actions
            .iter()
            .enumerate()
            .map(|(a, &u)| policy.log_probs(a)[u as usize])
            .collect();
        let sentence = truncate(&actions, rule);
        Self {
            actions,
            log_probs,
            sentence,
            reward: None,
        }
    }
}

/// Draws one token per agent, independently.
pub fn sample_joint<R: Rng>(policy: &PolicyMatrix, rule: SentenceRule, rng: &mut R) -> JointSample {
    let actions = (0..policy.agents())
        .map(|a| {
            let dist = WeightedIndex::new(policy.probs(a)).expect("valid distribution");
            dist.sample(rng) as u32
        })
        .collect();
    JointSample::from_actions(policy, actions, rule)
}

/// Output of the length predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthPrediction {
    pub offset_logits: Vec<f64>,
    /// Most likely `target_len - source_len`.
    pub offset: i64,
    pub predicted_length: usize,
}

impl LengthPrediction {
    pub fn from_logits(
        offset_logits: Vec<f64>,
        source_len: usize,
        max_offset: usize,
        max_len: usize,
    ) -> Self {
        let mut best = 0;
        for (i, v) in offset_logits.iter().enumerate() {
            if *v > offset_logits[best] {
                best = i;
            }
        }
        let offset = best as i64 - max_offset as i64;
        let predicted_length = (source_len as i64 + offset).clamp(1, max_len as i64) as usize;
        Self {
            offset_logits,
            offset,
            predicted_length,
        }
    }
}
