//! Counterfactuals-critical multi-agent learning: REINFORCE over the agents
//! of a non-autoregressive decoder with pluggable reward baselines.

mod baseline;
mod loss;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

pub use baseline::{
    baseline_none, baseline_self_critical, counterfactual_compositional, counterfactual_individual,
    final_baseline, BaselineState, MovingAverage,
};
pub use loss::{reinforce_loss, reinforce_weights};
pub use train::{cmal_train_step, StepStats, TrainExample, TRAINING_LOG_HEADER};

use crate::metrics::{MetricError, RewardFunction};
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum CmalError {
    #[error("invalid baseline: {0}")]
    InvalidBaseline(String),
    #[error("sample does not match policy: {0}")]
    SampleMismatch(String),
    #[error("compositional baseline needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("baseline length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample has no reward")]
    MissingReward,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl From<crate::tensor::TensorError> for CmalError {
    fn from(e: crate::tensor::TensorError) -> Self {
        CmalError::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CmalError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineSpec {
    None,
    MovingAverage {
        decay: f64,
    },
    SelfCritical,
    /// Individual counterfactual baseline over the top-`k` actions, mixed
    /// with the compositional one by `lambda` when `compositional` is set.
    Counterfactual {
        k: usize,
        lambda: f64,
        compositional: bool,
    },
}

impl BaselineSpec {
    pub const DEFAULT_DECAY: f64 = 0.99;
    pub const DEFAULT_LAMBDA: f64 = 0.5;

    pub fn counterfactual(k: usize) -> Self {
        BaselineSpec::Counterfactual {
            k,
            lambda: 0.0,
            compositional: false,
        }
    }

    pub fn compositional(k: usize) -> Self {
        BaselineSpec::Counterfactual {
            k,
            lambda: Self::DEFAULT_LAMBDA,
            compositional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineSpec::MovingAverage { decay } if !(decay > 0.0 && decay < 1.0) => Err(
                CmalError::InvalidBaseline(format!("decay {decay} outside (0, 1)")),
            ),
            BaselineSpec::Counterfactual { k, .. } if k == 0 => {
                Err(CmalError::InvalidBaseline("k must be at least 1".into()))
            }
            BaselineSpec::Counterfactual { lambda, .. } if !(0.0..=1.0).contains(&lambda) => Err(
                CmalError::InvalidBaseline(format!("lambda {lambda} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// Short label used in logs and ablation tables.
    pub fn label(&self) -> &'static str {
        match self {
            BaselineSpec::None => "none",
            BaselineSpec::MovingAverage { .. } => "ma",
            BaselineSpec::SelfCritical => "sc",
            BaselineSpec::Counterfactual {
                compositional: false,
                ..
            } => "cf",
            BaselineSpec::Counterfactual {
                compositional: true,
                ..
            } => "cf+ca",
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BaselineSpec::None | BaselineSpec::SelfCritical => f.write_str(self.label()),
            BaselineSpec::MovingAverage { decay } => write!(f, "ma:{decay}"),
            BaselineSpec::Counterfactual {
                k,
                compositional: false,
                ..
            } => write!(f, "cf:{k}"),
            BaselineSpec::Counterfactual {
                k,
                lambda,
                compositional: true,
            } => write!(f, "cf+ca:{k}:{lambda}"),
        }
    }
}

impl FromStr for BaselineSpec {
    type Err = CmalError;

    /// `none`, `ma[:decay]`, `sc`, `cf[:k]`, `cf+ca[:k[:lambda]]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CmalError::InvalidBaseline(s.to_string());
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let num = |p: Option<&str>, default: f64| -> Result<f64> {
            p.map_or(Ok(default), |v| v.parse().map_err(|_| bad()))
        };
        let spec = match kind.as_str() {
            "none" => BaselineSpec::None,
            "ma" => BaselineSpec::MovingAverage {
                decay: num(parts.next(), Self::DEFAULT_DECAY)?,
            },
            "sc" => BaselineSpec::SelfCritical,
            "cf" => BaselineSpec::counterfactual(num(parts.next(), 2.0)? as usize),
            "cf+ca" => BaselineSpec::Counterfactual {
                k: num(parts.next(), 2.0)? as usize,
                lambda: num(parts.next(), Self::DEFAULT_LAMBDA)?,
                compositional: true,
            },
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-agent advantages `A_a = R(u) − B̂_a` and the baselines used.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageVector {
    pub advantages: Vec<f64>,
    pub baselines: Vec<f64>,
}

impl AdvantageVector {
    pub fn new(reward: f64, baselines: Vec<f64>) -> Self {
        Self {
            advantages: baselines.iter().map(|b| reward - b).collect(),
            baselines,
        }
    }
}

/// Team reward of a truncated sentence.
pub trait Scorer {
    fn score(&self, sentence: &[u32]) -> f64;
}

impl<F: Fn(&[u32]) -> f64> Scorer for F {
    fn score(&self, sentence: &[u32]) -> f64 {
        self(sentence)
    }
}

/// A metric against the references of one input.
pub struct MetricScorer<'a> {
    reward: &'a RewardFunction,
    refs: &'a [Vec<u32>],
}

impl<'a> MetricScorer<'a> {
    pub fn new(reward: &'a RewardFunction, refs: &'a [Vec<u32>]) -> Result<Self> {
        reward.score(&[], refs)?;
        Ok(Self { reward, refs })
    }
}

impl Scorer for MetricScorer<'_> {
    fn score(&self, sentence: &[u32]) -> f64 {
        self.reward
            .score(sentence, self.refs)
            .expect("references validated at construction")
    }
}

/// Memoizes rewards by truncated sentence.
pub struct RewardCache<'s, S: Scorer + ?Sized> {
    scorer: &'s S,
    cache: HashMap<Vec<u32>, f64>,
    lookups: usize,
    evaluations: usize,
}

impl<'s, S: Scorer + ?Sized> RewardCache<'s, S> {
    pub fn new(scorer: &'s S) -> Self {
        Self {
            scorer,
            cache: HashMap::new(),
            lookups: 0,
            evaluations: 0,
        }
    }

    pub fn reward(&mut self, sentence: &[u32]) -> f64 {
        self.lookups += 1;
        if let Some(&r) = self.cache.get(sentence) {
            return r;
        }
        self.evaluations += 1;
        let r = self.scorer.score(sentence);
        self.cache.insert(sentence.to_vec(), r);
        r
    }

    /// Rewards requested so far.
    pub fn lookups(&self) -> usize {
        self.lookups
    }

    /// Metric evaluations actually performed.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}
