use super::{AdvantageVector, BaselineSpec, CmalError, Result, RewardCache, Scorer};
use crate::model::{argmax_decode, truncate, JointSample, PolicyMatrix, SentenceRule};

pub fn baseline_none() -> f64 {
    0.0
}

/// Exponentially decayed average of past rewards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovingAverage {
    pub decay: f64,
    pub value: f64,
}

impl MovingAverage {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: 0.0 }
    }

    /// Returns the average before `reward`, then folds `reward` in.
    pub fn next(&mut self, reward: f64) -> f64 {
        let before = self.value;
        self.value = self.decay * self.value + (1.0 - self.decay) * reward;
        before
    }
}

/// Reward of the argmax decode, shared by every agent.
pub fn baseline_self_critical<S: Scorer + ?Sized>(
    policy: &PolicyMatrix,
    rule: SentenceRule,
    cache: &mut RewardCache<'_, S>,
) -> f64 {
    cache.reward(&truncate(&argmax_decode(policy), rule))
}

fn sample_reward(sample: &JointSample) -> Result<f64> {
    sample.reward.ok_or(CmalError::MissingReward)
}

fn check_sample(sample: &JointSample, policy: &PolicyMatrix) -> Result<()> {
    if sample.actions.len() != policy.agents() {
        return Err(CmalError::SampleMismatch(format!(
            "{} actions for {} agents",
            sample.actions.len(),
            policy.agents()
        )));
    }
    if let Some(&u) = sample
        .actions
        .iter()
        .find(|&&u| u as usize >= policy.vocab())
    {
        return Err(CmalError::SampleMismatch(format!(
            "token {u} outside vocabulary of {}",
            policy.vocab()
        )));
    }
    Ok(())
}

/// Reward of `actions` with the given positions replaced. The sentence is
/// re-truncated, so a replacement may move the first eos.
fn rescore<S: Scorer + ?Sized>(
    sample: &JointSample,
    replace: &[(usize, u32)],
    rule: SentenceRule,
    cache: &mut RewardCache<'_, S>,
    scratch: &mut Vec<u32>,
) -> f64 {
    if replace.iter().all(|&(a, u)| sample.actions[a] == u) {
        if let Some(r) = sample.reward {
            return r;
        }
    }
    scratch.clear();
    scratch.extend_from_slice(&sample.actions);
    for &(a, u) in replace {
        scratch[a] = u;
    }
    cache.reward(&truncate(scratch, rule))
}

/// `B_a = Σ_{u'} π'_a(u') R(u_{−a}, u')` over agent `a`'s top-`k` actions
/// with renormalized probabilities. Each value depends only on the other
/// agents' actions.
pub fn counterfactual_individual<S: Scorer + ?Sized>(
    sample: &JointSample,
    policy: &PolicyMatrix,
    rule: SentenceRule,
    k: usize,
    cache: &mut RewardCache<'_, S>,
) -> Result<Vec<f64>> {
    check_sample(sample, policy)?;
    sample_reward(sample)?;
    let mut scratch = Vec::with_capacity(sample.actions.len());
    (0..policy.agents())
        .map(|a| {
            let ids = policy.top_k(a, k);
            let probs = policy.probs(a);
            let z: f64 = ids.iter().map(|&u| probs[u as usize]).sum();
            let mut b = 0.0;
            for &u in &ids {
                let r = rescore(sample, &[(a, u)], rule, cache, &mut scratch);
                b += probs[u as usize] / z * r;
            }
            Ok(b)
        })
        .collect()
}

/// Candidate actions of the compositional agent `(i, i+1)`: the `k` most
/// probable pairs in the cross product of both members' top-`k` lists,
/// with product probabilities. Ties go to lower ids.
fn pair_candidates(policy: &PolicyMatrix, i: usize, k: usize) -> Vec<(u32, u32, f64)> {
    let (pi, pj) = (policy.probs(i), policy.probs(i + 1));
    let mut cross = Vec::new();
    for &a in &policy.top_k(i, k) {
        for &b in &policy.top_k(i + 1, k) {
            cross.push((a, b, pi[a as usize] * pj[b as usize]));
        }
    }
    cross.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    cross.truncate(k);
    cross
}

/// Per-agent compositional baselines. The pair baseline
/// `B̃_(i,i+1) = Σ π'(u'_i, u'_{i+1}) R(u_{−(i,i+1)}, u'_i, u'_{i+1})`; interior
/// agents average their two incident pairs, boundary agents take their one.
pub fn counterfactual_compositional<S: Scorer + ?Sized>(
    sample: &JointSample,
    policy: &PolicyMatrix,
    rule: SentenceRule,
    k: usize,
    cache: &mut RewardCache<'_, S>,
) -> Result<Vec<f64>> {
    check_sample(sample, policy)?;
    sample_reward(sample)?;
    let n = policy.agents();
    if n < 2 {
        return Err(CmalError::TooFewAgents(n));
    }
    let mut scratch = Vec::with_capacity(n);
    let pairs: Vec<f64> = (0..n - 1)
        .map(|i| {
            let cands = pair_candidates(policy, i, k);
            let z: f64 = cands.iter().map(|c| c.2).sum();
            cands
                .iter()
                .map(|&(a, b, p)| {
                    p / z * rescore(sample, &[(i, a), (i + 1, b)], rule, cache, &mut scratch)
                })
                .sum()
        })
        .collect();
    Ok((0..n)
        .map(|a| match a {
            0 => pairs[0],
            a if a == n - 1 => pairs[n - 2],
            a => (pairs[a - 1] + pairs[a]) / 2.0,
        })
        .collect())
}

/// `B̂_a = (1 − λ) B_a + λ B̃_a`.
pub fn final_baseline(individual: &[f64], compositional: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if individual.len() != compositional.len() {
        return Err(CmalError::LengthMismatch(
            individual.len(),
            compositional.len(),
        ));
    }
    Ok(individual
        .iter()
        .zip(compositional)
        .map(|(b, c)| (1.0 - lambda) * b + lambda * c)
        .collect())
}

/// A baseline spec plus the running state some baselines need.
#[derive(Clone, Debug)]
pub struct BaselineState {
    spec: BaselineSpec,
    moving_average: MovingAverage,
}

impl BaselineState {
    pub fn new(spec: BaselineSpec) -> Result<Self> {
        spec.validate()?;
        let decay = match spec {
            BaselineSpec::MovingAverage { decay } => decay,
            _ => BaselineSpec::DEFAULT_DECAY,
        };
        Ok(Self {
            spec,
            moving_average: MovingAverage::new(decay),
        })
    }

    pub fn spec(&self) -> &BaselineSpec {
        &self.spec
    }

    pub fn moving_average(&self) -> f64 {
        self.moving_average.value
    }

    /// Advantages of one rewarded sample. `greedy_reward` is the
    /// self-critical baseline of the input and is only used by that kind.
    pub fn advantages<S: Scorer + ?Sized>(
        &mut self,
        sample: &JointSample,
        policy: &PolicyMatrix,
        rule: SentenceRule,
        cache: &mut RewardCache<'_, S>,
        greedy_reward: Option<f64>,
    ) -> Result<AdvantageVector> {
        check_sample(sample, policy)?;
        let reward = sample_reward(sample)?;
        let n = policy.agents();
        let baselines = match self.spec {
            BaselineSpec::None => vec![baseline_none(); n],
            BaselineSpec::MovingAverage { .. } => vec![self.moving_average.next(reward); n],
            BaselineSpec::SelfCritical => {
                let b = match greedy_reward {
                    Some(b) => b,
                    None => baseline_self_critical(policy, rule, cache),
                };
                vec![b; n]
            }
            BaselineSpec::Counterfactual {
                k,
                lambda,
                compositional,
            } => {
                let ind = counterfactual_individual(sample, policy, rule, k, cache)?;
                if compositional && n >= 2 {
                    let comp = counterfactual_compositional(sample, policy, rule, k, cache)?;
                    final_baseline(&ind, &comp, lambda)?
                } else {
                    ind
                }
            }
        };
        Ok(AdvantageVector::new(reward, baselines))
    }
}
