use std::time::Instant;

use rand::{Rng, RngCore};

use super::{
    baseline_self_critical, reinforce_weights, AdvantageVector, BaselineSpec, BaselineState,
    MetricScorer, Result, RewardCache,
};
use crate::metrics::RewardFunction;
use crate::model::{
    sample_joint, source_len, AgentCount, Graph, JointSample, PolicyMatrix, Seq2Seq,
};
use crate::optim::Adam;
use crate::tensor::Tape;

/// Columns of the CMAL training log.
pub const TRAINING_LOG_HEADER: [&str; 6] = [
    "step",
    "mean_reward",
    "mean_baseline",
    "mean_abs_advantage",
    "rescoring_calls",
    "wall_ms",
];

/// One input: source tokens (ending with eos) and its content references.
#[derive(Clone, Copy, Debug)]
pub struct TrainExample<'a> {
    pub source: &'a [u32],
    pub refs: &'a [Vec<u32>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub baseline: BaselineSpec,
    pub samples: usize,
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_baseline: f64,
    pub mean_abs_advantage: f64,
    /// Counterfactual and self-critical reward lookups.
    pub rescoring_calls: usize,
    /// Metric evaluations after memoization.
    pub metric_calls: usize,
    pub wall_ms: f64,
}

impl StepStats {
    /// Values in [`TRAINING_LOG_HEADER`] order.
    pub fn log_row(&self, step: usize) -> [String; 6] {
        [
            step.to_string(),
            format!("{:.6}", self.mean_reward),
            format!("{:.6}", self.mean_baseline),
            format!("{:.6}", self.mean_abs_advantage),
            self.rescoring_calls.to_string(),
            format!("{:.3}", self.wall_ms),
        ]
    }
}

/// One CMAL update: for each input, a single policy forward pass, then
/// `samples_per_input` joint samples scored with `reward`, baselines and
/// advantages per sample, and one optimizer step on the REINFORCE loss of
/// the whole batch.
pub fn cmal_train_step<R: Rng + RngCore>(
    model: &mut Seq2Seq,
    optimizer: &mut Adam,
    batch: &[TrainExample<'_>],
    reward: &RewardFunction,
    baseline: &mut BaselineState,
    samples_per_input: usize,
    rng: &mut R,
) -> Result<StepStats> {
    let start = Instant::now();
    let rule = model.sentence_rule();
    let total = (batch.len() * samples_per_input).max(1);
    let scale = 1.0 / total as f64;
    let mut tape = Tape::new();
    let dropout_seed = rng.next_u64();
    let mut g = Graph::trainable(model, &mut tape, dropout_seed);

    let (mut sum_reward, mut sum_baseline, mut sum_abs_adv) = (0.0, 0.0, 0.0);
    let (mut rescoring, mut metric_calls) = (0, 0);
    let mut loss = None;
    for ex in batch {
        let ctx = g.encode(ex.source)?;
        let n = match model.config().agents {
            AgentCount::Fixed(n) => n,
            AgentCount::Predicted => {
                model
                    .predict_length(g.tape().value(ctx), source_len(ex.source))?
                    .predicted_length
            }
        };
        let out = g.decode_na(ctx, n)?;
        let lp = g.tape_mut().log_softmax(out.logits)?;
        let policy = PolicyMatrix::new(
            g.tape().value(lp).clone(),
            g.tape().value(out.states).clone(),
        );

        let scorer = MetricScorer::new(reward, ex.refs)?;
        let mut cache = RewardCache::new(&scorer);
        let greedy = match baseline.spec() {
            BaselineSpec::SelfCritical => Some(baseline_self_critical(&policy, rule, &mut cache)),
            _ => None,
        };
        let mut samples: Vec<(JointSample, AdvantageVector)> =
            Vec::with_capacity(samples_per_input);
        for _ in 0..samples_per_input {
            let mut s = sample_joint(&policy, rule, rng);
            s.reward = Some(cache.reward(&s.sentence));
            let adv = baseline.advantages(&s, &policy, rule, &mut cache, greedy)?;
            sum_reward += s.reward.unwrap_or_default();
            sum_baseline += adv.baselines.iter().sum::<f64>() / n as f64;
            sum_abs_adv += adv.advantages.iter().map(|a| a.abs()).sum::<f64>() / n as f64;
            samples.push((s, adv));
        }
        // one lookup per sample is its own reward, not a rescoring
        rescoring += cache.lookups() - samples_per_input;
        metric_calls += cache.evaluations();

        let refs: Vec<(&JointSample, &AdvantageVector)> =
            samples.iter().map(|(s, a)| (s, a)).collect();
        let w = reinforce_weights(n, policy.vocab(), &refs, scale)?;
        let t = g.tape_mut();
        let w = t.constant(w);
        let prod = t.mul(w, lp)?;
        let part = t.sum(prod)?;
        loss = Some(match loss {
            None => part,
            Some(acc) => t.add(acc, part)?,
        });
    }

    let Some(total_weighted) = loss else {
        return Ok(StepStats {
            baseline: *baseline.spec(),
            samples: 0,
            loss: 0.0,
            mean_reward: 0.0,
            mean_baseline: 0.0,
            mean_abs_advantage: 0.0,
            rescoring_calls: 0,
            metric_calls: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    };
    let loss = g.tape_mut().scale(total_weighted, -1.0)?;
    let loss_value = g.tape().value(loss).data()[0];
    let grads = g.backward(loss)?;
    drop(g);
    optimizer.step(model.params_mut(), &grads);

    let count = total as f64;
    Ok(StepStats {
        baseline: *baseline.spec(),
        samples: batch.len() * samples_per_input,
        loss: loss_value,
        mean_reward: sum_reward / count,
        mean_baseline: sum_baseline / count,
        mean_abs_advantage: sum_abs_adv / count,
        rescoring_calls: rescoring,
        metric_calls,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
