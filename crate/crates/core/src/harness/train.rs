use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Result;
use crate::cmal::{cmal_train_step, BaselineSpec, BaselineState, StepStats, TrainExample};
use crate::data::{ParallelCorpus, Provenance};
use crate::metrics::RewardFunction;
use crate::model::{xe_loss_ar, xe_loss_na, DecoderKind, Graph, Seq2Seq};
use crate::optim::Adam;
use crate::tensor::Tape;

/// Cross-entropy training schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct XeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// One minibatch update on the mean per-example XE loss. Each example is
/// trained on its first reference.
pub fn xe_step(
    model: &mut Seq2Seq,
    optimizer: &mut Adam,
    batch: &[(&[u32], &[u32])],
    dropout_seed: u64,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let mut g = Graph::trainable(model, &mut tape, dropout_seed);
    let mut total = None;
    for &(src, tgt) in batch {
        let l = match model.decoder() {
            DecoderKind::Autoregressive => xe_loss_ar(&mut g, src, tgt)?,
            DecoderKind::NonAutoregressive => xe_loss_na(&mut g, src, tgt)?,
        };
        total = Some(match total {
            None => l,
            Some(acc) => g.tape_mut().add(acc, l)?,
        });
    }
    let Some(total) = total else {
        return Ok((0.0, 0.0));
    };
    let loss = g.tape_mut().scale(total, 1.0 / batch.len() as f64)?;
    let value = g.tape().value(loss).data()[0];
    let grads = g.backward(loss)?;
    drop(g);
    let lr = optimizer.step(model.params_mut(), &grads);
    Ok((value, lr))
}

/// Seeded epoch order of `0..n`.
fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// XE training over `corpus` (real and distilled pairs alike); calls
/// `on_epoch` after every epoch.
pub fn train_xe(
    model: &mut Seq2Seq,
    optimizer: &mut Adam,
    corpus: &ParallelCorpus,
    cfg: &XeConfig,
    mut on_epoch: impl FnMut(&Seq2Seq, &EpochStats),
) -> Result<Vec<EpochStats>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = corpus.pairs();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(pairs.len(), &mut rng);
        let (mut sum, mut lr) = (0.0, 0.0);
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(&[u32], &[u32])> = chunk
                .iter()
                .map(|&i| (pairs[i].source.as_slice(), pairs[i].targets[0].content()))
                .collect();
            let (l, r) = xe_step(model, optimizer, &batch, rng.next_u64())?;
            sum += l;
            lr = r;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: sum / batches.max(1) as f64,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(model, &stats);
        history.push(stats);
    }
    Ok(history)
}

/// CMAL training schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct CmalConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub samples_per_input: usize,
    pub baseline: BaselineSpec,
    pub seed: u64,
}

/// CMAL over real pairs only; batches cycle through seeded epochs.
/// `on_step` sees every step's statistics.
pub fn train_cmal(
    model: &mut Seq2Seq,
    optimizer: &mut Adam,
    corpus: &ParallelCorpus,
    reward: &RewardFunction,
    cfg: &CmalConfig,
    mut on_step: impl FnMut(&Seq2Seq, usize, &StepStats),
) -> Result<Vec<StepStats>> {
    corpus.require(Provenance::Real)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut baseline = BaselineState::new(cfg.baseline)?;
    let pairs = corpus.pairs();
    let refs: Vec<Vec<Vec<u32>>> = pairs.iter().map(|p| p.refs()).collect();
    let bs = cfg.batch_size.max(1).min(pairs.len().max(1));
    let mut order = Vec::new();
    let mut pos = 0;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        if pos + bs > order.len() {
            order = epoch_order(pairs.len(), &mut rng);
            pos = 0;
        }
        let batch: Vec<TrainExample<'_>> = order[pos..pos + bs]
            .iter()
            .map(|&i| TrainExample {
                source: pairs[i].source.as_slice(),
                refs: &refs[i],
            })
            .collect();
        pos += bs;
        let stats = cmal_train_step(
            model,
            optimizer,
            &batch,
            reward,
            &mut baseline,
            cfg.samples_per_input,
            &mut rng,
        )?;
        on_step(model, step, &stats);
        history.push(stats);
    }
    Ok(history)
}
