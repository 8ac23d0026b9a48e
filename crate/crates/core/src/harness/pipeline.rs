use std::collections::HashSet;
use std::sync::Arc;

use super::{
    train_cmal, train_xe, CmalConfig, EpochStats, HarnessError, Result, RunConfig, XeConfig,
};
use crate::cmal::{BaselineSpec, StepStats};
use crate::data::{augment_unlabeled, distill, generate_task, ParallelCorpus, Provenance, Split};
use crate::metrics::{DocFreqTable, RewardFunction, RewardKind};
use crate::model::{DecoderKind, Seq2Seq};
use crate::optim::Adam;

/// Independent seed for one consumer of the run seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TEACHER_INIT: u64 = 1;
const TEACHER_ORDER: u64 = 2;
const STUDENT_INIT: u64 = 3;
const STUDENT_ORDER: u64 = 4;
const CMAL_STREAM: u64 = 100;

/// Labeled training split and a held-out test split with disjoint sources.
pub fn make_splits(cfg: &RunConfig) -> Result<(ParallelCorpus, ParallelCorpus)> {
    let task = cfg.task()?;
    let train = generate_task(&task, cfg.n_train)?;
    let test = task.corpus(Split::Test, cfg.n_test, &train.source_set())?;
    Ok((train, test))
}

/// Autoregressive teacher trained with XE on real pairs.
pub fn train_teacher(
    cfg: &RunConfig,
    train: &ParallelCorpus,
    on_epoch: impl FnMut(&Seq2Seq, &EpochStats),
) -> Result<(Seq2Seq, Vec<EpochStats>)> {
    train.require(Provenance::Real)?;
    let mut model = Seq2Seq::new(
        cfg.model_config(DecoderKind::Autoregressive)?,
        derive_seed(cfg.seed, TEACHER_INIT),
    )?;
    let mut opt = Adam::new(model.params(), cfg.teacher_adam());
    let xe = XeConfig {
        epochs: cfg.teacher_epochs,
        batch_size: cfg.batch_size,
        seed: derive_seed(cfg.seed, TEACHER_ORDER),
    };
    let log = train_xe(&mut model, &mut opt, train, &xe, on_epoch)?;
    Ok((model, log))
}

/// Teacher labels for the training sources, and `cfg.n_unlabeled` fresh
/// sources that occur in neither `train` nor `test`.
pub fn distill_stage(
    cfg: &RunConfig,
    teacher: &Seq2Seq,
    train: &ParallelCorpus,
    test: &ParallelCorpus,
) -> Result<(ParallelCorpus, ParallelCorpus)> {
    let distilled = distill(teacher, train.iter().map(|p| &p.source), cfg.beam_width)?;
    let unlabeled = augment(cfg, teacher, cfg.n_unlabeled, train, test)?;
    Ok((distilled, unlabeled))
}

fn augment(
    cfg: &RunConfig,
    teacher: &Seq2Seq,
    n: usize,
    train: &ParallelCorpus,
    test: &ParallelCorpus,
) -> Result<ParallelCorpus> {
    let exclude: HashSet<Vec<u32>> = train
        .source_set()
        .union(&test.source_set())
        .cloned()
        .collect();
    Ok(augment_unlabeled(
        &cfg.task()?,
        n,
        teacher,
        cfg.beam_width,
        &exclude,
    )?)
}

/// Real pairs followed by distilled ones, with provenance checked.
pub fn xe_corpus(real: &ParallelCorpus, distilled: &[&ParallelCorpus]) -> Result<ParallelCorpus> {
    real.require(Provenance::Real)?;
    let mut out = real.clone();
    for d in distilled {
        d.require(Provenance::Distilled)?;
        out.extend(d);
    }
    Ok(out)
}

/// Non-autoregressive student trained with per-position XE; optionally
/// initialized from the teacher.
pub fn pretrain_xe(
    cfg: &RunConfig,
    teacher: Option<&Seq2Seq>,
    corpus: &ParallelCorpus,
    on_epoch: impl FnMut(&Seq2Seq, &EpochStats),
) -> Result<(Seq2Seq, Vec<EpochStats>)> {
    let mut model = Seq2Seq::new(
        cfg.model_config(DecoderKind::NonAutoregressive)?,
        derive_seed(cfg.seed, STUDENT_INIT),
    )?;
    if cfg.init_from_teacher {
        let teacher = teacher.ok_or_else(|| {
            HarnessError::Config("init_from_teacher needs a teacher checkpoint".into())
        })?;
        model.init_from_teacher(teacher)?;
    }
    let mut opt = Adam::new(model.params(), cfg.xe_adam());
    let xe = XeConfig {
        epochs: cfg.xe_epochs,
        batch_size: cfg.batch_size,
        seed: derive_seed(cfg.seed, STUDENT_ORDER),
    };
    let log = train_xe(&mut model, &mut opt, corpus, &xe, on_epoch)?;
    Ok((model, log))
}

/// The configured reward; CIDEr-D takes its document frequencies from the
/// training references.
pub fn reward_function(kind: RewardKind, train: &ParallelCorpus) -> Result<RewardFunction> {
    let df = match kind {
        RewardKind::CiderD => {
            let refs: Vec<Vec<Vec<u32>>> = train.iter().map(|p| p.refs()).collect();
            Some(Arc::new(DocFreqTable::from_references(&refs)))
        }
        _ => None,
    };
    Ok(RewardFunction::new(kind, df)?)
}

/// CMAL fine-tuning of a copy of `init` on real pairs with `baseline`.
/// `replicate` selects an independent sampling stream.
pub fn cmal_stage(
    cfg: &RunConfig,
    init: &Seq2Seq,
    train: &ParallelCorpus,
    baseline: BaselineSpec,
    replicate: u64,
    on_step: impl FnMut(&Seq2Seq, usize, &StepStats),
) -> Result<(Seq2Seq, Vec<StepStats>)> {
    let mut model = init.clone();
    let reward = reward_function(cfg.reward, train)?;
    let mut opt = Adam::new(model.params(), cfg.cmal_adam());
    let cmal = CmalConfig {
        steps: cfg.cmal_steps,
        batch_size: cfg.cmal_batch_size,
        samples_per_input: cfg.samples_per_input,
        baseline,
        seed: derive_seed(cfg.seed, CMAL_STREAM + replicate),
    };
    let log = train_cmal(&mut model, &mut opt, train, &reward, &cmal, on_step)?;
    Ok((model, log))
}

/// Teacher-labeled extra sources for the augmentation ablation.
pub fn unlabeled_corpus(
    cfg: &RunConfig,
    teacher: &Seq2Seq,
    n: usize,
    train: &ParallelCorpus,
    test: &ParallelCorpus,
) -> Result<ParallelCorpus> {
    augment(cfg, teacher, n, train, test)
}
