use super::{
    cmal_stage, decode_corpus, pretrain_xe, score_corpus, unlabeled_corpus, xe_corpus, DecodeMode,
    HarnessError, Result, RunConfig,
};
use crate::cmal::{BaselineSpec, StepStats};
use crate::data::ParallelCorpus;
use crate::model::Seq2Seq;

/// Test-split corpus GLEU of the student's one-pass decode.
pub fn test_gleu(model: &Seq2Seq, test: &ParallelCorpus, postprocess: bool) -> Result<f64> {
    let hyps = decode_corpus(model, test, DecodeMode::Na, postprocess)?;
    let refs: Vec<Vec<Vec<u32>>> = test.iter().map(|p| p.refs()).collect();
    Ok(score_corpus(&hyps, &refs)?.gleu)
}

/// Median; the mean of the middle two for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Mean training reward over the last tenth of the steps.
pub fn final_train_reward(log: &[StepStats]) -> f64 {
    let tail = (log.len() / 10).max(1).min(log.len());
    if tail == 0 {
        return f64::NAN;
    }
    log[log.len() - tail..]
        .iter()
        .map(|s| s.mean_reward)
        .sum::<f64>()
        / tail as f64
}

/// One CMAL fine-tuning run and its outcome.
#[derive(Clone, Debug)]
pub struct CmalRun {
    pub baseline: BaselineSpec,
    pub replicate: u64,
    /// Test-split corpus GLEU after training.
    pub final_gleu: f64,
    pub final_train_reward: f64,
    pub log: Vec<StepStats>,
    pub model: Seq2Seq,
}

impl CmalRun {
    pub const HEADER: [&'static str; 4] =
        ["baseline", "replicate", "final_gleu", "final_train_reward"];

    pub fn row(&self) -> [String; 4] {
        [
            self.baseline.to_string(),
            self.replicate.to_string(),
            format!("{:.4}", self.final_gleu),
            format!("{:.6}", self.final_train_reward),
        ]
    }
}

pub fn run_cmal(
    cfg: &RunConfig,
    xe: &Seq2Seq,
    train: &ParallelCorpus,
    test: &ParallelCorpus,
    baseline: BaselineSpec,
    replicate: u64,
) -> Result<CmalRun> {
    let (model, log) = cmal_stage(cfg, xe, train, baseline, replicate, |_, _, _| {})?;
    Ok(CmalRun {
        baseline,
        replicate,
        final_gleu: test_gleu(&model, test, cfg.postprocess)?,
        final_train_reward: final_train_reward(&log),
        log,
        model,
    })
}

/// Every baseline in `specs` with replicates `0..replicates`, all from the
/// same XE checkpoint.
pub fn ablate_baselines(
    cfg: &RunConfig,
    xe: &Seq2Seq,
    train: &ParallelCorpus,
    test: &ParallelCorpus,
    specs: &[BaselineSpec],
    replicates: u64,
    mut on_run: impl FnMut(&CmalRun),
) -> Result<Vec<CmalRun>> {
    let mut runs = Vec::new();
    for &spec in specs {
        for r in 0..replicates {
            let run = run_cmal(cfg, xe, train, test, spec, r)?;
            on_run(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}

/// The configured counterfactual baseline with its top-k size replaced.
pub fn with_top_k(spec: BaselineSpec, k: usize) -> Result<BaselineSpec> {
    match spec {
        BaselineSpec::Counterfactual {
            lambda,
            compositional,
            ..
        } => Ok(BaselineSpec::Counterfactual {
            k,
            lambda,
            compositional,
        }),
        other => Err(HarnessError::Config(format!(
            "top-k ablation needs a counterfactual baseline, got {other}"
        ))),
    }
}

/// The configured baseline at each top-k size, replicate 0.
pub fn ablate_topk(
    cfg: &RunConfig,
    xe: &Seq2Seq,
    train: &ParallelCorpus,
    test: &ParallelCorpus,
    ks: &[usize],
    mut on_run: impl FnMut(&CmalRun),
) -> Result<Vec<CmalRun>> {
    let mut runs = Vec::new();
    for &k in ks {
        let run = run_cmal(cfg, xe, train, test, with_top_k(cfg.baseline, k)?, 0)?;
        on_run(&run);
        runs.push(run);
    }
    Ok(runs)
}

/// XE-stage outcome for one amount of unlabeled data.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledRun {
    pub n_unlabeled: usize,
    pub xe_pairs: usize,
    pub test_gleu: f64,
}

impl UnlabeledRun {
    pub const HEADER: [&'static str; 3] = ["n_unlabeled", "xe_pairs", "test_gleu"];

    pub fn row(&self) -> [String; 3] {
        [
            self.n_unlabeled.to_string(),
            self.xe_pairs.to_string(),
            format!("{:.4}", self.test_gleu),
        ]
    }
}

/// Retrains the XE student on real + distilled + `n` teacher-labeled
/// unlabeled pairs for each `n` in `counts`. The largest unlabeled set is
/// generated once; smaller ones are its prefixes.
pub fn ablate_unlabeled(
    cfg: &RunConfig,
    teacher: &Seq2Seq,
    train: &ParallelCorpus,
    distilled: &ParallelCorpus,
    test: &ParallelCorpus,
    counts: &[usize],
    mut on_run: impl FnMut(&UnlabeledRun),
) -> Result<Vec<UnlabeledRun>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let pool = unlabeled_corpus(cfg, teacher, max, train, test)?;
    let mut runs = Vec::new();
    for &n in counts {
        let (extra, _) = pool.split_at(n);
        let corpus = xe_corpus(train, &[distilled, &extra])?;
        let (model, _) = pretrain_xe(cfg, Some(teacher), &corpus, |_, _| {})?;
        let run = UnlabeledRun {
            n_unlabeled: n,
            xe_pairs: corpus.len(),
            test_gleu: test_gleu(&model, test, cfg.postprocess)?,
        };
        on_run(&run);
        runs.push(run);
    }
    Ok(runs)
}
