//! Training, evaluation and benchmarking pipelines behind the CLI.

mod ablation;
mod bench;
mod commands;
mod config;
mod eval;
mod pipeline;
mod train;

pub use ablation::{
    ablate_baselines, ablate_topk, ablate_unlabeled, final_train_reward, median, run_cmal,
    test_gleu, with_top_k, CmalRun, UnlabeledRun,
};
pub use bench::{ar_decode_exact, bench_latency, na_agents, na_decode_for_length, LatencyRow};
pub use commands::{
    cmd_ablate_baselines, cmd_ablate_topk, cmd_ablate_unlabeled, cmd_bench_latency, cmd_distill,
    cmd_evaluate, cmd_gen_data, cmd_pretrain_xe, cmd_train_cmal, cmd_train_teacher, write_csv,
    Manifest, RunDir, CMAL_CKPT, DISTILLED_CORPUS, MANIFEST, TEACHER_CKPT, TEST_CORPUS,
    TRAIN_CORPUS, UNLABELED_CORPUS, XE_CKPT,
};
pub use config::{RunConfig, Stage};
pub use pipeline::{
    cmal_stage, derive_seed, distill_stage, make_splits, pretrain_xe, reward_function,
    train_teacher, unlabeled_corpus, xe_corpus,
};

pub use eval::{
    bucket_scores, decode_corpus, evaluate, score_corpus, BucketScore, CorpusScores, DecodeMode,
    EvalReport,
};
pub use train::{train_cmal, train_xe, xe_step, CmalConfig, EpochStats, XeConfig};

use crate::cmal::CmalError;
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cmal(#[from] CmalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl From<crate::tensor::TensorError> for HarnessError {
    fn from(e: crate::tensor::TensorError) -> Self {
        HarnessError::Model(e.into())
    }
}
