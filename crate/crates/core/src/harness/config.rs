use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{HarnessError, Result};
use crate::cmal::BaselineSpec;
use crate::data::{Task, TaskKind};
use crate::metrics::RewardKind;
use crate::model::{AgentCount, DecoderKind, ModelConfig};
use crate::optim::{AdamConfig, LrSchedule};

/// Which training stage a run belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data,
    Teacher,
    Distill,
    Xe,
    Cmal,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Data => "data",
            Stage::Teacher => "teacher",
            Stage::Distill => "distill",
            Stage::Xe => "xe",
            Stage::Cmal => "cmal",
            Stage::Eval => "eval",
        })
    }
}

impl FromStr for Stage {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "data" => Stage::Data,
            "teacher" => Stage::Teacher,
            "distill" => Stage::Distill,
            "xe" => Stage::Xe,
            "cmal" => Stage::Cmal,
            "eval" => Stage::Eval,
            _ => return Err(HarnessError::Config(format!("unknown stage {s:?}"))),
        })
    }
}

/// Everything a run depends on. Persisted as a flat `key=value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub stage: Stage,
    pub task: TaskKind,
    /// Content tokens of the task.
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub task_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_unlabeled: usize,

    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub agents: AgentCount,
    pub max_offset: usize,
    pub dropout: f64,

    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub teacher_warmup: usize,
    pub xe_epochs: usize,
    pub xe_lr: f64,
    pub xe_warmup: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub beam_width: usize,
    pub init_from_teacher: bool,

    pub cmal_steps: usize,
    pub cmal_batch_size: usize,
    pub cmal_lr: f64,
    pub samples_per_input: usize,
    pub baseline: BaselineSpec,
    pub reward: RewardKind,

    pub postprocess: bool,
    pub bucket_edges: Vec<usize>,
    pub latency_runs: usize,
    pub bench_lengths: Vec<usize>,

    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Data,
            task: TaskKind::LexTranslate { lexicon_seed: 1 },
            vocab: 20,
            min_len: 4,
            max_len: 10,
            task_seed: 1,
            n_train: 5000,
            n_test: 500,
            n_unlabeled: 0,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 64,
            max_source_len: 16,
            max_target_len: 64,
            agents: AgentCount::Fixed(12),
            max_offset: 20,
            dropout: 0.0,
            teacher_epochs: 8,
            teacher_lr: 3e-3,
            teacher_warmup: 300,
            xe_epochs: 1,
            xe_lr: 3e-3,
            xe_warmup: 300,
            batch_size: 32,
            clip_norm: 1.0,
            beam_width: 3,
            init_from_teacher: false,
            cmal_steps: 4000,
            cmal_batch_size: 8,
            cmal_lr: 5e-4,
            samples_per_input: 5,
            baseline: BaselineSpec::compositional(2),
            reward: RewardKind::Gleu,
            postprocess: false,
            bucket_edges: vec![4, 6, 8, 10],
            latency_runs: 3,
            bench_lengths: vec![8, 16, 32, 64],
            seed: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Every key, in file order.
    pub const KEYS: [&'static str; 40] = [
        "stage",
        "task",
        "vocab",
        "min_len",
        "max_len",
        "task_seed",
        "n_train",
        "n_test",
        "n_unlabeled",
        "d_model",
        "n_heads",
        "n_layers",
        "d_ff",
        "max_source_len",
        "max_target_len",
        "agents",
        "max_offset",
        "dropout",
        "teacher_epochs",
        "teacher_lr",
        "teacher_warmup",
        "xe_epochs",
        "xe_lr",
        "xe_warmup",
        "batch_size",
        "clip_norm",
        "beam_width",
        "init_from_teacher",
        "cmal_steps",
        "cmal_batch_size",
        "cmal_lr",
        "samples_per_input",
        "baseline",
        "reward",
        "postprocess",
        "bucket_edges",
        "latency_runs",
        "bench_lengths",
        "seed",
        "out_dir",
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "stage" => self.stage.to_string(),
            "task" => self.task.to_string(),
            "vocab" => self.vocab.to_string(),
            "min_len" => self.min_len.to_string(),
            "max_len" => self.max_len.to_string(),
            "task_seed" => self.task_seed.to_string(),
            "n_train" => self.n_train.to_string(),
            "n_test" => self.n_test.to_string(),
            "n_unlabeled" => self.n_unlabeled.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "n_layers" => self.n_layers.to_string(),
            "d_ff" => self.d_ff.to_string(),
            "max_source_len" => self.max_source_len.to_string(),
            "max_target_len" => self.max_target_len.to_string(),
            "agents" => self.agents.to_string(),
            "max_offset" => self.max_offset.to_string(),
            "dropout" => format!("{:?}", self.dropout),
            "teacher_epochs" => self.teacher_epochs.to_string(),
            "teacher_lr" => format!("{:?}", self.teacher_lr),
            "teacher_warmup" => self.teacher_warmup.to_string(),
            "xe_epochs" => self.xe_epochs.to_string(),
            "xe_lr" => format!("{:?}", self.xe_lr),
            "xe_warmup" => self.xe_warmup.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "clip_norm" => format!("{:?}", self.clip_norm),
            "beam_width" => self.beam_width.to_string(),
            "init_from_teacher" => self.init_from_teacher.to_string(),
            "cmal_steps" => self.cmal_steps.to_string(),
            "cmal_batch_size" => self.cmal_batch_size.to_string(),
            "cmal_lr" => format!("{:?}", self.cmal_lr),
            "samples_per_input" => self.samples_per_input.to_string(),
            "baseline" => self.baseline.to_string(),
            "reward" => self.reward.to_string(),
            "postprocess" => self.postprocess.to_string(),
            "bucket_edges" => join(&self.bucket_edges),
            "latency_runs" => self.latency_runs.to_string(),
            "bench_lengths" => join(&self.bench_lengths),
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "stage" => self.stage = v.parse()?,
            "task" => {
                self.task = v
                    .parse()
                    .map_err(|e: crate::data::DataError| HarnessError::Config(e.to_string()))?
            }
            "vocab" => self.vocab = parse(key, v)?,
            "min_len" => self.min_len = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "task_seed" => self.task_seed = parse(key, v)?,
            "n_train" => self.n_train = parse(key, v)?,
            "n_test" => self.n_test = parse(key, v)?,
            "n_unlabeled" => self.n_unlabeled = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "n_heads" => self.n_heads = parse(key, v)?,
            "n_layers" => self.n_layers = parse(key, v)?,
            "d_ff" => self.d_ff = parse(key, v)?,
            "max_source_len" => self.max_source_len = parse(key, v)?,
            "max_target_len" => self.max_target_len = parse(key, v)?,
            "agents" => self.agents = parse(key, v)?,
            "max_offset" => self.max_offset = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "teacher_epochs" => self.teacher_epochs = parse(key, v)?,
            "teacher_lr" => self.teacher_lr = parse(key, v)?,
            "teacher_warmup" => self.teacher_warmup = parse(key, v)?,
            "xe_epochs" => self.xe_epochs = parse(key, v)?,
            "xe_lr" => self.xe_lr = parse(key, v)?,
            "xe_warmup" => self.xe_warmup = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "beam_width" => self.beam_width = parse(key, v)?,
            "init_from_teacher" => self.init_from_teacher = parse(key, v)?,
            "cmal_steps" => self.cmal_steps = parse(key, v)?,
            "cmal_batch_size" => self.cmal_batch_size = parse(key, v)?,
            "cmal_lr" => self.cmal_lr = parse(key, v)?,
            "samples_per_input" => self.samples_per_input = parse(key, v)?,
            "baseline" => self.baseline = parse(key, v)?,
            "reward" => self.reward = parse(key, v)?,
            "postprocess" => self.postprocess = parse(key, v)?,
            "bucket_edges" => self.bucket_edges = parse_list(key, v)?,
            "latency_runs" => self.latency_runs = parse(key, v)?,
            "bench_lengths" => self.bench_lengths = parse_list(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks ranges that the parsers cannot.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.batch_size == 0 || self.cmal_batch_size == 0 || self.samples_per_input == 0 {
            return bad("batch sizes and samples_per_input must be positive");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be positive");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        if self.max_len + 1 > self.max_source_len || self.max_len + 1 > self.max_target_len {
            return bad("max_len + eos must fit max_source_len and max_target_len");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        self.baseline
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.task()?;
        self.model_config(DecoderKind::NonAutoregressive)?;
        Ok(())
    }

    pub fn task(&self) -> Result<Task> {
        Task::new(
            self.task,
            self.vocab,
            self.min_len,
            self.max_len,
            self.task_seed,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn model_config(&self, decoder: DecoderKind) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size: self.vocab + crate::vocab::NUM_RESERVED as usize,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_source_len: self.max_source_len,
            max_target_len: self.max_target_len,
            agents: self.agents,
            max_offset: self.max_offset,
            decoder,
            dropout: self.dropout,
            ..ModelConfig::default()
        };
        cfg.validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn teacher_adam(&self) -> AdamConfig {
        self.adam(LrSchedule::WarmupDecay {
            peak: self.teacher_lr,
            warmup: self.teacher_warmup,
        })
    }

    pub fn xe_adam(&self) -> AdamConfig {
        self.adam(LrSchedule::WarmupDecay {
            peak: self.xe_lr,
            warmup: self.xe_warmup,
        })
    }

    pub fn cmal_adam(&self) -> AdamConfig {
        self.adam(LrSchedule::Constant(self.cmal_lr))
    }

    fn adam(&self, schedule: LrSchedule) -> AdamConfig {
        AdamConfig {
            schedule,
            clip_norm: Some(self.clip_norm),
            ..AdamConfig::default()
        }
    }

    /// `key=value` lines in [`RunConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .filter_map(|k| self.get(k).map(|v| format!("{k}={v}\n")))
            .collect()
    }

    /// Starts from the defaults; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key=value", i + 1))
            })?;
            cfg.set(k.trim(), v)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// SHA-256 of the persisted form without `out_dir`, so moving a run
    /// does not change its identity.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("out_dir="))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
