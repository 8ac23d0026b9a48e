use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    ablate_baselines, ablate_topk, ablate_unlabeled, bench_latency, cmal_stage, distill_stage,
    evaluate, make_splits, pretrain_xe, train_teacher, xe_corpus, CmalRun, DecodeMode, EvalReport,
    HarnessError, LatencyRow, Result, RunConfig, Stage, UnlabeledRun,
};
use crate::cmal::{BaselineSpec, TRAINING_LOG_HEADER};
use crate::data::{ParallelCorpus, Provenance};
use crate::model::{load_checkpoint, save_checkpoint, Seq2Seq};
use crate::vocab::TokenSequence;

pub const TRAIN_CORPUS: &str = "train.txt";
pub const TEST_CORPUS: &str = "test.txt";
pub const DISTILLED_CORPUS: &str = "distilled.txt";
pub const UNLABELED_CORPUS: &str = "unlabeled.txt";
pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const XE_CKPT: &str = "xe.ckpt";
pub const CMAL_CKPT: &str = "cmal.ckpt";
pub const MANIFEST: &str = "manifest.tsv";

/// Writes a CSV with a header row.
pub fn write_csv<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let io = |e: csv::Error| HarnessError::Io(e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Artifact name → (command, config hash), stored as TSV in the run
/// directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, (String, String)>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        if !path.exists() {
            return Ok(m);
        }
        for (i, line) in fs::read_to_string(path)?.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [artifact, command, hash] = cols[..] else {
                return Err(HarnessError::Config(format!(
                    "manifest line {}: expected 3 columns",
                    i + 1
                )));
            };
            m.entries.insert(
                artifact.to_string(),
                (command.to_string(), hash.to_string()),
            );
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("artifact\tcommand\tconfig_sha256\n");
        for (a, (c, h)) in &self.entries {
            out.push_str(&format!("{a}\t{c}\t{h}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn record(&mut self, artifact: &str, command: &str, config_hash: &str) {
        self.entries.insert(
            artifact.to_string(),
            (command.to_string(), config_hash.to_string()),
        );
    }

    pub fn get(&self, artifact: &str) -> Option<(&str, &str)> {
        self.entries
            .get(artifact)
            .map(|(c, h)| (c.as_str(), h.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The output directory of a run and its manifest.
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest::load(&root.join(MANIFEST))?,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Persists `cfg` next to the artifacts and lists both in the manifest.
    pub fn record(&mut self, command: &str, cfg: &RunConfig, artifacts: &[&str]) -> Result<()> {
        let config_name = format!("{command}.config");
        cfg.save(&self.path(&config_name))?;
        let hash = cfg.hash();
        self.manifest.record(&config_name, command, &hash);
        for a in artifacts {
            self.manifest.record(a, command, &hash);
        }
        self.manifest.save(&self.path(MANIFEST))
    }

    pub fn load_corpus(&self, name: &str, provenance: Provenance) -> Result<ParallelCorpus> {
        let path = self.path(name);
        if !path.exists() {
            return Err(HarnessError::Config(format!("missing {}", path.display())));
        }
        Ok(ParallelCorpus::load(&path, provenance)?)
    }

    pub fn load_model(&self, path: Option<&Path>, default: &str) -> Result<Seq2Seq> {
        let p = path.map_or_else(|| self.path(default), Path::to_path_buf);
        if !p.exists() {
            return Err(HarnessError::Config(format!("missing {}", p.display())));
        }
        Ok(load_checkpoint(&p)?)
    }
}

fn staged(cfg: &RunConfig, stage: Stage) -> Result<RunConfig> {
    cfg.validate()?;
    Ok(RunConfig {
        stage,
        ..cfg.clone()
    })
}

fn epoch_rows(log: &[super::EpochStats]) -> Vec<[String; 4]> {
    log.iter()
        .map(|s| {
            [
                s.epoch.to_string(),
                format!("{:.6}", s.mean_loss),
                format!("{:e}", s.lr),
                format!("{:.3}", s.wall_ms),
            ]
        })
        .collect()
}

const EPOCH_HEADER: [&str; 4] = ["epoch", "mean_loss", "lr", "wall_ms"];

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<RunDir> {
    let cfg = staged(cfg, Stage::Data)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let (train, test) = make_splits(&cfg)?;
    train.save(&dir.path(TRAIN_CORPUS))?;
    test.save(&dir.path(TEST_CORPUS))?;
    dir.record("gen-data", &cfg, &[TRAIN_CORPUS, TEST_CORPUS])?;
    Ok(dir)
}

pub fn cmd_train_teacher(cfg: &RunConfig) -> Result<RunDir> {
    let cfg = staged(cfg, Stage::Teacher)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let train = dir.load_corpus(TRAIN_CORPUS, Provenance::Real)?;
    let (model, log) = train_teacher(&cfg, &train, |_, _| {})?;
    save_checkpoint(&model, &dir.path(TEACHER_CKPT))?;
    write_csv(&dir.path("teacher_log.csv"), EPOCH_HEADER, epoch_rows(&log))?;
    dir.record("train-teacher", &cfg, &[TEACHER_CKPT, "teacher_log.csv"])?;
    Ok(dir)
}

pub fn cmd_distill(cfg: &RunConfig, teacher: Option<&Path>) -> Result<RunDir> {
    let cfg = staged(cfg, Stage::Distill)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let train = dir.load_corpus(TRAIN_CORPUS, Provenance::Real)?;
    let test = dir.load_corpus(TEST_CORPUS, Provenance::Real)?;
    let teacher = dir.load_model(teacher, TEACHER_CKPT)?;
    let (distilled, unlabeled) = distill_stage(&cfg, &teacher, &train, &test)?;
    distilled.save(&dir.path(DISTILLED_CORPUS))?;
    unlabeled.save(&dir.path(UNLABELED_CORPUS))?;
    dir.record("distill", &cfg, &[DISTILLED_CORPUS, UNLABELED_CORPUS])?;
    Ok(dir)
}

pub fn cmd_pretrain_xe(cfg: &RunConfig, teacher: Option<&Path>) -> Result<RunDir> {
    let cfg = staged(cfg, Stage::Xe)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let train = dir.load_corpus(TRAIN_CORPUS, Provenance::Real)?;
    let distilled = dir.load_corpus(DISTILLED_CORPUS, Provenance::Distilled)?;
    let unlabeled = dir.load_corpus(UNLABELED_CORPUS, Provenance::Distilled)?;
    let corpus = xe_corpus(&train, &[&distilled, &unlabeled])?;
    let teacher = if cfg.init_from_teacher {
        Some(dir.load_model(teacher, TEACHER_CKPT)?)
    } else {
        None
    };
    let (model, log) = pretrain_xe(&cfg, teacher.as_ref(), &corpus, |_, _| {})?;
    save_checkpoint(&model, &dir.path(XE_CKPT))?;
    write_csv(&dir.path("xe_log.csv"), EPOCH_HEADER, epoch_rows(&log))?;
    dir.record("pretrain-xe", &cfg, &[XE_CKPT, "xe_log.csv"])?;
    Ok(dir)
}

pub fn cmd_train_cmal(cfg: &RunConfig, init: Option<&Path>) -> Result<RunDir> {
    let cfg = staged(cfg, Stage::Cmal)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let train = dir.load_corpus(TRAIN_CORPUS, Provenance::Real)?;
    let xe = dir.load_model(init, XE_CKPT)?;
    let mut rows = Vec::new();
    let (model, _) = cmal_stage(&cfg, &xe, &train, cfg.baseline, 0, |_, step, s| {
        rows.push(s.log_row(step))
    })?;
    save_checkpoint(&model, &dir.path(CMAL_CKPT))?;
    write_csv(&dir.path("cmal_log.csv"), TRAINING_LOG_HEADER, rows)?;
    dir.record("train-cmal", &cfg, &[CMAL_CKPT, "cmal_log.csv"])?;
    Ok(dir)
}

/// Scores a checkpoint on a corpus (the test split by default) and writes
/// `eval_<tag>.csv`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    ckpt: &Path,
    corpus: Option<&Path>,
    mode: DecodeMode,
    tag: &str,
) -> Result<(RunDir, EvalReport)> {
    let cfg = staged(cfg, Stage::Eval)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let model = dir.load_model(Some(ckpt), "")?;
    let corpus = match corpus {
        Some(p) => ParallelCorpus::load(p, Provenance::Real)?,
        None => dir.load_corpus(TEST_CORPUS, Provenance::Real)?,
    };
    let report = evaluate(
        &model,
        &corpus,
        mode,
        cfg.postprocess,
        &cfg.bucket_edges,
        cfg.latency_runs,
        None,
    )?;
    let name = format!("eval_{tag}.csv");
    write_csv(&dir.path(&name), EvalReport::HEADER, report.rows())?;
    dir.record("evaluate", &cfg, &[&name])?;
    Ok((dir, report))
}

pub fn cmd_bench_latency(
    cfg: &RunConfig,
    teacher: Option<&Path>,
    student: Option<&Path>,
) -> Result<(RunDir, Vec<LatencyRow>)> {
    let cfg = staged(cfg, Stage::Eval)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let teacher = dir.load_model(teacher, TEACHER_CKPT)?;
    let student = dir.load_model(student, XE_CKPT)?;
    let task = cfg.task()?;
    let source = TokenSequence::from(
        task.sources(crate::data::Split::Test, 1, &Default::default())?
            .remove(0),
    );
    let rows = bench_latency(
        &teacher,
        &student,
        source.as_slice(),
        &cfg.bench_lengths,
        cfg.latency_runs,
        5,
    )?;
    write_csv(
        &dir.path("latency.csv"),
        LatencyRow::HEADER,
        rows.iter().map(LatencyRow::row),
    )?;
    dir.record("bench-latency", &cfg, &["latency.csv"])?;
    Ok((dir, rows))
}

fn curve_rows(runs: &[CmalRun]) -> Vec<[String; 4]> {
    runs.iter()
        .flat_map(|r| {
            r.log.iter().enumerate().map(move |(i, s)| {
                [
                    r.baseline.to_string(),
                    r.replicate.to_string(),
                    (i + 1).to_string(),
                    format!("{:.6}", s.mean_reward),
                ]
            })
        })
        .collect()
}

const CURVE_HEADER: [&str; 4] = ["baseline", "replicate", "step", "mean_reward"];

fn cmal_inputs(
    dir: &RunDir,
    init: Option<&Path>,
) -> Result<(Seq2Seq, ParallelCorpus, ParallelCorpus)> {
    Ok((
        dir.load_model(init, XE_CKPT)?,
        dir.load_corpus(TRAIN_CORPUS, Provenance::Real)?,
        dir.load_corpus(TEST_CORPUS, Provenance::Real)?,
    ))
}

pub fn cmd_ablate_baselines(
    cfg: &RunConfig,
    init: Option<&Path>,
    specs: &[BaselineSpec],
    replicates: u64,
) -> Result<(RunDir, Vec<CmalRun>)> {
    let cfg = staged(cfg, Stage::Cmal)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let (xe, train, test) = cmal_inputs(&dir, init)?;
    let runs = ablate_baselines(&cfg, &xe, &train, &test, specs, replicates, |_| {})?;
    write_csv(
        &dir.path("ablate_baselines.csv"),
        CmalRun::HEADER,
        runs.iter().map(CmalRun::row),
    )?;
    write_csv(
        &dir.path("baseline_curves.csv"),
        CURVE_HEADER,
        curve_rows(&runs),
    )?;
    dir.record(
        "ablate-baselines",
        &cfg,
        &["ablate_baselines.csv", "baseline_curves.csv"],
    )?;
    Ok((dir, runs))
}

pub fn cmd_ablate_topk(
    cfg: &RunConfig,
    init: Option<&Path>,
    ks: &[usize],
) -> Result<(RunDir, Vec<CmalRun>)> {
    let cfg = staged(cfg, Stage::Cmal)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let (xe, train, test) = cmal_inputs(&dir, init)?;
    let runs = ablate_topk(&cfg, &xe, &train, &test, ks, |_| {})?;
    write_csv(
        &dir.path("ablate_topk.csv"),
        CmalRun::HEADER,
        runs.iter().map(CmalRun::row),
    )?;
    write_csv(
        &dir.path("topk_curves.csv"),
        CURVE_HEADER,
        curve_rows(&runs),
    )?;
    dir.record("ablate-topk", &cfg, &["ablate_topk.csv", "topk_curves.csv"])?;
    Ok((dir, runs))
}

/// XE retraining with `ratio × n_train` unlabeled pairs for each ratio.
pub fn cmd_ablate_unlabeled(
    cfg: &RunConfig,
    teacher: Option<&Path>,
    ratios: &[usize],
) -> Result<(RunDir, Vec<UnlabeledRun>)> {
    let cfg = staged(cfg, Stage::Xe)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let train = dir.load_corpus(TRAIN_CORPUS, Provenance::Real)?;
    let test = dir.load_corpus(TEST_CORPUS, Provenance::Real)?;
    let distilled = dir.load_corpus(DISTILLED_CORPUS, Provenance::Distilled)?;
    let teacher = dir.load_model(teacher, TEACHER_CKPT)?;
    let counts: Vec<usize> = ratios.iter().map(|r| r * cfg.n_train).collect();
    let runs = ablate_unlabeled(&cfg, &teacher, &train, &distilled, &test, &counts, |_| {})?;
    write_csv(
        &dir.path("ablate_unlabeled.csv"),
        UnlabeledRun::HEADER,
        runs.iter().map(UnlabeledRun::row),
    )?;
    dir.record("ablate-unlabeled", &cfg, &["ablate_unlabeled.csv"])?;
    Ok((dir, runs))
}
