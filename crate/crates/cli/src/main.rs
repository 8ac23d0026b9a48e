use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Arg, ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use nag::cmal::BaselineSpec;
use nag::harness::{
    cmd_ablate_baselines, cmd_ablate_topk, cmd_ablate_unlabeled, cmd_bench_latency, cmd_distill,
    cmd_evaluate, cmd_gen_data, cmd_pretrain_xe, cmd_train_cmal, cmd_train_teacher, DecodeMode,
    RunConfig,
};

/// Non-autoregressive generation with counterfactual multi-agent training.
///
/// Every subcommand also accepts `--config FILE` (flat key=value) and one
/// `--<key> VALUE` flag per config key, applied over the file.
#[derive(Parser)]
#[command(name = "nag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and test splits.
    GenData,
    /// Train the autoregressive teacher.
    TrainTeacher,
    /// Label the training sources (and fresh unlabeled ones) with the teacher.
    Distill {
        /// Teacher checkpoint; defaults to teacher.ckpt in the run directory.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Cross-entropy pretraining of the non-autoregressive student.
    PretrainXe {
        /// Teacher checkpoint; defaults to teacher.ckpt in the run directory.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// CMAL fine-tuning from an XE checkpoint.
    TrainCmal {
        /// Starting checkpoint; defaults to xe.ckpt in the run directory.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Score a checkpoint on a corpus.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to the run's test split.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// `na`, `ar` or `ar:<beam>`.
        #[arg(long, default_value = "na")]
        mode: String,
        /// Output goes to eval_<tag>.csv.
        #[arg(long, default_value = "model")]
        tag: String,
    },
    /// Per-sentence decode latency of teacher and student per target length.
    BenchLatency {
        /// Teacher checkpoint; defaults to teacher.ckpt in the run directory.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Student checkpoint; defaults to xe.ckpt in the run directory.
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// CMAL runs across top-k sizes.
    AblateTopk {
        /// Starting checkpoint; defaults to xe.ckpt in the run directory.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
        ks: Vec<usize>,
    },
    /// CMAL runs across baselines and replicates.
    AblateBaselines {
        /// Starting checkpoint; defaults to xe.ckpt in the run directory.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "none,ma:0.99,sc,cf:2,cf+ca:2:0.5"
        )]
        baselines: Vec<String>,
        #[arg(long, default_value_t = 3)]
        replicates: u64,
    },
    /// XE retraining with unlabeled data at multiples of the labeled size.
    AblateUnlabeled {
        /// Teacher checkpoint; defaults to teacher.ckpt in the run directory.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        ratios: Vec<usize>,
    },
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |mut sub| {
            sub = sub.arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("flat key=value config file"),
            );
            for key in RunConfig::KEYS {
                sub = sub.arg(
                    Arg::new(key)
                        .long(flag(key))
                        .value_name("VALUE")
                        .help_heading("Config overrides"),
                );
            }
            sub
        });
    }
    cmd
}

fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::load(p.as_ref()).with_context(|| format!("reading {p}"))?,
        None => RunConfig::default(),
    };
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .with_context(|| format!("--{}", flag(key)))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let matches = command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let (_, sub) = matches.subcommand().context("missing subcommand")?;
    let cfg = run_config(sub)?;
    let out = cfg.out_dir.display().to_string();
    match cli.command {
        Command::GenData => {
            cmd_gen_data(&cfg)?;
        }
        Command::TrainTeacher => {
            cmd_train_teacher(&cfg)?;
        }
        Command::Distill { teacher } => {
            cmd_distill(&cfg, teacher.as_deref())?;
        }
        Command::PretrainXe { teacher } => {
            cmd_pretrain_xe(&cfg, teacher.as_deref())?;
        }
        Command::TrainCmal { init } => {
            cmd_train_cmal(&cfg, init.as_deref())?;
        }
        Command::Evaluate {
            ckpt,
            corpus,
            mode,
            tag,
        } => {
            let mode: DecodeMode = mode.parse()?;
            let (_, r) = cmd_evaluate(&cfg, &ckpt, corpus.as_deref(), mode, &tag)?;
            println!(
                "{mode} bleu={:.2} gleu={:.2} cider={:.3} repetition={:.4} latency_ms={:.3}",
                r.scores.bleu, r.scores.gleu, r.scores.cider, r.scores.repetition, r.latency_ms
            );
        }
        Command::BenchLatency { teacher, student } => {
            let (_, rows) = cmd_bench_latency(&cfg, teacher.as_deref(), student.as_deref())?;
            for r in rows {
                println!(
                    "length={} ar_ms={:.3} na_ms={:.3} speedup={:.2}",
                    r.length, r.ar_ms, r.na_ms, r.speedup
                );
            }
        }
        Command::AblateTopk { init, ks } => {
            let (_, runs) = cmd_ablate_topk(&cfg, init.as_deref(), &ks)?;
            for r in runs {
                println!("{} gleu={:.2}", r.baseline, r.final_gleu);
            }
        }
        Command::AblateBaselines {
            init,
            baselines,
            replicates,
        } => {
            let specs = baselines
                .iter()
                .map(|s| s.parse::<BaselineSpec>())
                .collect::<Result<Vec<_>, _>>()?;
            let (_, runs) = cmd_ablate_baselines(&cfg, init.as_deref(), &specs, replicates)?;
            for r in runs {
                println!(
                    "{} replicate={} gleu={:.2}",
                    r.baseline, r.replicate, r.final_gleu
                );
            }
        }
        Command::AblateUnlabeled { teacher, ratios } => {
            let (_, runs) = cmd_ablate_unlabeled(&cfg, teacher.as_deref(), &ratios)?;
            for r in runs {
                println!("unlabeled={} gleu={:.2}", r.n_unlabeled, r.test_gleu);
            }
        }
    }
    eprintln!("outputs in {out}");
    Ok(())
}
