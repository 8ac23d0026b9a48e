use nag::cmal::BaselineSpec;
use nag::data::{generate_task, ParallelCorpus, Provenance, Task, TaskKind};
use nag::harness::*;
use nag::metrics::repetition_rate;
use nag::model::{
    argmax_decode, load_checkpoint, na_decode, postprocess, sample_joint, save_checkpoint,
    AgentCount, DecoderKind, PolicyMatrix, SentenceRule, Seq2Seq,
};
use nag::optim::Adam;
use nag::vocab::{BOS, EOS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(kind: TaskKind) -> RunConfig {
    RunConfig {
        task: kind,
        vocab: 8,
        min_len: 2,
        max_len: 4,
        n_train: 10,
        n_test: 6,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_source_len: 8,
        max_target_len: 8,
        agents: AgentCount::Fixed(6),
        teacher_epochs: 2,
        xe_epochs: 2,
        batch_size: 5,
        cmal_steps: 3,
        cmal_batch_size: 2,
        samples_per_input: 2,
        bucket_edges: vec![2, 3, 4],
        bench_lengths: vec![2, 4, 6],
        ..RunConfig::default()
    }
}

/// Teacher-forced argmax accuracy over target tokens and eos.
fn token_accuracy(model: &Seq2Seq, corpus: &ParallelCorpus) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for p in corpus.iter() {
        let ctx = model.encode(p.source.as_slice()).unwrap();
        let tgt = p.targets[0].as_slice();
        let mut prefix = vec![BOS];
        for &y in tgt {
            let lp = model.ar_step_log_probs(&ctx, &prefix).unwrap();
            let best = (0..lp.len())
                .max_by(|&a, &b| lp[a].total_cmp(&lp[b]))
                .unwrap();
            hit += usize::from(best as u32 == y);
            total += 1;
            prefix.push(y);
        }
    }
    hit as f64 / total as f64
}

#[test]
fn overfit_teacher_is_exact_and_distills_the_training_targets() {
    let cfg = RunConfig {
        teacher_epochs: 150,
        teacher_lr: 1e-2,
        teacher_warmup: 20,
        batch_size: 10,
        ..tiny(TaskKind::Reverse)
    };
    let (train, test) = make_splits(&cfg).unwrap();
    let (teacher, _) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    assert_eq!(token_accuracy(&teacher, &train), 1.0);
    let (distilled, unlabeled) = distill_stage(&cfg, &teacher, &train, &test).unwrap();
    assert!(unlabeled.is_empty());
    assert_eq!(distilled.count(Provenance::Distilled), train.len());
    for (d, t) in distilled.iter().zip(train.iter()) {
        assert_eq!(d.source, t.source);
        assert_eq!(d.targets, t.targets);
    }
}

#[test]
fn teacher_training_is_deterministic() {
    let cfg = tiny(TaskKind::Sort);
    let (train, _) = make_splits(&cfg).unwrap();
    let (a, la) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    let (b, lb) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    assert_eq!(la.last().unwrap().mean_loss, lb.last().unwrap().mean_loss);
    assert_eq!(a.params(), b.params());
}

#[test]
fn resumed_training_continues_from_the_checkpoint() {
    let cfg = tiny(TaskKind::Reverse);
    let (train, _) = make_splits(&cfg).unwrap();
    let (model, log) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(resumed.params(), model.params());

    let mut opt = Adam::new(resumed.params(), cfg.teacher_adam());
    opt.set_steps(log.len() * train.len().div_ceil(cfg.batch_size));
    let xe = XeConfig {
        epochs: 3,
        batch_size: cfg.batch_size,
        seed: 9,
    };
    let more = train_xe(&mut resumed, &mut opt, &train, &xe, |_, _| {}).unwrap();
    assert!(more.last().unwrap().mean_loss < log.last().unwrap().mean_loss);
}

#[test]
fn xe_loss_falls_over_the_first_epochs_on_reverse() {
    let cfg = RunConfig {
        n_train: 400,
        xe_epochs: 5,
        batch_size: 16,
        xe_warmup: 50,
        ..tiny(TaskKind::Reverse)
    };
    let (train, _) = make_splits(&cfg).unwrap();
    let (_, log) = pretrain_xe(&cfg, None, &train, |_, _| {}).unwrap();
    let losses: Vec<f64> = log.iter().map(|s| s.mean_loss).collect();
    // two-epoch moving average
    let smooth: Vec<f64> = losses.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    assert!(smooth.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn student_can_start_from_the_teacher() {
    let cfg = RunConfig {
        init_from_teacher: true,
        ..tiny(TaskKind::Copy)
    };
    let (train, _) = make_splits(&cfg).unwrap();
    assert!(pretrain_xe(&cfg, None, &train, |_, _| {}).is_err());
    let (teacher, _) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    let xe = RunConfig {
        xe_epochs: 0,
        ..cfg.clone()
    };
    let (student, _) = pretrain_xe(&xe, Some(&teacher), &train, |_, _| {}).unwrap();
    let id = student.params().find("embed").unwrap();
    let tid = teacher.params().find("embed").unwrap();
    assert_eq!(student.params().get(id), teacher.params().get(tid));
}

#[test]
fn cmal_rejects_distilled_pairs() {
    let cfg = tiny(TaskKind::Copy);
    let (train, _) = make_splits(&cfg).unwrap();
    let student =
        Seq2Seq::new(cfg.model_config(DecoderKind::NonAutoregressive).unwrap(), 0).unwrap();
    let distilled = ParallelCorpus::from_text(&train.to_text(), Provenance::Distilled).unwrap();
    let err = cmal_stage(&cfg, &student, &distilled, cfg.baseline, 0, |_, _, _| {});
    assert!(err.is_err());
    assert!(xe_corpus(&distilled, &[]).is_err());
    assert!(xe_corpus(&train, &[&train]).is_err());
    assert_eq!(
        xe_corpus(&train, &[&distilled]).unwrap().len(),
        2 * train.len()
    );
}

fn trained_student(cfg: &RunConfig) -> (Seq2Seq, ParallelCorpus, ParallelCorpus) {
    let (train, test) = make_splits(cfg).unwrap();
    let (student, _) = pretrain_xe(cfg, None, &train, |_, _| {}).unwrap();
    (student, train, test)
}

#[test]
fn evaluation_contracts() {
    let cfg = tiny(TaskKind::Reverse);
    let (student, _, test) = trained_student(&cfg);
    let plain = evaluate(&student, &test, DecodeMode::Na, false, &[0], 3, Some(1.0)).unwrap();
    let post = evaluate(&student, &test, DecodeMode::Na, true, &[0], 3, None).unwrap();
    assert!(post.scores.repetition <= plain.scores.repetition);
    assert_eq!(post.scores.repetition, 0.0);
    assert_eq!(plain.latency_runs, 3);
    assert!(plain.latency_ms > 0.0);
    assert_eq!(plain.speedup, Some(1.0 / plain.latency_ms));

    // one bucket covering everything reproduces the corpus score
    assert_eq!(plain.buckets.len(), 1);
    assert_eq!(plain.buckets[0].count, test.len());
    assert_eq!(plain.buckets[0].gleu, plain.scores.gleu);
    assert_eq!(plain.buckets[0].bleu, plain.scores.bleu);
    let split = evaluate(&student, &test, DecodeMode::Na, false, &[2, 3, 4], 3, None).unwrap();
    assert_eq!(
        split.buckets.iter().map(|b| b.count).sum::<usize>(),
        test.len()
    );
    assert_eq!(split.rows().len(), 1 + split.buckets.len());
    assert!(bucket_scores(&test, &[], &[3, 2]).is_err());

    let hyps = decode_corpus(&student, &test, DecodeMode::Na, false).unwrap();
    for h in &hyps {
        assert!(repetition_rate(&postprocess(h)) <= repetition_rate(h));
    }
}

#[test]
fn argmax_decode_of_a_deterministic_policy_equals_sampling() {
    let rows: Vec<Vec<f64>> = [5u32, 7, EOS, 4]
        .iter()
        .map(|&t| (0..10).map(|v| if v == t { 1.0 } else { 0.0 }).collect())
        .collect();
    let policy = PolicyMatrix::from_probs(&rows);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = sample_joint(&policy, SentenceRule::TruncateAtEos, &mut rng);
    assert_eq!(s.actions, argmax_decode(&policy));
    assert_eq!(s.sentence, vec![5, 7]);
}

#[test]
fn ar_evaluation_uses_beam_search() {
    let cfg = tiny(TaskKind::Copy);
    let (train, test) = make_splits(&cfg).unwrap();
    let (teacher, _) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    let r = evaluate(
        &teacher,
        &test,
        DecodeMode::Ar { beam: 2 },
        false,
        &[0],
        3,
        None,
    )
    .unwrap();
    assert!((0.0..=100.0).contains(&r.scores.gleu));
    assert!(evaluate(&teacher, &test, DecodeMode::Na, false, &[0], 3, None).is_err());
    assert_eq!(
        "ar:4".parse::<DecodeMode>().unwrap(),
        DecodeMode::Ar { beam: 4 }
    );
    assert_eq!("na".parse::<DecodeMode>().unwrap(), DecodeMode::Na);
    assert!("ar:0".parse::<DecodeMode>().is_err());
}

#[test]
fn baseline_grid_emits_one_curve_per_run() {
    let cfg = tiny(TaskKind::Reverse);
    let (student, train, test) = trained_student(&cfg);
    let specs: Vec<BaselineSpec> = [
        "none",
        "ma:0.9",
        "sc",
        "cf:2",
        "cf+ca:2:0",
        "cf+ca:2:0.5",
        "cf+ca:2:1",
    ]
    .iter()
    .map(|s| s.parse().unwrap())
    .collect();
    let mut seen = 0;
    let runs = ablate_baselines(&cfg, &student, &train, &test, &specs, 2, |_| seen += 1).unwrap();
    assert_eq!(runs.len(), 14);
    assert_eq!(seen, 14);
    for r in &runs {
        assert_eq!(r.log.len(), cfg.cmal_steps);
        assert!(r.log.iter().all(|s| s.baseline == r.baseline));
        assert!((0.0..=100.0).contains(&r.final_gleu));
    }
    // same spec and replicate reproduce exactly
    let again = run_cmal(&cfg, &student, &train, &test, specs[4], 1).unwrap();
    assert_eq!(again.model.params(), runs[9].model.params());
    assert_ne!(runs[8].model.params(), runs[9].model.params());
}

#[test]
fn topk_ablation_replaces_k_only() {
    let cfg = tiny(TaskKind::Reverse);
    let (student, train, test) = trained_student(&cfg);
    let runs = ablate_topk(&cfg, &student, &train, &test, &[1, 2, 5], |_| {}).unwrap();
    let ks: Vec<BaselineSpec> = runs.iter().map(|r| r.baseline).collect();
    assert_eq!(
        ks,
        vec![
            with_top_k(cfg.baseline, 1).unwrap(),
            cfg.baseline,
            with_top_k(cfg.baseline, 5).unwrap()
        ]
    );
    assert!(with_top_k(BaselineSpec::SelfCritical, 2).is_err());
}

#[test]
fn unlabeled_ablation_grows_the_xe_corpus() {
    let cfg = tiny(TaskKind::Copy);
    let (train, test) = make_splits(&cfg).unwrap();
    let (teacher, _) = train_teacher(&cfg, &train, |_, _| {}).unwrap();
    let (distilled, _) = distill_stage(&cfg, &teacher, &train, &test).unwrap();
    let runs =
        ablate_unlabeled(&cfg, &teacher, &train, &distilled, &test, &[0, 10], |_| {}).unwrap();
    assert_eq!(runs[0].xe_pairs, 20);
    assert_eq!(runs[1].xe_pairs, 30);
    let extra = unlabeled_corpus(&cfg, &teacher, 10, &train, &test).unwrap();
    assert!(extra.source_set().is_disjoint(&train.source_set()));
    assert!(extra.source_set().is_disjoint(&test.source_set()));
}

#[test]
fn latency_bench_shape() {
    let cfg = RunConfig {
        max_target_len: 16,
        agents: AgentCount::Fixed(16),
        ..tiny(TaskKind::Copy)
    };
    let teacher = Seq2Seq::new(cfg.model_config(DecoderKind::Autoregressive).unwrap(), 0).unwrap();
    let student =
        Seq2Seq::new(cfg.model_config(DecoderKind::NonAutoregressive).unwrap(), 0).unwrap();
    let src = [4, 5, 6, EOS];
    let rows = bench_latency(&teacher, &student, &src, &[2, 16], 3, 2).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ar_ms > 0.0 && r.na_ms > 0.0));
    assert_eq!(ar_decode_exact(&teacher, &src, 7).unwrap().len(), 7);
    assert!(na_decode_for_length(&student, &src, 16).unwrap().len() <= 16);
    assert!(bench_latency(&teacher, &student, &src, &[17], 3, 1).is_err());
    assert!(bench_latency(&student, &teacher, &src, &[2], 3, 1).is_err());
    let small = Seq2Seq::new(
        tiny(TaskKind::Copy)
            .model_config(DecoderKind::NonAutoregressive)
            .unwrap(),
        0,
    )
    .unwrap();
    assert!(na_agents(&small, 7).is_err());
}

#[test]
fn config_text_round_trip_and_validation() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(cfg.to_text().lines().count(), RunConfig::KEYS.len());
    let edited = RunConfig::from_text("# comment\n\nbaseline = sc\nseed=7\n").unwrap();
    assert_eq!(edited.baseline, BaselineSpec::SelfCritical);
    assert_eq!(edited.seed, 7);
    assert_ne!(edited.hash(), cfg.hash());
    let moved = RunConfig {
        out_dir: "elsewhere".into(),
        ..cfg.clone()
    };
    assert_eq!(moved.hash(), cfg.hash());
    assert_eq!(cfg.hash().len(), 64);

    assert!(RunConfig::from_text("nonsense=1").is_err());
    assert!(RunConfig::from_text("seed").is_err());
    let err = RunConfig::from_text("seed=1\nvocab=x").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert!(RunConfig::from_text("baseline=cf+ca:2:2").is_err());
    for bad in [
        "batch_size=0",
        "max_len=20",
        "vocab=2",
        "n_heads=3",
        "agents=99",
    ] {
        let c = RunConfig::from_text(bad).unwrap();
        assert!(c.validate().is_err(), "{bad}");
    }
    assert!(RunConfig::default().validate().is_ok());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(MANIFEST);
    let mut m = Manifest::default();
    m.record("a.csv", "evaluate", "ff");
    m.record("b.ckpt", "train-cmal", "ee");
    m.record("a.csv", "evaluate", "dd");
    m.save(&path).unwrap();
    let back = Manifest::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.len(), 2);
    assert_eq!(back.get("a.csv"), Some(("evaluate", "dd")));
}

#[test]
fn medians() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
}

#[test]
fn generated_splits_are_disjoint() {
    let cfg = RunConfig {
        n_train: 200,
        n_test: 50,
        ..tiny(TaskKind::Reverse)
    };
    let (train, test) = make_splits(&cfg).unwrap();
    assert!(train.source_set().is_disjoint(&test.source_set()));
    let task = Task::new(cfg.task, cfg.vocab, cfg.min_len, cfg.max_len, cfg.task_seed).unwrap();
    assert_eq!(train, generate_task(&task, 200).unwrap());
}

#[test]
fn na_decode_matches_the_decode_corpus_path() {
    let cfg = tiny(TaskKind::Reverse);
    let (student, _, test) = trained_student(&cfg);
    let hyps = decode_corpus(&student, &test, DecodeMode::Na, false).unwrap();
    for (p, h) in test.iter().zip(&hyps) {
        assert_eq!(&na_decode(&student, p.source.as_slice()).unwrap(), h);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_overrides_round_trip(seed in any::<u64>(), steps in 0usize..10_000, lr in 1e-6f64..1.0, k in 1usize..6) {
        let mut cfg = RunConfig::default();
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg.set("cmal_steps", &steps.to_string()).unwrap();
        cfg.set("cmal_lr", &format!("{lr:?}")).unwrap();
        cfg.set("baseline", &format!("cf:{k}")).unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}
