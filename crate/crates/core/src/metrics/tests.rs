use std::collections::HashMap;

use proptest::prelude::*;

use super::cider::{similarity, tfidf};
use super::*;
use crate::model::postprocess;

const A: u32 = 4;
const B: u32 = 5;
const C: u32 = 6;
const D: u32 = 7;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

/// Hand-count GLEU against one reference: enumerate every (start, len)
/// substring of both sequences and match them greedily by multiset.
fn gleu_oracle_single(hyp: &[u32], r: &[u32]) -> (usize, usize, usize) {
    let grams = |s: &[u32]| {
        let mut m: HashMap<Vec<u32>, usize> = HashMap::new();
        for i in 0..s.len() {
            for n in 1..=4 {
                if i + n <= s.len() {
                    *m.entry(s[i..i + n].to_vec()).or_default() += 1;
                }
            }
        }
        m
    };
    let (h, rr) = (grams(hyp), grams(r));
    let tp = h
        .iter()
        .map(|(g, c)| (*c).min(*rr.get(g).unwrap_or(&0)))
        .sum();
    (tp, h.values().sum(), rr.values().sum())
}

#[test]
fn ngram_totals() {
    let c = NgramCounts::new(&[A, B, A, B], 4);
    assert_eq!(c.get(&[A, B]), 2);
    assert_eq!(c.get(&[B, A]), 1);
    assert_eq!(c.total(1), 4);
    assert_eq!(c.total(4), 1);
    assert_eq!(NgramCounts::new(&[A], 4).total(2), 0);
}

#[test]
fn bleu_examples() {
    assert!(close(sentence_bleu(&[A, B, C], &[[A, B, C]]).unwrap(), 1.0));
    assert_eq!(sentence_bleu(&[A, B], &[[C, D]]).unwrap(), 0.0);
    assert_eq!(sentence_bleu(&[], &[[C, D]]).unwrap(), 0.0);
    // p1..p4 all 1 after smoothing, brevity penalty exp(1 - 4/3)
    let v = sentence_bleu(&[A, B, C], &[[A, B, C, D]]).unwrap();
    assert!(close(v, (1.0f64 - 4.0 / 3.0).exp()));
    assert_eq!(
        sentence_bleu::<[u32; 1]>(&[A], &[]),
        Err(MetricError::NoReferences)
    );
}

#[test]
fn gleu_examples() {
    assert!(close(sentence_gleu(&[A, B, C], &[[A, B, C]]).unwrap(), 1.0));
    // matched 1, hyp total 1, ref total 3 (a, b, ab)
    assert!(close(
        sentence_gleu(&[A], &[vec![A, B]]).unwrap(),
        1.0 / 3.0
    ));
    assert_eq!(sentence_gleu(&[A, B], &[[C, D]]).unwrap(), 0.0);
    assert_eq!(sentence_gleu(&[], &[[C, D]]).unwrap(), 0.0);
}

fn uniform_df(seqs: &[&[u32]]) -> DocFreqTable {
    let mut grams = std::collections::BTreeSet::new();
    for s in seqs {
        for (g, _) in NgramCounts::new(s, 4).iter() {
            grams.insert(g.to_vec());
        }
    }
    DocFreqTable::from_counts(3, grams.into_iter().map(|g| (g, 1)))
}

#[test]
fn cider_examples() {
    let s = [A, B, C, D];
    let df = uniform_df(&[&s]);
    // identical tf-idf vectors: every order contributes cosine 1
    assert!(close(cider_d(&s, &[s], &df).unwrap(), 10.0));
    assert_eq!(
        cider_d(&[A, B], &[[C, D]], &uniform_df(&[&[A, B], &[C, D]])).unwrap(),
        0.0
    );
    assert_eq!(
        cider_d(&s, &[s], &DocFreqTable::default()),
        Err(MetricError::MissingDocFreq)
    );
    assert!(matches!(
        RewardFunction::new(RewardKind::CiderD, None),
        Err(MetricError::MissingDocFreq)
    ));
}

#[test]
fn repetition_examples() {
    assert_eq!(repetition_rate(&[A, A, A]), 1.0);
    assert_eq!(repetition_rate(&[A, B, C]), 0.0);
    assert_eq!(repetition_rate(&[A, A, B]), 0.5);
    assert_eq!(repetition_rate(&[]), 0.0);
}

#[test]
fn corpus_bleu_examples() {
    let hyps = vec![vec![A, B, C, D], vec![B, C, D, A, B]];
    let refs = vec![vec![hyps[0].clone()], vec![hyps[1].clone()]];
    assert!(close(corpus_bleu(&hyps, &refs).unwrap(), 100.0));
    assert_eq!(
        corpus_bleu::<Vec<u32>, Vec<u32>>(&[], &[]),
        Err(MetricError::EmptyCorpus)
    );
    assert!(matches!(
        corpus_bleu(&hyps, &refs[..1]),
        Err(MetricError::LengthMismatch { .. })
    ));
}

#[test]
fn corpus_bleu_of_one_sentence_is_unsmoothed_sentence_bleu() {
    let hyp = vec![A, B, C, D, A, B];
    let refs = vec![vec![A, B, C, D, B, A, B], vec![C, A, B, C, D]];
    let unsmoothed = sentence_bleu_with(
        &hyp,
        &refs,
        BleuConfig {
            smoothing: false,
            ..BleuConfig::default()
        },
    )
    .unwrap();
    assert!(unsmoothed > 0.0);
    let corpus = corpus_bleu(&[hyp], &[refs]).unwrap();
    assert!((corpus - 100.0 * unsmoothed).abs() < 1e-10);
}

#[test]
fn reward_kinds_parse() {
    assert_eq!("gleu".parse::<RewardKind>().unwrap(), RewardKind::Gleu);
    assert_eq!("CIDEr-D".parse::<RewardKind>().unwrap(), RewardKind::CiderD);
    assert!("rouge".parse::<RewardKind>().is_err());
    assert_eq!(
        RewardKind::Bleu.to_string().parse::<RewardKind>().unwrap(),
        RewardKind::Bleu
    );
}

fn seq(max: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(4u32..9, 0..max)
}

fn refs_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(seq(9), 1..4)
}

proptest! {
    #[test]
    fn ngram_order_totals(s in seq(12)) {
        let c = NgramCounts::new(&s, 4);
        for n in 1..=4 {
            prop_assert_eq!(c.total(n), s.len().saturating_sub(n - 1));
        }
        prop_assert!(c.iter().all(|(_, k)| k > 0));
    }

    #[test]
    fn rewards_are_bounded_and_reference_order_invariant(hyp in seq(9), refs in refs_strategy()) {
        let df = Arc::new(DocFreqTable::from_references(&[refs.clone(), vec![hyp.clone()]]));
        let mut rev = refs.clone();
        rev.reverse();
        for kind in [RewardKind::Bleu, RewardKind::Gleu, RewardKind::CiderD] {
            let f = RewardFunction::new(kind, Some(df.clone())).unwrap();
            let v = f.score(&hyp, &refs).unwrap();
            prop_assert!((0.0..=f.upper_bound() + 1e-12).contains(&v), "{kind} {v}");
            prop_assert_eq!(v, f.score(&hyp, &rev).unwrap());
        }
    }

    #[test]
    fn gleu_matches_hand_count(hyp in seq(9), refs in refs_strategy()) {
        let best = refs
            .iter()
            .map(|r| {
                let (tp, h, t) = gleu_oracle_single(&hyp, r);
                let all = h.max(t);
                if all == 0 { 0.0 } else { tp as f64 / all as f64 }
            })
            .fold(0.0, f64::max);
        let v = sentence_gleu(&hyp, &refs).unwrap();
        prop_assert!(close(v, best));
        prop_assert!(v <= 1.0);
        let (tp, h, t) = gleu_oracle_single(&hyp, &refs[0]);
        let full = h > 0 && tp == h && tp == t;
        prop_assert_eq!(sentence_gleu(&hyp, &refs[..1]).unwrap() == 1.0, full);
    }

    #[test]
    fn cider_penalty_strictly_decreases_with_length_gap(s in prop::collection::vec(4u32..9, 1..8)) {
        let df = DocFreqTable::from_counts(4, std::iter::empty());
        let r = tfidf(&s, &df);
        let mut h = tfidf(&s, &df);
        let mut prev = f64::INFINITY;
        for gap in 0..12 {
            h.len = s.len() + gap;
            let v = similarity(&h, &r, CIDER_SIGMA);
            prop_assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn doubling_sigma_never_lowers_cider(hyp in seq(9), refs in refs_strategy()) {
        let df = DocFreqTable::from_references(&[refs.clone(), vec![vec![4, 5]]]);
        let a = cider_d_with_sigma(&hyp, &refs, &df, 6.0).unwrap();
        let b = cider_d_with_sigma(&hyp, &refs, &df, 12.0).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn postprocessed_sequences_have_no_repeats(s in seq(20)) {
        prop_assert_eq!(repetition_rate(&postprocess(&s)), 0.0);
    }

    #[test]
    fn identical_hypothesis_scores_maximal_bleu_and_gleu(s in prop::collection::vec(4u32..9, 1..9)) {
        prop_assert!(close(sentence_bleu(&s, std::slice::from_ref(&s)).unwrap(), 1.0));
        prop_assert!(close(sentence_gleu(&s, std::slice::from_ref(&s)).unwrap(), 1.0));
    }
}
