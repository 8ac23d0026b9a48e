use super::{check_refs, MetricError, NgramCounts, Result, MAX_N};

/// Matched n-grams and `max(hyp total, ref total)` against the best reference.
fn best_match<R: AsRef<[u32]>>(hyp: &[u32], refs: &[R]) -> (usize, usize) {
    let h = NgramCounts::new(hyp, MAX_N);
    let hyp_total = h.total_all();
    let mut best = (0, 0);
    for r in refs {
        let rc = NgramCounts::new(r.as_ref(), MAX_N);
        let all = hyp_total.max(rc.total_all());
        if all == 0 {
            continue;
        }
        let tp: usize = h.iter().map(|(g, c)| c.min(rc.get(g))).sum();
        // tp / all > best.0 / best.1, exact in integers
        if best.1 == 0 || tp * best.1 > best.0 * all {
            best = (tp, all);
        }
    }
    best
}

/// Sentence GLEU: `min(precision, recall)` over pooled 1..4-grams, taking
/// the best-scoring reference.
pub fn sentence_gleu<R: AsRef<[u32]>>(hyp: &[u32], refs: &[R]) -> Result<f64> {
    check_refs(refs)?;
    let (tp, all) = best_match(hyp, refs);
    Ok(if all == 0 {
        0.0
    } else {
        tp as f64 / all as f64
    })
}

/// GLEU with matches and totals pooled over the corpus, scaled to `[0, 100]`.
pub fn corpus_gleu<H: AsRef<[u32]>, R: AsRef<[u32]>>(hyps: &[H], refs: &[Vec<R>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let (mut tp, mut all) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        check_refs(r)?;
        let (t, a) = best_match(h.as_ref(), r);
        tp += t;
        all += a;
    }
    Ok(if all == 0 {
        0.0
    } else {
        100.0 * tp as f64 / all as f64
    })
}
