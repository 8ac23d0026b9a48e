use super::{check_refs, MetricError, NgramCounts, Result, MAX_N};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuConfig {
    pub max_n: usize,
    /// Add one to numerator and denominator of every order above 1.
    pub smoothing: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: MAX_N,
            smoothing: true,
        }
    }
}

/// Per-order clipped matches and hypothesis totals, plus the closest
/// reference length (shorter wins ties).
struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

fn stats<R: AsRef<[u32]>>(hyp: &[u32], refs: &[R], max_n: usize) -> BleuStats {
    let h = NgramCounts::new(hyp, max_n);
    let rc: Vec<NgramCounts> = refs
        .iter()
        .map(|r| NgramCounts::new(r.as_ref(), max_n))
        .collect();
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    for (g, c) in h.iter() {
        let max_ref = rc.iter().map(|r| r.get(g)).max().unwrap_or(0);
        matches[g.len() - 1] += c.min(max_ref);
    }
    for (n, t) in totals.iter_mut().enumerate() {
        *t = hyp.len().saturating_sub(n);
    }
    let ref_len = refs
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
        .unwrap_or(0);
    BleuStats {
        matches,
        totals,
        hyp_len: hyp.len(),
        ref_len,
    }
}

fn combine(s: &BleuStats, smoothing: bool) -> f64 {
    if s.hyp_len == 0 {
        return 0.0;
    }
    let max_n = s.matches.len();
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if smoothing && n > 0 {
            (s.matches[n] + 1, s.totals[n] + 1)
        } else {
            (s.matches[n], s.totals[n])
        };
        if m == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if s.hyp_len < s.ref_len {
        (1.0 - s.ref_len as f64 / s.hyp_len as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / max_n as f64).exp()
}

/// Smoothed sentence BLEU-4 in `[0, 1]`.
pub fn sentence_bleu<R: AsRef<[u32]>>(hyp: &[u32], refs: &[R]) -> Result<f64> {
    sentence_bleu_with(hyp, refs, BleuConfig::default())
}

pub fn sentence_bleu_with<R: AsRef<[u32]>>(
    hyp: &[u32],
    refs: &[R],
    cfg: BleuConfig,
) -> Result<f64> {
    check_refs(refs)?;
    Ok(combine(&stats(hyp, refs, cfg.max_n), cfg.smoothing))
}

/// Unsmoothed BLEU-4 over counts pooled across the corpus, scaled to `[0, 100]`.
pub fn corpus_bleu<H: AsRef<[u32]>, R: AsRef<[u32]>>(hyps: &[H], refs: &[Vec<R>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut total = BleuStats {
        matches: vec![0; MAX_N],
        totals: vec![0; MAX_N],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        check_refs(r)?;
        let s = stats(h.as_ref(), r, MAX_N);
        for n in 0..MAX_N {
            total.matches[n] += s.matches[n];
            total.totals[n] += s.totals[n];
        }
        total.hyp_len += s.hyp_len;
        total.ref_len += s.ref_len;
    }
    Ok(100.0 * combine(&total, false))
}
