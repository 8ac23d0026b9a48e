use std::collections::BTreeMap;

use super::{check_refs, MetricError, NgramCounts, Result, MAX_N};

/// Width of the gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;

/// Number of documents containing each n-gram. A document is the set of
/// n-grams over all references of one input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocFreqTable {
    num_docs: usize,
    df: BTreeMap<Vec<u32>, usize>,
}

impl DocFreqTable {
    pub fn from_references<R: AsRef<[u32]>>(docs: &[Vec<R>]) -> Self {
        let mut df = BTreeMap::new();
        for refs in docs {
            let mut seen = std::collections::BTreeSet::new();
            for r in refs {
                for (g, _) in NgramCounts::new(r.as_ref(), MAX_N).iter() {
                    seen.insert(g.to_vec());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self {
            num_docs: docs.len(),
            df,
        }
    }

    /// A table with explicit counts.
    pub fn from_counts(
        num_docs: usize,
        counts: impl IntoIterator<Item = (Vec<u32>, usize)>,
    ) -> Self {
        Self {
            num_docs,
            df: counts.into_iter().collect(),
        }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn df(&self, ngram: &[u32]) -> usize {
        self.df.get(ngram).copied().unwrap_or(0)
    }

    pub fn idf(&self, ngram: &[u32]) -> f64 {
        (self.num_docs as f64).ln() - (self.df(ngram).max(1) as f64).ln()
    }
}

/// Per-order tf-idf vectors and their norms.
pub(super) struct TfIdf {
    pub(super) vecs: Vec<BTreeMap<Vec<u32>, f64>>,
    pub(super) norms: Vec<f64>,
    pub(super) len: usize,
}

pub(super) fn tfidf(seq: &[u32], df: &DocFreqTable) -> TfIdf {
    let mut vecs = vec![BTreeMap::new(); MAX_N];
    let mut norms = vec![0.0; MAX_N];
    for (g, c) in NgramCounts::new(seq, MAX_N).iter() {
        let v = c as f64 * df.idf(g);
        vecs[g.len() - 1].insert(g.to_vec(), v);
        norms[g.len() - 1] += v * v;
    }
    for n in &mut norms {
        *n = n.sqrt();
    }
    TfIdf {
        vecs,
        norms,
        len: seq.len(),
    }
}

pub(super) fn similarity(h: &TfIdf, r: &TfIdf, sigma: f64) -> f64 {
    let delta = h.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
    let mut total = 0.0;
    for n in 0..MAX_N {
        let mut val = 0.0;
        for (g, vh) in &h.vecs[n] {
            if let Some(vr) = r.vecs[n].get(g) {
                val += vh.min(*vr) * vr;
            }
        }
        if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= h.norms[n] * r.norms[n];
        }
        total += val * penalty;
    }
    total / MAX_N as f64
}

/// CIDEr-D with the default σ.
pub fn cider_d<R: AsRef<[u32]>>(hyp: &[u32], refs: &[R], df: &DocFreqTable) -> Result<f64> {
    cider_d_with_sigma(hyp, refs, df, CIDER_SIGMA)
}

/// Clipped tf-idf cosine per order with a gaussian length penalty, averaged
/// over orders and references, scaled by 10.
pub fn cider_d_with_sigma<R: AsRef<[u32]>>(
    hyp: &[u32],
    refs: &[R],
    df: &DocFreqTable,
    sigma: f64,
) -> Result<f64> {
    check_refs(refs)?;
    if df.num_docs == 0 {
        return Err(MetricError::MissingDocFreq);
    }
    let h = tfidf(hyp, df);
    let mut sims: Vec<f64> = refs
        .iter()
        .map(|r| similarity(&h, &tfidf(r.as_ref(), df), sigma))
        .collect();
    // summation order fixed so the score is exactly reference-order invariant
    sims.sort_by(f64::total_cmp);
    Ok(10.0 * sims.iter().sum::<f64>() / refs.len() as f64)
}
