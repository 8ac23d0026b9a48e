use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use super::{HarnessError, Result};
use crate::data::ParallelCorpus;
use crate::metrics::{cider_d, corpus_bleu, corpus_gleu, repetition_rate, DocFreqTable};
use crate::model::{beam_search, na_decode, postprocess, Seq2Seq};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Beam search with the given width.
    Ar { beam: usize },
    /// One-pass argmax over the agents.
    Na,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMode::Ar { beam } => write!(f, "ar:{beam}"),
            DecodeMode::Na => f.write_str("na"),
        }
    }
}

impl FromStr for DecodeMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "na" => Ok(DecodeMode::Na),
            "ar" => Ok(DecodeMode::Ar { beam: 3 }),
            _ => s
                .strip_prefix("ar:")
                .and_then(|w| w.parse().ok())
                .filter(|&w| w > 0)
                .map(|beam| DecodeMode::Ar { beam })
                .ok_or_else(|| HarnessError::Config(format!("bad decode mode {s:?}"))),
        }
    }
}

/// Decodes every source of `corpus`.
pub fn decode_corpus(
    model: &Seq2Seq,
    corpus: &ParallelCorpus,
    mode: DecodeMode,
    postprocess_output: bool,
) -> Result<Vec<Vec<u32>>> {
    let max_len = model.config().max_target_len;
    corpus
        .iter()
        .map(|p| {
            let out = match mode {
                DecodeMode::Ar { beam } => beam_search(model, p.source.as_slice(), beam, max_len)?
                    .to_sequence()
                    .content()
                    .to_vec(),
                DecodeMode::Na => na_decode(model, p.source.as_slice())?,
            };
            Ok(if postprocess_output {
                postprocess(&out)
            } else {
                out
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusScores {
    pub bleu: f64,
    pub gleu: f64,
    /// Mean sentence CIDEr-D with document frequencies from the references.
    pub cider: f64,
    pub repetition: f64,
}

/// All corpus metrics, on the 0-100 scale for BLEU/GLEU and the 0-10
/// scale for CIDEr-D. Repetition is the mean sentence rate.
pub fn score_corpus(hyps: &[Vec<u32>], refs: &[Vec<Vec<u32>>]) -> Result<CorpusScores> {
    let df = DocFreqTable::from_references(refs);
    let mut cider = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        cider += cider_d(h, r, &df)?;
    }
    let n = hyps.len().max(1) as f64;
    Ok(CorpusScores {
        bleu: corpus_bleu(hyps, refs)?,
        gleu: corpus_gleu(hyps, refs)?,
        cider: cider / n,
        repetition: hyps.iter().map(|h| repetition_rate(h)).sum::<f64>() / n,
    })
}

/// Scores of the pairs whose source length lies in `[lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketScore {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub bleu: f64,
    pub gleu: f64,
}

/// Splits by source length at `edges` (ascending); the last bucket is
/// open-ended. Empty buckets are skipped.
pub fn bucket_scores(
    corpus: &ParallelCorpus,
    hyps: &[Vec<u32>],
    edges: &[usize],
) -> Result<Vec<BucketScore>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config(
            "bucket edges must be ascending".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, &lo) in edges.iter().enumerate() {
        let hi = edges.get(i + 1).copied().unwrap_or(usize::MAX);
        let (mut h, mut r) = (Vec::new(), Vec::new());
        for (p, hyp) in corpus.iter().zip(hyps) {
            let len = p.source.content().len();
            if (lo..hi).contains(&len) {
                h.push(hyp.clone());
                r.push(p.refs());
            }
        }
        if h.is_empty() {
            continue;
        }
        out.push(BucketScore {
            lo,
            hi,
            count: h.len(),
            bleu: corpus_bleu(&h, &r)?,
            gleu: corpus_gleu(&h, &r)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: DecodeMode,
    pub postprocess: bool,
    pub sentences: usize,
    pub scores: CorpusScores,
    pub bucket_edges: Vec<usize>,
    pub buckets: Vec<BucketScore>,
    /// Mean over runs of the per-sentence decode time.
    pub latency_ms: f64,
    pub latency_runs: usize,
    /// Reference latency divided by ours, when a reference was given.
    pub speedup: Option<f64>,
}

impl EvalReport {
    pub const HEADER: [&'static str; 12] = [
        "mode",
        "postprocess",
        "sentences",
        "bleu",
        "gleu",
        "cider",
        "repetition",
        "latency_ms",
        "speedup",
        "bucket_lo",
        "bucket_hi",
        "bucket_gleu",
    ];

    /// One summary row (empty bucket columns) and one row per bucket.
    pub fn rows(&self) -> Vec<[String; 12]> {
        let head = |bucket: [String; 3]| {
            let [lo, hi, g] = bucket;
            [
                self.mode.to_string(),
                self.postprocess.to_string(),
                self.sentences.to_string(),
                format!("{:.4}", self.scores.bleu),
                format!("{:.4}", self.scores.gleu),
                format!("{:.4}", self.scores.cider),
                format!("{:.6}", self.scores.repetition),
                format!("{:.4}", self.latency_ms),
                self.speedup.map(|s| format!("{s:.3}")).unwrap_or_default(),
                lo,
                hi,
                g,
            ]
        };
        let mut rows = vec![head(Default::default())];
        for b in &self.buckets {
            let hi = if b.hi == usize::MAX {
                "inf".to_string()
            } else {
                b.hi.to_string()
            };
            rows.push(head([b.lo.to_string(), hi, format!("{:.4}", b.gleu)]));
        }
        rows
    }
}

/// Decodes and scores the whole corpus. The corpus is decoded
/// `latency_runs` times (at least 3); latency is the mean per sentence.
pub fn evaluate(
    model: &Seq2Seq,
    corpus: &ParallelCorpus,
    mode: DecodeMode,
    postprocess_output: bool,
    bucket_edges: &[usize],
    latency_runs: usize,
    reference_latency_ms: Option<f64>,
) -> Result<EvalReport> {
    let runs = latency_runs.max(3);
    let mut hyps = Vec::new();
    let mut total = 0.0;
    for _ in 0..runs {
        let start = Instant::now();
        hyps = decode_corpus(model, corpus, mode, postprocess_output)?;
        total += start.elapsed().as_secs_f64() * 1e3;
    }
    let latency_ms = total / runs as f64 / corpus.len().max(1) as f64;
    let refs: Vec<Vec<Vec<u32>>> = corpus.iter().map(|p| p.refs()).collect();
    Ok(EvalReport {
        mode,
        postprocess: postprocess_output,
        sentences: corpus.len(),
        scores: score_corpus(&hyps, &refs)?,
        bucket_edges: bucket_edges.to_vec(),
        buckets: bucket_scores(corpus, &hyps, bucket_edges)?,
        latency_ms,
        latency_runs: runs,
        speedup: reference_latency_ms.map(|r| r / latency_ms),
    })
}
