use std::hint::black_box;
use std::time::Instant;

use super::{HarnessError, Result};
use crate::model::{argmax_decode, source_len, truncate, AgentCount, DecoderKind, Seq2Seq};
use crate::vocab::{is_reserved, BOS};

/// Per-sentence decode time at one target length.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub length: usize,
    /// Median over runs, milliseconds.
    pub ar_ms: f64,
    pub na_ms: f64,
    pub speedup: f64,
}

impl LatencyRow {
    pub const HEADER: [&'static str; 4] = ["length", "ar_ms", "na_ms", "speedup"];

    pub fn row(&self) -> [String; 4] {
        [
            self.length.to_string(),
            format!("{:.5}", self.ar_ms),
            format!("{:.5}", self.na_ms),
            format!("{:.3}", self.speedup),
        ]
    }
}

/// Greedy autoregressive decode forced to exactly `length` content tokens
/// (eos is never chosen), so the step count is controlled.
pub fn ar_decode_exact(model: &Seq2Seq, source: &[u32], length: usize) -> Result<Vec<u32>> {
    let context = model.encode(source)?;
    let mut prefix = vec![BOS];
    for _ in 0..length {
        let lp = model.ar_step_log_probs(&context, &prefix)?;
        let next = (0..lp.len() as u32)
            .filter(|&t| !is_reserved(t))
            .max_by(|&a, &b| lp[a as usize].total_cmp(&lp[b as usize]).then(b.cmp(&a)))
            .expect("vocabulary has content tokens");
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

/// Agents a one-pass decode needs to emit `length` tokens: the fixed count,
/// or `length` itself under a predicted count.
pub fn na_agents(model: &Seq2Seq, length: usize) -> Result<usize> {
    match model.config().agents {
        AgentCount::Fixed(n) if n >= length => Ok(n),
        AgentCount::Fixed(n) => Err(HarnessError::Config(format!(
            "{n} fixed agents cannot emit {length} tokens"
        ))),
        AgentCount::Predicted => Ok(length),
    }
}

/// One-pass decode with the agent count for `length`.
pub fn na_decode_for_length(model: &Seq2Seq, source: &[u32], length: usize) -> Result<Vec<u32>> {
    let n = na_agents(model, length)?;
    let context = model.encode(source)?;
    let policy = model.decode_na(&context, n)?;
    Ok(truncate(&argmax_decode(&policy), model.sentence_rule()))
}

fn time_ms(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / reps as f64)
}

/// Batch-size-one decode latency of the teacher and the student for each
/// target length: median of `runs` (at least 3) timings, each averaged
/// over `reps` decodes. Only decoding is timed. After one untimed warm-up
/// pass, each run times every length in turn, so drift in machine speed
/// is spread across lengths instead of landing on one.
pub fn bench_latency(
    teacher: &Seq2Seq,
    student: &Seq2Seq,
    source: &[u32],
    lengths: &[usize],
    runs: usize,
    reps: usize,
) -> Result<Vec<LatencyRow>> {
    if teacher.decoder() != DecoderKind::Autoregressive
        || student.decoder() != DecoderKind::NonAutoregressive
    {
        return Err(HarnessError::Config(
            "bench needs an autoregressive teacher and a non-autoregressive student".into(),
        ));
    }
    if source_len(source) == 0 {
        return Err(HarnessError::Config("bench source is empty".into()));
    }
    for &length in lengths {
        if length == 0 || length > teacher.config().max_target_len {
            return Err(HarnessError::Config(format!(
                "length {length} outside 1..={}",
                teacher.config().max_target_len
            )));
        }
        na_agents(student, length)?;
    }
    let (runs, reps) = (runs.max(3), reps.max(1));
    let ar = |length| -> Result<()> {
        black_box(ar_decode_exact(teacher, source, length)?);
        Ok(())
    };
    let na = |length| -> Result<()> {
        black_box(na_decode_for_length(student, source, length)?);
        Ok(())
    };
    for &length in lengths {
        ar(length)?;
        na(length)?;
    }
    let mut ar_times = vec![Vec::with_capacity(runs); lengths.len()];
    let mut na_times = vec![Vec::with_capacity(runs); lengths.len()];
    for _ in 0..runs {
        for (i, &length) in lengths.iter().enumerate() {
            ar_times[i].push(time_ms(reps, || ar(length))?);
            na_times[i].push(time_ms(reps, || na(length))?);
        }
    }
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(i, &length)| {
            let ar_ms = super::median(&ar_times[i]);
            let na_ms = super::median(&na_times[i]);
            LatencyRow {
                length,
                ar_ms,
                na_ms,
                speedup: ar_ms / na_ms,
            }
        })
        .collect())
}
