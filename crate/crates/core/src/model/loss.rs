use super::{source_len, AgentCount, Graph, Result, SentenceRule};
use crate::tensor::Var;
use crate::vocab::{BOS, EOS, PAD};

/// Per-agent XE targets for `n` agents.
///
/// Under [`SentenceRule::TruncateAtEos`] the agent after the last content
/// token targets eos and every later agent targets pad, so the truncation
/// point is learnable. Under [`SentenceRule::KeepAll`] agents target the
/// content tokens directly.
pub fn na_targets(content: &[u32], n: usize, rule: SentenceRule) -> Vec<usize> {
    let mut t: Vec<usize> = content.iter().map(|&c| c as usize).collect();
    match rule {
        SentenceRule::TruncateAtEos => t.push(EOS as usize),
        SentenceRule::KeepAll if t.is_empty() => t.push(EOS as usize),
        SentenceRule::KeepAll => {}
    }
    t.resize(n, PAD as usize);
    t
}

/// Class index of the offset `tgt_len - src_len`, clamped into
/// `[-max_offset, +max_offset]`.
pub fn length_class(src_len: usize, tgt_len: usize, max_offset: usize) -> usize {
    let m = max_offset as i64;
    let off = (tgt_len as i64 - src_len as i64).clamp(-m, m);
    (off + m) as usize
}

/// Negative mean log-likelihood of `targets` under row-wise log-softmax.
fn mean_nll(g: &mut Graph<'_>, logits: Var, targets: &[usize]) -> Result<Var> {
    let t = g.tape_mut();
    let lp = t.log_softmax(logits)?;
    let picked = t.pick(lp, targets)?;
    let mean = t.mean(picked)?;
    Ok(t.scale(mean, -1.0)?)
}

/// Cross-entropy of the length predictor on the true offset class.
pub fn xe_loss_length(
    g: &mut Graph<'_>,
    context: Var,
    src_len: usize,
    tgt_len: usize,
) -> Result<Var> {
    let max_offset = g.model().config().max_offset;
    let logits = g.length_logits(context)?;
    mean_nll(g, logits, &[length_class(src_len, tgt_len, max_offset)])
}

/// Per-position XE for the non-autoregressive student, averaged over agents.
/// With a predicted agent count the decoder runs at the true target length
/// and the length-predictor loss is added.
pub fn xe_loss_na(g: &mut Graph<'_>, source: &[u32], target: &[u32]) -> Result<Var> {
    let cfg = g.model().config().clone();
    let rule = SentenceRule::from(cfg.agents);
    let context = g.encode(source)?;
    let n = match cfg.agents {
        AgentCount::Fixed(n) => n,
        AgentCount::Predicted => target.len().clamp(1, cfg.max_target_len),
    };
    let targets = na_targets(target, n, rule);
    let out = g.decode_na(context, n)?;
    let loss = mean_nll(g, out.logits, &targets)?;
    if cfg.has_length_head() {
        let ll = xe_loss_length(g, context, source_len(source), target.len())?;
        return Ok(g.tape_mut().add(loss, ll)?);
    }
    Ok(loss)
}

/// Teacher-forced XE for the autoregressive decoder: inputs `[bos, y..]`,
/// targets `[y.., eos]`.
pub fn xe_loss_ar(g: &mut Graph<'_>, source: &[u32], target: &[u32]) -> Result<Var> {
    let context = g.encode(source)?;
    let mut inputs = Vec::with_capacity(target.len() + 1);
    inputs.push(BOS);
    inputs.extend_from_slice(target);
    let mut targets: Vec<usize> = target.iter().map(|&t| t as usize).collect();
    targets.push(EOS as usize);
    let out = g.decode_ar(context, &inputs)?;
    mean_nll(g, out.logits, &targets)
}
