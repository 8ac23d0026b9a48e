use super::{AdvantageVector, CmalError, Result};
use crate::model::JointSample;
use crate::tensor::{Tape, Tensor, Var};

/// Constant weight matrix `W[a, u_a] += scale · A_a` over `[agents×vocab]`.
pub fn reinforce_weights(
    agents: usize,
    vocab: usize,
    samples: &[(&JointSample, &AdvantageVector)],
    scale: f64,
) -> Result<Tensor> {
    let mut w = vec![0.0; agents * vocab];
    for (s, adv) in samples {
        if s.actions.len() != agents || adv.advantages.len() != agents {
            return Err(CmalError::SampleMismatch(format!(
                "{} actions and {} advantages for {agents} agents",
                s.actions.len(),
                adv.advantages.len()
            )));
        }
        for (a, (&u, &adv)) in s.actions.iter().zip(&adv.advantages).enumerate() {
            if u as usize >= vocab {
                return Err(CmalError::SampleMismatch(format!(
                    "token {u} outside vocabulary"
                )));
            }
            w[a * vocab + u as usize] += scale * adv;
        }
    }
    Ok(Tensor::new(vec![agents, vocab], w)?)
}

/// `−Σ_s Σ_a A_a log π_a(u_a) / |samples|` for samples drawn from the
/// policy whose log-probabilities are `log_probs` `[agents×vocab]`.
/// Advantages enter as constants, so gradients flow through `log_probs` only.
pub fn reinforce_loss(
    tape: &mut Tape,
    log_probs: Var,
    samples: &[(&JointSample, &AdvantageVector)],
) -> Result<Var> {
    let shape = tape.shape(log_probs).to_vec();
    if shape.len() != 2 {
        return Err(CmalError::SampleMismatch(format!(
            "log-probs of shape {shape:?}"
        )));
    }
    let scale = 1.0 / samples.len().max(1) as f64;
    let w = reinforce_weights(shape[0], shape[1], samples, scale)?;
    let w = tape.constant(w);
    let prod = tape.mul(w, log_probs)?;
    let total = tape.sum(prod)?;
    Ok(tape.scale(total, -1.0)?)
}
