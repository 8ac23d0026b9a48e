use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Attention, DecoderKind, FeedForward, Linear, ModelError, Norm, ParamId, Result, Seq2Seq,
};
use crate::tensor::{Tape, Tensor, Var};

/// Large negative score for masked attention entries. Finite, and
/// `exp(MASKED - max)` underflows to exactly zero.
const MASKED: f64 = -1e30;

/// Sinusoidal positions, `[n×d]` row-major:
/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(n: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; n * d];
    for p in 0..n {
        for i in (0..d).step_by(2) {
            let angle = p as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[p * d + i] = angle.sin();
            if i + 1 < d {
                pe[p * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

pub struct DecoderOut {
    /// Final agent states `[n×d]`.
    pub states: Var,
    /// Unnormalized scores `[n×|U|]`.
    pub logits: Var,
}

/// Gradients of every parameter that took part in a forward pass.
pub type ParamGrads = Vec<(ParamId, Vec<f64>)>;

/// One forward pass of a [`Seq2Seq`] recorded on a tape. Parameters are
/// bound to tape leaves on first use.
pub struct Graph<'a> {
    model: &'a Seq2Seq,
    tape: &'a mut Tape,
    bound: Vec<Option<Var>>,
    track_grads: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'a> Graph<'a> {
    /// Inference graph: parameters are constants.
    pub fn new(model: &'a Seq2Seq, tape: &'a mut Tape) -> Self {
        Self {
            model,
            tape,
            bound: vec![None; model.params().len()],
            track_grads: false,
            dropout_rng: None,
        }
    }

    /// Training graph: parameters require gradients; dropout (if configured)
    /// draws its masks from `seed`.
    pub fn trainable(model: &'a Seq2Seq, tape: &'a mut Tape, seed: u64) -> Self {
        let mut g = Self::new(model, tape);
        g.track_grads = true;
        if model.config().dropout > 0.0 {
            g.dropout_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        g
    }

    pub fn model(&self) -> &Seq2Seq {
        self.model
    }

    pub fn tape(&self) -> &Tape {
        self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        self.tape
    }

    /// Uses `var` in place of parameter `id` (e.g. for gradient checks).
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.0] = Some(var);
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self
            .model
            .params()
            .get(id)
            .clone()
            .requires_grad(self.track_grads);
        let v = self.tape.leaf(t);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Runs backward from `loss` and collects parameter gradients.
    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads> {
        self.tape.backward(loss)?;
        Ok(self.param_grads())
    }

    pub fn param_grads(&self) -> ParamGrads {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let g = self.tape.grad((*v)?)?;
                Some((ParamId(i), g.to_vec()))
            })
            .collect()
    }

    fn linear(&mut self, x: Var, l: &Linear) -> Result<Var> {
        let w = self.param(l.w);
        let b = self.param(l.b);
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_bias(y, b)?)
    }

    fn norm(&mut self, x: Var, n: &Norm) -> Result<Var> {
        let g = self.param(n.gain);
        let b = self.param(n.bias);
        Ok(self.tape.layer_norm(x, g, b, self.model.config().ln_eps)?)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.model.config().dropout;
        match self.dropout_rng.as_mut() {
            Some(rng) => Ok(self.tape.dropout(x, p, rng)?),
            None => Ok(x),
        }
    }

    fn attention(&mut self, queries: Var, keys: Var, a: &Attention, causal: bool) -> Result<Var> {
        let cfg = self.model.config();
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let q = self.linear(queries, &a.q)?;
        let k = self.linear(keys, &a.k)?;
        let v = self.linear(keys, &a.v)?;
        let nq = self.tape.shape(q)[0];
        let nk = self.tape.shape(k)[0];
        let mask = if causal {
            let mut m = vec![0.0; nq * nk];
            for i in 0..nq {
                for j in i + 1..nk {
                    m[i * nk + j] = MASKED;
                }
            }
            Some(self.tape.constant(Tensor::new(vec![nq, nk], m)?))
        } else {
            None
        };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    self.tape.slice_cols(q, h * dh, dh)?,
                    self.tape.slice_cols(k, h * dh, dh)?,
                    self.tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let kt = self.tape.transpose(kh)?;
            let s = self.tape.matmul(qh, kt)?;
            let mut s = self.tape.scale(s, scale)?;
            if let Some(m) = mask {
                s = self.tape.add(s, m)?;
            }
            let p = self.tape.softmax(s, 1)?;
            let p = self.dropout(p)?;
            outs.push(self.tape.matmul(p, vh)?);
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            self.tape.concat(&outs, 1)?
        };
        self.linear(cat, &a.o)
    }

    fn feed_forward(&mut self, x: Var, f: &FeedForward) -> Result<Var> {
        let h = self.linear(x, &f.up)?;
        let h = self.tape.relu(h)?;
        let h = self.dropout(h)?;
        self.linear(h, &f.down)
    }

    fn residual(&mut self, x: Var, y: Var) -> Result<Var> {
        let y = self.dropout(y)?;
        Ok(self.tape.add(x, y)?)
    }

    fn embed_tokens(&mut self, ids: &[u32], positions: bool) -> Result<Var> {
        let cfg = self.model.config();
        let d = cfg.d_model;
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let table = self.param(self.model.layout().embed);
        let e = self.tape.embedding_gather(table, &ids)?;
        let e = self.tape.scale(e, (d as f64).sqrt())?;
        if !positions {
            return Ok(e);
        }
        let pe = self.tape.constant(Tensor::new(
            vec![ids.len(), d],
            positional_encoding(ids.len(), d),
        )?);
        Ok(self.tape.add(e, pe)?)
    }

    /// Encoder stack over token ids.
    pub fn encode(&mut self, source: &[u32]) -> Result<Var> {
        let cfg = self.model.config();
        if source.len() > cfg.max_source_len {
            return Err(ModelError::SourceTooLong {
                len: source.len(),
                max: cfg.max_source_len,
            });
        }
        if source.is_empty() {
            return Err(ModelError::InvalidLength {
                len: 0,
                max: cfg.max_source_len,
            });
        }
        let x = self.embed_tokens(source, cfg.source_positions)?;
        self.encoder_stack(x)
    }

    /// Encoder stack over a precomputed `[n×d]` feature matrix.
    pub fn encode_features(&mut self, features: &Tensor) -> Result<Var> {
        let cfg = self.model.config();
        if features.rank() != 2 || features.cols() != cfg.d_model || features.rows() == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "features must be [n×{}], got {:?}",
                cfg.d_model,
                features.shape()
            )));
        }
        if features.rows() > cfg.max_source_len {
            return Err(ModelError::SourceTooLong {
                len: features.rows(),
                max: cfg.max_source_len,
            });
        }
        let x = self.tape.constant(features.clone());
        self.encoder_stack(x)
    }

    fn encoder_stack(&mut self, mut x: Var) -> Result<Var> {
        let layout = self.model.layout();
        for layer in &layout.encoder {
            let h = self.norm(x, &layer.norm_attn)?;
            let h = self.attention(h, h, &layer.attn, false)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, &layer.norm_ff)?;
            let h = self.feed_forward(h, &layer.ff)?;
            x = self.residual(x, h)?;
        }
        self.norm(x, &layout.encoder_norm)
    }

    fn decoder_stack(&mut self, mut x: Var, context: Var, causal: bool) -> Result<DecoderOut> {
        let layout = self.model.layout();
        for layer in &layout.decoder {
            let h = self.norm(x, &layer.norm_self)?;
            let h = self.attention(h, h, &layer.self_attn, causal)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, &layer.norm_cross)?;
            let h = self.attention(h, context, &layer.cross_attn, false)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, &layer.norm_ff)?;
            let h = self.feed_forward(h, &layer.ff)?;
            x = self.residual(x, h)?;
        }
        let states = self.norm(x, &layout.decoder_norm)?;
        let logits = self.linear(states, &layout.output)?;
        Ok(DecoderOut { states, logits })
    }

    /// Non-autoregressive decoder: inputs are positional encodings only and
    /// self-attention is unmasked, so all `length` rows come out of one pass.
    pub fn decode_na(&mut self, context: Var, length: usize) -> Result<DecoderOut> {
        let cfg = self.model.config();
        if cfg.decoder != DecoderKind::NonAutoregressive {
            return Err(ModelError::WrongDecoder(
                "decode_na",
                DecoderKind::NonAutoregressive,
            ));
        }
        if length == 0 || length > cfg.max_target_len {
            return Err(ModelError::InvalidLength {
                len: length,
                max: cfg.max_target_len,
            });
        }
        let d = cfg.d_model;
        let x = self.tape.constant(Tensor::new(
            vec![length, d],
            positional_encoding(length, d),
        )?);
        self.decoder_stack(x, context, false)
    }

    /// Autoregressive decoder under a causal mask. Row `i` of the logits
    /// predicts the token following `inputs[..=i]`.
    pub fn decode_ar(&mut self, context: Var, inputs: &[u32]) -> Result<DecoderOut> {
        let cfg = self.model.config();
        if cfg.decoder != DecoderKind::Autoregressive {
            return Err(ModelError::WrongDecoder(
                "decode_ar",
                DecoderKind::Autoregressive,
            ));
        }
        if inputs.is_empty() || inputs.len() > cfg.max_target_len {
            return Err(ModelError::InvalidLength {
                len: inputs.len(),
                max: cfg.max_target_len,
            });
        }
        let x = self.embed_tokens(inputs, true)?;
        self.decoder_stack(x, context, true)
    }

    /// Length-offset logits `[1×(2·max_offset+1)]` from mean-pooled context.
    pub fn length_logits(&mut self, context: Var) -> Result<Var> {
        let head = self
            .model
            .layout()
            .length_head
            .clone()
            .ok_or_else(|| ModelError::InvalidConfig("model has no length predictor".into()))?;
        let pooled = self.tape.mean_rows(context)?;
        self.linear(pooled, &head)
    }
}
