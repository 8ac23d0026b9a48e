//! Transformer encoder with an autoregressive (teacher) or non-autoregressive
//! (student) decoder, a length-offset predictor, and decoding procedures.
//!
//! All blocks are pre-norm: `x + sublayer(layer_norm(x))`, followed by a final
//! layer norm on each stack.

mod checkpoint;
mod config;
mod decode;
mod graph;
mod loss;
mod params;
mod policy;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AgentCount, DecoderKind, ModelConfig};
pub use decode::{argmax_decode, beam_search, greedy_decode, na_decode, postprocess, Hypothesis};
pub use graph::{positional_encoding, DecoderOut, Graph, ParamGrads};
pub use loss::{length_class, na_targets, xe_loss_ar, xe_loss_length, xe_loss_na};
pub use params::{ParamId, ParamSet};
pub use policy::{
    sample_joint, truncate, JointSample, LengthPrediction, PolicyMatrix, SentenceRule,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError};
use params::{init_tensor, Init};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("source length {len} exceeds max_source_len {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("decoder length {len} outside 1..={max}")]
    InvalidLength { len: usize, max: usize },
    #[error("autoregressive prefix must start with bos")]
    BadPrefix,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("{0} requires a {1:?} decoder")]
    WrongDecoder(&'static str, DecoderKind),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct EncoderLayer {
    pub norm_attn: Norm,
    pub attn: Attention,
    pub norm_ff: Norm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DecoderLayer {
    pub norm_self: Norm,
    pub self_attn: Attention,
    pub norm_cross: Norm,
    pub cross_attn: Attention,
    pub norm_ff: Norm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub embed: ParamId,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: Norm,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: Norm,
    pub output: Linear,
    pub length_head: Option<Linear>,
}

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        let t = init_tensor(shape, init, self.rng);
        self.params.push(name, t)
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.w"), vec![d_in, d_out], Init::Glorot),
            b: self.add(format!("{name}.b"), vec![d_out], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.add(format!("{name}.gain"), vec![d], Init::Ones),
            bias: self.add(format!("{name}.bias"), vec![d], Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, d_ff),
            down: self.linear(&format!("{name}.down"), d_ff, d),
        }
    }
}

/// Encoder-decoder Transformer. The decoder kind decides whether it acts as
/// the autoregressive teacher or the non-autoregressive student; both share
/// one parameter layout so weights transfer by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut b = Builder {
            params: ParamSet::default(),
            rng: &mut rng,
        };
        let embed = b.add(
            "embed".into(),
            vec![config.vocab_size, d],
            Init::Normal((d as f64).powf(-0.5)),
        );
        let encoder = (0..config.n_layers)
            .map(|l| EncoderLayer {
                norm_attn: b.norm(&format!("enc.{l}.norm_attn"), d),
                attn: b.attention(&format!("enc.{l}.attn"), d),
                norm_ff: b.norm(&format!("enc.{l}.norm_ff"), d),
                ff: b.ff(&format!("enc.{l}.ff"), d, config.d_ff),
            })
            .collect();
        let encoder_norm = b.norm("enc.norm", d);
        let decoder = (0..config.n_layers)
            .map(|l| DecoderLayer {
                norm_self: b.norm(&format!("dec.{l}.norm_self"), d),
                self_attn: b.attention(&format!("dec.{l}.self_attn"), d),
                norm_cross: b.norm(&format!("dec.{l}.norm_cross"), d),
                cross_attn: b.attention(&format!("dec.{l}.cross_attn"), d),
                norm_ff: b.norm(&format!("dec.{l}.norm_ff"), d),
                ff: b.ff(&format!("dec.{l}.ff"), d, config.d_ff),
            })
            .collect();
        let decoder_norm = b.norm("dec.norm", d);
        let output = b.linear("out", d, config.vocab_size);
        let length_head = config
            .has_length_head()
            .then(|| b.linear("length", d, config.offset_classes()));
        let layout = Layout {
            embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output,
            length_head,
        };
        let params = b.params;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn decoder(&self) -> DecoderKind {
        self.config.decoder
    }

    /// Inference-only forward through the encoder.
    pub fn encode(&self, source: &[u32]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut g = Graph::new(self, &mut tape);
        let ctx = g.encode(source)?;
        Ok(g.tape().value(ctx).clone())
    }

    /// Encodes a precomputed `[n×d]` feature matrix instead of tokens.
    pub fn encode_features(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut g = Graph::new(self, &mut tape);
        let ctx = g.encode_features(features)?;
        Ok(g.tape().value(ctx).clone())
    }

    /// One parallel pass of the non-autoregressive decoder with `length` agents.
    pub fn decode_na(&self, context: &Tensor, length: usize) -> Result<PolicyMatrix> {
        let mut tape = Tape::new();
        let mut g = Graph::new(self, &mut tape);
        let ctx = g.constant(context.clone());
        let out = g.decode_na(ctx, length)?;
        let lp = g.tape_mut().log_softmax(out.logits)?;
        Ok(PolicyMatrix::new(
            g.tape().value(lp).clone(),
            g.tape().value(out.states).clone(),
        ))
    }

    /// Next-token distribution after `prefix` (which must start with bos).
    pub fn decode_ar_step(&self, context: &Tensor, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self
            .ar_step_log_probs(context, prefix)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    pub fn ar_step_log_probs(&self, context: &Tensor, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.first() != Some(&crate::vocab::BOS) {
            return Err(ModelError::BadPrefix);
        }
        let mut tape = Tape::new();
        let mut g = Graph::new(self, &mut tape);
        let ctx = g.constant(context.clone());
        let out = g.decode_ar(ctx, prefix)?;
        let last = prefix.len() - 1;
        let v = self.config.vocab_size;
        let lp = g.tape_mut().log_softmax(out.logits)?;
        Ok(g.tape().value(lp).data()[last * v..(last + 1) * v].to_vec())
    }

    pub fn predict_length(&self, context: &Tensor, source_len: usize) -> Result<LengthPrediction> {
        let mut tape = Tape::new();
        let mut g = Graph::new(self, &mut tape);
        let ctx = g.constant(context.clone());
        let logits = g.length_logits(ctx)?;
        let logits = g.tape().value(logits).data().to_vec();
        Ok(LengthPrediction::from_logits(
            logits,
            source_len,
            self.config.max_offset,
            self.config.max_target_len,
        ))
    }

    /// Number of agents for `source`: fixed, or from the length predictor.
    pub fn agent_count(&self, context: &Tensor, source_len: usize) -> Result<usize> {
        match self.config.agents {
            AgentCount::Fixed(n) => Ok(n),
            AgentCount::Predicted => Ok(self.predict_length(context, source_len)?.predicted_length),
        }
    }

    /// Encodes `source` and runs the student decoder with the configured
    /// agent count.
    pub fn policy(&self, source: &[u32]) -> Result<PolicyMatrix> {
        if self.config.decoder != DecoderKind::NonAutoregressive {
            return Err(ModelError::WrongDecoder(
                "policy",
                DecoderKind::NonAutoregressive,
            ));
        }
        let ctx = self.encode(source)?;
        let n = self.agent_count(&ctx, source_len(source))?;
        self.decode_na(&ctx, n)
    }

    pub fn sentence_rule(&self) -> SentenceRule {
        SentenceRule::from(self.config.agents)
    }

    /// Copies every parameter whose name and shape match in `teacher`.
    /// Returns the names of student parameters left at their initial value.
    pub fn init_from_teacher(&mut self, teacher: &Seq2Seq) -> Result<Vec<String>> {
        let (s, t) = (&self.config, &teacher.config);
        let same = s.vocab_size == t.vocab_size
            && s.d_model == t.d_model
            && s.n_heads == t.n_heads
            && s.n_layers == t.n_layers
            && s.d_ff == t.d_ff;
        if !same {
            return Err(ModelError::Incompatible(format!(
                "student {s:?} vs teacher {t:?}"
            )));
        }
        let mut skipped = Vec::new();
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            match teacher
                .params
                .find(&name)
                .map(|tid| teacher.params.get(tid))
            {
                Some(src) if src.shape() == self.params.get(id).shape() => {
                    *self.params.get_mut(id) = src.clone();
                }
                _ => skipped.push(name),
            }
        }
        Ok(skipped)
    }
}

/// Source length excluding a trailing eos, if present.
pub fn source_len(source: &[u32]) -> usize {
    match source.last() {
        Some(&crate::vocab::EOS) => source.len() - 1,
        _ => source.len(),
    }
}
