use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    /// Causal decoder fed with shifted target embeddings (the teacher).
    Autoregressive,
    /// Bidirectional decoder fed with positional encodings only (the student).
    NonAutoregressive,
}

/// How many agents (decoder positions) a non-autoregressive pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentCount {
    /// Always `N` agents; the sentence is truncated at the first eos.
    Fixed(usize),
    /// Agent count from the length predictor; no truncation.
    Predicted,
}

impl fmt::Display for AgentCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentCount::Fixed(n) => write!(f, "{n}"),
            AgentCount::Predicted => f.write_str("predicted"),
        }
    }
}

impl FromStr for AgentCount {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "predicted" => Ok(AgentCount::Predicted),
            n => n
                .parse()
                .map(AgentCount::Fixed)
                .map_err(|_| ModelError::InvalidConfig(format!("bad agent count {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_source_len: usize,
    /// `N_max`: upper bound on decoder length (agents or AR steps).
    pub max_target_len: usize,
    pub agents: AgentCount,
    /// Length-offset classes cover `[-max_offset, +max_offset]`.
    pub max_offset: usize,
    pub decoder: DecoderKind,
    pub dropout: f64,
    /// Add sinusoidal positions to source embeddings.
    pub source_positions: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 24,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 64,
            max_source_len: 64,
            max_target_len: 64,
            agents: AgentCount::Fixed(12),
            max_offset: 20,
            decoder: DecoderKind::NonAutoregressive,
            dropout: 0.0,
            source_positions: true,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.vocab_size <= crate::vocab::NUM_RESERVED as usize {
            return bad("vocabulary has no content tokens");
        }
        if let AgentCount::Fixed(n) = self.agents {
            if n == 0 || n > self.max_target_len {
                return bad("fixed agent count must be in 1..=max_target_len");
            }
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return bad("length limits must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn offset_classes(&self) -> usize {
        2 * self.max_offset + 1
    }

    pub fn has_length_head(&self) -> bool {
        self.decoder == DecoderKind::NonAutoregressive && self.agents == AgentCount::Predicted
    }

    /// Same architecture, other decoding mode.
    pub fn with_decoder(&self, decoder: DecoderKind) -> Self {
        Self {
            decoder,
            ..self.clone()
        }
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("vocab_size", self.vocab_size.to_string());
        put("d_model", self.d_model.to_string());
        put("n_heads", self.n_heads.to_string());
        put("n_layers", self.n_layers.to_string());
        put("d_ff", self.d_ff.to_string());
        put("max_source_len", self.max_source_len.to_string());
        put("max_target_len", self.max_target_len.to_string());
        put("agents", self.agents.to_string());
        put("max_offset", self.max_offset.to_string());
        put(
            "decoder",
            match self.decoder {
                DecoderKind::Autoregressive => "ar",
                DecoderKind::NonAutoregressive => "na",
            }
            .to_string(),
        );
        // {:?} on f64 round-trips exactly
        put("dropout", format!("{:?}", self.dropout));
        put("source_positions", self.source_positions.to_string());
        put("ln_eps", format!("{:?}", self.ln_eps));
        m
    }

    pub fn from_kv(m: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        fn get<T: FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<T, ModelError> {
            let v = m
                .get(k)
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing key {k}")))?;
            v.parse()
                .map_err(|_| ModelError::InvalidConfig(format!("bad value for {k}: {v:?}")))
        }
        let decoder = match m.get("decoder").map(String::as_str) {
            Some("ar") => DecoderKind::Autoregressive,
            Some("na") => DecoderKind::NonAutoregressive,
            other => return Err(ModelError::InvalidConfig(format!("bad decoder {other:?}"))),
        };
        let cfg = Self {
            vocab_size: get(m, "vocab_size")?,
            d_model: get(m, "d_model")?,
            n_heads: get(m, "n_heads")?,
            n_layers: get(m, "n_layers")?,
            d_ff: get(m, "d_ff")?,
            max_source_len: get(m, "max_source_len")?,
            max_target_len: get(m, "max_target_len")?,
            agents: get(m, "agents")?,
            max_offset: get(m, "max_offset")?,
            decoder,
            dropout: get(m, "dropout")?,
            source_positions: get(m, "source_positions")?,
            ln_eps: get(m, "ln_eps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
