//! Miniature next-token models: a GPT-2 style decoder-only transformer and
//! an LSTM, both mapping a padded token batch to logits of shape
//! [batch, positions, vocab].

mod checkpoint;
mod lstm;
mod transformer;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use lstm::{lstm_forward, LstmConfig};
pub use transformer::{transformer_forward, TransformerConfig};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};
use crate::tokenizer::{EncodedSequence, PAD};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Transformer,
    Lstm,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Transformer => "transformer",
            Architecture::Lstm => "lstm",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "transformer" => Ok(Architecture::Transformer),
            "lstm" => Ok(Architecture::Lstm),
            other => Err(format!("unknown architecture {other:?} (expected transformer or lstm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Transformer(TransformerConfig),
    Lstm(LstmConfig),
}

impl ModelConfig {
    pub fn architecture(&self) -> Architecture {
        match self {
            ModelConfig::Transformer(_) => Architecture::Transformer,
            ModelConfig::Lstm(_) => Architecture::Lstm,
        }
    }

    pub fn vocab(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.vocab,
            ModelConfig::Lstm(c) => c.vocab,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelConfig::Transformer(c) => c.seed,
            ModelConfig::Lstm(c) => c.seed,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Transformer(c) => c.dropout,
            ModelConfig::Lstm(c) => c.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Transformer(c) => c.validate(),
            ModelConfig::Lstm(c) => c.validate(),
        }
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.parameter_count(),
            ModelConfig::Lstm(c) => c.parameter_count(),
        }
    }
}

/// Named weights of one model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    tensors: Vec<(String, Tensor)>,
}

impl ModelParameters {
    pub(crate) fn new(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Self {
        ModelParameters { config, tensors }
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.is_finite())
    }

    /// Places every tensor on `g` as a differentiable leaf.
    pub fn attach(&self, g: &mut Graph) -> ParamVars {
        let vars = self.tensors.iter().map(|(n, t)| (n.clone(), g.param(t.clone()))).collect();
        ParamVars { vars }
    }

    /// Like [`attach`](Self::attach) but uses the existing node `var` in
    /// place of the tensor called `name`, so a loss can be differentiated
    /// with respect to that one tensor.
    pub fn attach_replacing(&self, g: &mut Graph, name: &str, var: Var) -> Result<ParamVars> {
        let expected = self.get(name).ok_or_else(|| Error::InvalidModelConfig(format!("missing parameter {name}")))?;
        if g.shape(var) != expected.shape() {
            return Err(Error::ShapeMismatch {
                op: "attach_replacing",
                left: expected.shape().to_vec(),
                right: g.shape(var).to_vec(),
            });
        }
        let vars = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), if n == name { var } else { g.constant(t.clone()) }))
            .collect();
        Ok(ParamVars { vars })
    }
}

/// Graph handles for a [`ModelParameters`], in parameter order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidModelConfig(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Right-padded rectangular batch of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<usize>, batch: usize, len: usize) -> Result<Self> {
        if ids.len() != batch * len || batch == 0 || len == 0 {
            return Err(Error::InvalidOp {
                op: "token_batch",
                msg: format!("{} ids for batch {batch} x len {len}", ids.len()),
            });
        }
        Ok(TokenBatch { ids, batch, len })
    }

    /// Pads every sequence with PAD to the longest one.
    pub fn from_sequences<'a, I>(seqs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a EncodedSequence>,
    {
        let seqs: Vec<&EncodedSequence> = seqs.into_iter().collect();
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in &seqs {
            ids.extend_from_slice(&s.ids);
            ids.extend(std::iter::repeat_n(PAD, len - s.len()));
        }
        TokenBatch::new(ids, seqs.len(), len)
    }

    /// Model inputs and next-token targets: positions `0..len-1` and
    /// `1..len` of every row.
    pub fn shift(&self) -> Result<(TokenBatch, Vec<usize>)> {
        if self.len < 2 {
            return Err(Error::InvalidOp {
                op: "token_batch",
                msg: "need at least two positions to form targets".into(),
            });
        }
        let t = self.len - 1;
        let mut inputs = Vec::with_capacity(self.batch * t);
        let mut targets = Vec::with_capacity(self.batch * t);
        for row in self.ids.chunks(self.len) {
            inputs.extend_from_slice(&row[..t]);
            targets.extend_from_slice(&row[1..]);
        }
        Ok((TokenBatch::new(inputs, self.batch, t)?, targets))
    }

    pub fn max_id(&self) -> usize {
        self.ids.iter().copied().max().unwrap_or(0)
    }
}

pub fn init_model(config: &ModelConfig) -> Result<ModelParameters> {
    config.validate()?;
    match config {
        ModelConfig::Transformer(c) => transformer::init(c),
        ModelConfig::Lstm(c) => lstm::init(c),
    }
}

/// Records the forward pass on `g` and returns the logits node. Dropout is
/// applied only when `dropout_rng` is given and the configured rate is
/// positive.
pub fn forward(
    g: &mut Graph,
    params: &ModelParameters,
    vars: &ParamVars,
    tokens: &TokenBatch,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    if tokens.max_id() >= params.config.vocab() {
        return Err(Error::VocabMismatch {
            model: params.config.vocab(),
            data: tokens.max_id() + 1,
        });
    }
    let dropout = match dropout_rng {
        Some(rng) if params.config.dropout() > 0.0 => Some(Dropout {
            rate: params.config.dropout(),
            rng,
        }),
        _ => None,
    };
    match &params.config {
        ModelConfig::Transformer(c) => transformer::forward(g, c, vars, tokens, dropout),
        ModelConfig::Lstm(c) => lstm::forward(g, c, vars, tokens, dropout),
    }
}

/// Forward pass without gradient bookkeeping for the caller; returns the
/// logits tensor.
pub fn logits(params: &ModelParameters, tokens: &TokenBatch) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.attach(&mut g);
    let out = forward(&mut g, params, &vars, tokens, None)?;
    Ok(g.value(out).clone())
}

pub(crate) struct Dropout<'a> {
    rate: f64,
    rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        use rand::Rng;
        let keep = 1.0 - self.rate;
        let shape = g.shape(x).to_vec();
        let mask = Tensor::from_fn(&shape, |_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = g.constant(mask);
        g.mul(x, m)
    }
}

pub(crate) fn maybe_dropout(g: &mut Graph, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}
