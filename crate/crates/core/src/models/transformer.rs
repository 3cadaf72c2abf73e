use super::{maybe_dropout, Dropout, ModelConfig, ModelParameters, ParamVars, TokenBatch};
use crate::error::{Error, Result};
use crate::numcore::{normal_tensor, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const INIT_STD: f64 = 0.02;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_seq: usize,
    pub vocab: usize,
    pub seed: u64,
    #[serde(default)]
    pub dropout: f64,
    /// Share the token embedding with the output projection.
    #[serde(default = "default_true")]
    pub tie_embeddings: bool,
}

impl TransformerConfig {
    /// Desk-scale defaults: 2 layers, width 64, 2 heads, feed-forward 256.
    pub fn desk(vocab: usize, seed: u64) -> Self {
        TransformerConfig {
            layers: 2,
            model_dim: 64,
            heads: 2,
            ff_dim: 256,
            max_seq: 16,
            vocab,
            seed,
            dropout: 0.0,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModelConfig(msg));
        if [self.layers, self.model_dim, self.heads, self.ff_dim, self.max_seq, self.vocab].contains(&0) {
            return bad(format!("all dimensions must be positive: {self:?}"));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (v, d, f, s, l) = (self.vocab, self.model_dim, self.ff_dim, self.max_seq, self.layers);
        let per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let head = if self.tie_embeddings { 0 } else { d * v };
        v * d + s * d + l * per_layer + 2 * d + head
    }
}

pub(super) fn init(c: &TransformerConfig) -> Result<ModelParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let (d, f) = (c.model_dim, c.ff_dim);
    let mut t: Vec<(String, Tensor)> = Vec::new();
    let ones = |n: usize| Tensor::from_fn(&[n], |_| 1.0);
    t.push(("wte".into(), normal_tensor(&[c.vocab, d], INIT_STD, &mut rng)));
    t.push(("wpe".into(), normal_tensor(&[c.max_seq, d], INIT_STD, &mut rng)));
    for l in 0..c.layers {
        let p = |name: &str| format!("h.{l}.{name}");
        t.push((p("ln_1.gain"), ones(d)));
        t.push((p("ln_1.bias"), Tensor::zeros(&[d])));
        t.push((p("attn.qkv.weight"), normal_tensor(&[d, 3 * d], INIT_STD, &mut rng)));
        t.push((p("attn.qkv.bias"), Tensor::zeros(&[3 * d])));
        t.push((p("attn.proj.weight"), normal_tensor(&[d, d], INIT_STD, &mut rng)));
        t.push((p("attn.proj.bias"), Tensor::zeros(&[d])));
        t.push((p("ln_2.gain"), ones(d)));
        t.push((p("ln_2.bias"), Tensor::zeros(&[d])));
        t.push((p("mlp.fc.weight"), normal_tensor(&[d, f], INIT_STD, &mut rng)));
        t.push((p("mlp.fc.bias"), Tensor::zeros(&[f])));
        t.push((p("mlp.proj.weight"), normal_tensor(&[f, d], INIT_STD, &mut rng)));
        t.push((p("mlp.proj.bias"), Tensor::zeros(&[d])));
    }
    t.push(("ln_f.gain".into(), ones(d)));
    t.push(("ln_f.bias".into(), Tensor::zeros(&[d])));
    if !c.tie_embeddings {
        t.push(("lm_head".into(), normal_tensor(&[d, c.vocab], INIT_STD, &mut rng)));
    }
    Ok(ModelParameters::new(ModelConfig::Transformer(c.clone()), t))
}

fn linear(g: &mut Graph, x: Var, vars: &ParamVars, prefix: &str) -> Result<Var> {
    let w = vars.get(&format!("{prefix}.weight"))?;
    let b = vars.get(&format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn layer_norm(g: &mut Graph, x: Var, vars: &ParamVars, prefix: &str) -> Result<Var> {
    let gain = vars.get(&format!("{prefix}.gain"))?;
    let bias = vars.get(&format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias)
}

/// Masked multi-head self-attention over [b, t, d].
fn attention(
    g: &mut Graph,
    c: &TransformerConfig,
    x: Var,
    vars: &ParamVars,
    prefix: &str,
    (b, t): (usize, usize),
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Var> {
    let (d, h) = (c.model_dim, c.heads);
    let dh = d / h;
    let qkv = linear(g, x, vars, &format!("{prefix}.qkv"))?;
    let mut split = |i: usize| -> Result<Var> {
        let part = g.slice(qkv, 2, i * d, (i + 1) * d)?;
        let part = g.reshape(part, &[b, t, h, dh])?;
        let part = g.swap_axes(part, 1, 2)?;
        g.reshape(part, &[b * h, t, dh])
    };
    let (q, k, v) = (split(0)?, split(1)?, split(2)?);
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let scores = g.causal_mask(scores)?;
    let weights = g.softmax(scores)?;
    let weights = maybe_dropout(g, weights, dropout)?;
    let ctx = g.batch_matmul(weights, v, false)?;
    let ctx = g.reshape(ctx, &[b, h, t, dh])?;
    let ctx = g.swap_axes(ctx, 1, 2)?;
    let ctx = g.reshape(ctx, &[b, t, d])?;
    linear(g, ctx, vars, &format!("{prefix}.proj"))
}

pub(super) fn forward(
    g: &mut Graph,
    c: &TransformerConfig,
    vars: &ParamVars,
    tokens: &TokenBatch,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    let (b, t) = (tokens.batch, tokens.len);
    if t > c.max_seq {
        return Err(Error::SequenceTooLong { len: t, max: c.max_seq });
    }
    let wte = vars.get("wte")?;
    let tok = g.embedding(wte, &tokens.ids, &[b, t])?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
    let pos = g.embedding(vars.get("wpe")?, &positions, &[b, t])?;
    let mut x = g.add(tok, pos)?;
    x = maybe_dropout(g, x, &mut dropout)?;
    for l in 0..c.layers {
        let p = format!("h.{l}");
        let normed = layer_norm(g, x, vars, &format!("{p}.ln_1"))?;
        let attn = attention(g, c, normed, vars, &format!("{p}.attn"), (b, t), &mut dropout)?;
        let attn = maybe_dropout(g, attn, &mut dropout)?;
        x = g.add(x, attn)?;
        let normed = layer_norm(g, x, vars, &format!("{p}.ln_2"))?;
        let hidden = linear(g, normed, vars, &format!("{p}.mlp.fc"))?;
        let hidden = g.gelu(hidden)?;
        let mlp = linear(g, hidden, vars, &format!("{p}.mlp.proj"))?;
        let mlp = maybe_dropout(g, mlp, &mut dropout)?;
        x = g.add(x, mlp)?;
    }
    let x = layer_norm(g, x, vars, "ln_f")?;
    if c.tie_embeddings {
        g.matmul_ex(x, wte, true)
    } else {
        g.matmul(x, vars.get("lm_head")?)
    }
}

/// Logits [batch, positions, vocab] of a transformer for `tokens`.
pub fn transformer_forward(params: &ModelParameters, tokens: &TokenBatch) -> Result<Tensor> {
    if !matches!(params.config, ModelConfig::Transformer(_)) {
        return Err(Error::InvalidModelConfig("expected transformer parameters".into()));
    }
    super::logits(params, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ff_dim: 12,
            max_seq: 6,
            vocab: 11,
            seed: 3,
            dropout: 0.0,
            tie_embeddings: true,
        }
    }

    /// Independent tally of the architecture, one tensor at a time.
    fn tally(v: usize, d: usize, f: usize, s: usize, layers: usize) -> usize {
        let ln = d + d;
        let qkv = d * 3 * d + 3 * d;
        let proj = d * d + d;
        let fc = d * f + f;
        let fc_proj = f * d + d;
        let embeddings = v * d + s * d;
        embeddings + layers * (ln + qkv + proj + ln + fc + fc_proj) + ln
    }

    #[test]
    fn parameter_count_matches_tally() {
        let mut c = TransformerConfig::desk(100, 0);
        c.max_seq = 16;
        let params = init_model(&ModelConfig::Transformer(c.clone())).unwrap();
        assert_eq!(params.count(), tally(100, 64, 256, 16, 2));
        assert_eq!(params.count(), c.parameter_count());
        c.tie_embeddings = false;
        let untied = init_model(&ModelConfig::Transformer(c.clone())).unwrap();
        assert_eq!(untied.count(), c.parameter_count());
        assert_eq!(untied.count(), tally(100, 64, 256, 16, 2) + 64 * 100);
    }

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::Transformer(tiny());
        assert_eq!(init_model(&c).unwrap(), init_model(&c).unwrap());
    }

    #[test]
    fn heads_must_divide_width() {
        let mut c = TransformerConfig::desk(100, 0);
        c.heads = 3;
        assert!(matches!(init_model(&ModelConfig::Transformer(c)), Err(Error::InvalidModelConfig(_))));
    }

    #[test]
    fn overlength_input_is_rejected() {
        let params = init_model(&ModelConfig::Transformer(tiny())).unwrap();
        let tokens = TokenBatch::new(vec![1; 7], 1, 7).unwrap();
        assert!(matches!(transformer_forward(&params, &tokens), Err(Error::SequenceTooLong { len: 7, max: 6 })));
    }

    #[test]
    fn logits_are_causal() {
        let params = init_model(&ModelConfig::Transformer(tiny())).unwrap();
        let base = vec![1, 4, 5, 6, 7, 8];
        let ref_logits = transformer_forward(&params, &TokenBatch::new(base.clone(), 1, 6).unwrap()).unwrap();
        for j in 0..6 {
            let mut changed = base.clone();
            changed[j] = 10;
            let out = transformer_forward(&params, &TokenBatch::new(changed, 1, 6).unwrap()).unwrap();
            let v = 11;
            assert_eq!(&out.data()[..j * v], &ref_logits.data()[..j * v], "position {j}");
            assert_ne!(&out.data()[j * v..], &ref_logits.data()[j * v..]);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let params = init_model(&ModelConfig::Transformer(tiny())).unwrap();
        let row = [1, 4, 9, 2, 0];
        let tokens = TokenBatch::new(row.iter().chain(&row).copied().collect(), 2, 5).unwrap();
        let out = transformer_forward(&params, &tokens).unwrap();
        assert_eq!(out.shape(), &[2, 5, 11]);
        let (a, b) = out.data().split_at(5 * 11);
        assert_eq!(a, b);
    }
}
