use super::{maybe_dropout, Dropout, ModelConfig, ModelParameters, ParamVars, TokenBatch};
use crate::error::{Error, Result};
use crate::numcore::{uniform_tensor, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub vocab: usize,
    pub seed: u64,
    #[serde(default)]
    pub dropout: f64,
}

impl LstmConfig {
    /// Desk-scale defaults: one layer, embedding 64, hidden 128.
    pub fn desk(vocab: usize, seed: u64) -> Self {
        LstmConfig {
            layers: 1,
            hidden_dim: 128,
            embed_dim: 64,
            vocab,
            seed,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.layers, self.hidden_dim, self.embed_dim, self.vocab].contains(&0) {
            return Err(Error::InvalidModelConfig(format!("all dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidModelConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_dim;
        let layers: usize = (0..self.layers).map(|l| (self.layer_input(l) + h) * 4 * h + 4 * h).sum();
        self.vocab * self.embed_dim + layers + h * self.vocab + self.vocab
    }
}

/// Gate blocks are laid out as input, forget, cell candidate, output.
pub(super) fn init(c: &LstmConfig) -> Result<ModelParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let h = c.hidden_dim;
    let bound = 1.0 / (h as f64).sqrt();
    let mut t: Vec<(String, Tensor)> = Vec::new();
    t.push(("embed".into(), uniform_tensor(&[c.vocab, c.embed_dim], bound, &mut rng)));
    for l in 0..c.layers {
        t.push((format!("lstm.{l}.weight"), uniform_tensor(&[c.layer_input(l) + h, 4 * h], bound, &mut rng)));
        let mut bias = uniform_tensor(&[4 * h], bound, &mut rng);
        bias.data_mut()[h..2 * h].fill(1.0);
        t.push((format!("lstm.{l}.bias"), bias));
    }
    t.push(("head.weight".into(), uniform_tensor(&[h, c.vocab], bound, &mut rng)));
    t.push(("head.bias".into(), uniform_tensor(&[c.vocab], bound, &mut rng)));
    Ok(ModelParameters::new(ModelConfig::Lstm(c.clone()), t))
}

/// One recurrence step; returns the new (h, c).
fn cell(g: &mut Graph, x: Var, h: Var, c: Var, w: Var, b: Var, hidden: usize) -> Result<(Var, Var)> {
    let xh = g.concat(&[x, h], 1)?;
    let z = g.matmul(xh, w)?;
    let z = g.add_bias(z, b)?;
    let gate = |g: &mut Graph, k: usize| g.slice(z, 1, k * hidden, (k + 1) * hidden);
    let (zi, zf, zg, zo) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let cand = g.tanh(zg)?;
    let o = g.sigmoid(zo)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

pub(super) fn forward(
    g: &mut Graph,
    c: &LstmConfig,
    vars: &ParamVars,
    tokens: &TokenBatch,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    let (b, t, hd) = (tokens.batch, tokens.len, c.hidden_dim);
    // Time-major ids so each step is a contiguous [b, embed] slab.
    let time_major: Vec<usize> = (0..t).flat_map(|s| (0..b).map(move |r| tokens.ids[r * t + s])).collect();
    let emb = g.embedding(vars.get("embed")?, &time_major, &[t * b])?;
    let emb = maybe_dropout(g, emb, &mut dropout)?;
    let mut inputs: Vec<Var> = (0..t).map(|s| g.slice(emb, 0, s * b, (s + 1) * b)).collect::<Result<_>>()?;
    for l in 0..c.layers {
        let w = vars.get(&format!("lstm.{l}.weight"))?;
        let bias = vars.get(&format!("lstm.{l}.bias"))?;
        let mut h = g.constant(Tensor::zeros(&[b, hd]));
        let mut cs = g.constant(Tensor::zeros(&[b, hd]));
        let mut outputs = Vec::with_capacity(t);
        for &x in &inputs {
            (h, cs) = cell(g, x, h, cs, w, bias, hd)?;
            outputs.push(maybe_dropout(g, h, &mut dropout)?);
        }
        inputs = outputs;
    }
    let stacked = g.concat(&inputs, 0)?;
    let out = g.matmul(stacked, vars.get("head.weight")?)?;
    let out = g.add_bias(out, vars.get("head.bias")?)?;
    let out = g.reshape(out, &[t, b, c.vocab])?;
    g.swap_axes(out, 0, 1)
}

/// Logits [batch, positions, vocab] of an LSTM for `tokens`.
pub fn lstm_forward(params: &ModelParameters, tokens: &TokenBatch) -> Result<Tensor> {
    if !matches!(params.config, ModelConfig::Lstm(_)) {
        return Err(Error::InvalidModelConfig("expected lstm parameters".into()));
    }
    super::logits(params, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;

    fn tiny() -> LstmConfig {
        LstmConfig {
            layers: 2,
            hidden_dim: 5,
            embed_dim: 4,
            vocab: 9,
            seed: 11,
            dropout: 0.0,
        }
    }

    #[test]
    fn parameter_count_matches_tally() {
        let c = LstmConfig::desk(100, 0);
        let params = init_model(&ModelConfig::Lstm(c.clone())).unwrap();
        let tally = 100 * 64 + (64 + 128) * 512 + 512 + 128 * 100 + 100;
        assert_eq!(params.count(), tally);
        assert_eq!(c.parameter_count(), tally);
        let c = tiny();
        assert_eq!(init_model(&ModelConfig::Lstm(c.clone())).unwrap().count(), c.parameter_count());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let params = init_model(&ModelConfig::Lstm(tiny())).unwrap();
        let bias = params.get("lstm.1.bias").unwrap().data();
        assert!(bias[5..10].iter().all(|&x| x == 1.0));
        let bound = 1.0 / 5f64.sqrt();
        assert!(params.get("lstm.0.weight").unwrap().data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn single_token_gives_one_row() {
        let params = init_model(&ModelConfig::Lstm(tiny())).unwrap();
        let out = lstm_forward(&params, &TokenBatch::new(vec![3], 1, 1).unwrap()).unwrap();
        assert_eq!(out.shape(), &[1, 1, 9]);
    }

    #[test]
    fn logits_are_causal() {
        let params = init_model(&ModelConfig::Lstm(tiny())).unwrap();
        let base = vec![1, 4, 5, 6, 7];
        let ids = base.iter().chain(&[1, 2, 3, 4, 5]).copied().collect();
        let reference = lstm_forward(&params, &TokenBatch::new(ids, 2, 5).unwrap()).unwrap();
        for j in 0..5 {
            let mut changed = base.clone();
            changed[j] = 8;
            let ids = changed.iter().chain(&[1, 2, 3, 4, 5]).copied().collect();
            let out = lstm_forward(&params, &TokenBatch::new(ids, 2, 5).unwrap()).unwrap();
            assert_eq!(&out.data()[..j * 9], &reference.data()[..j * 9]);
            assert_ne!(&out.data()[j * 9..5 * 9], &reference.data()[j * 9..5 * 9]);
            assert_eq!(&out.data()[5 * 9..], &reference.data()[5 * 9..]);
        }
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn scalar_gates_match_hand_computation() {
        let c = LstmConfig {
            layers: 1,
            hidden_dim: 1,
            embed_dim: 1,
            vocab: 2,
            seed: 0,
            dropout: 0.0,
        };
        let mut params = init_model(&ModelConfig::Lstm(c)).unwrap();
        let set = |p: &mut ModelParameters, name: &str, v: &[f64]| p.get_mut(name).unwrap().data_mut().copy_from_slice(v);
        set(&mut params, "embed", &[0.5, -1.5]);
        // Rows: input weight then recurrent weight; columns i, f, g, o.
        let (wx, wh, bias) = ([0.3, -0.2, 0.7, 0.1], [-0.4, 0.6, 0.25, -0.9], [0.05, 1.0, -0.1, 0.2]);
        set(&mut params, "lstm.0.weight", &[wx, wh].concat());
        set(&mut params, "lstm.0.bias", &bias);
        set(&mut params, "head.weight", &[2.0, -1.0]);
        set(&mut params, "head.bias", &[0.1, 0.3]);

        let out = lstm_forward(&params, &TokenBatch::new(vec![0, 1], 1, 2).unwrap()).unwrap();
        let (mut h, mut cell) = (0.0f64, 0.0f64);
        for (step, x) in [0.5, -1.5].into_iter().enumerate() {
            let pre = |k: usize| wx[k] * x + wh[k] * h + bias[k];
            let i = sigmoid(pre(0));
            let f = sigmoid(pre(1));
            let g = pre(2).tanh();
            let o = sigmoid(pre(3));
            cell = f * cell + i * g;
            h = o * cell.tanh();
            let expected = [2.0 * h + 0.1, -h + 0.3];
            for (k, e) in expected.iter().enumerate() {
                assert!((out.data()[step * 2 + k] - e).abs() < 1e-12);
            }
        }
    }
}
