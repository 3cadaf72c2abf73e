//! Optimization loop: warmup/decay learning rate, Adam, seeded batching and
//! per-step loss and perplexity logging.

use crate::error::{Error, Result};
use crate::models::{forward, Architecture, ModelParameters, TokenBatch};
use crate::numcore::{Graph, Tensor};
use crate::tokenizer::{EncodedSequence, PAD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeqGrouping {
    /// One sentence per row, right-padded to the batch maximum.
    PerSentence,
    /// Sentences concatenated into a stream and cut into fixed windows.
    Pack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub seq_grouping: SeqGrouping,
    /// Window length (inputs plus one target) in pack mode.
    pub pack_window: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            total_steps: 300,
            warmup_fraction: 0.14,
            peak_lr: 3e-3,
            batch_size: 64,
            seq_grouping: SeqGrouping::PerSentence,
            pack_window: 17,
            eval_every: 1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTrainingConfig(msg));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1".into());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be at least 1".into());
        }
        if self.seq_grouping == SeqGrouping::Pack && self.pack_window < 2 {
            return bad("pack_window must be at least 2".into());
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return bad(format!("invalid optimizer settings {a:?}"));
        }
        Ok(())
    }

    /// Step at which the warmup ramp peaks.
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).ceil() as usize
    }
}

/// Linear ramp from 0 to `peak_lr` over the warmup, then linear decay to 0
/// at `total_steps`.
pub fn lr_schedule(step: usize, config: &TrainingConfig) -> Result<f64> {
    let total = config.total_steps;
    if step > total {
        return Err(Error::StepOutOfRange { step, total });
    }
    let warm = config.warmup_steps().clamp(1, total);
    let peak = config.peak_lr;
    Ok(if step <= warm {
        peak * step as f64 / warm as f64
    } else {
        peak * (total - step) as f64 / (total - warm) as f64
    })
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { v: m.clone(), m }
    }
}

/// One bias-corrected Adam update at 1-based `step`.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut AdamState,
    step: usize,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidOp {
            op: "adam_step",
            msg: "step counts from 1".into(),
        });
    }
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidOp {
            op: "adam_step",
            msg: format!("{} parameters, {} gradients, {} moment buffers", params.len(), grads.len(), state.m.len()),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + config.eps);
            *w -= lr * (update + config.weight_decay * *w);
        }
    }
    Ok(())
}

fn check_vocab(params: &ModelParameters, corpus: &[EncodedSequence]) -> Result<()> {
    let vocab = params.config.vocab();
    let max = corpus.iter().flat_map(|s| s.ids.iter().copied()).max().unwrap_or(0);
    if max >= vocab {
        return Err(Error::VocabMismatch { model: vocab, data: max + 1 });
    }
    Ok(())
}

/// Mean next-token cross-entropy of `batch` (PAD targets ignored) and its
/// gradient for every parameter tensor, in parameter order.
pub fn loss_and_gradients(
    params: &ModelParameters,
    batch: &TokenBatch,
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, Vec<Tensor>)> {
    let (inputs, targets) = batch.shift()?;
    let mut g = Graph::new();
    let vars = params.attach(&mut g);
    let logits = forward(&mut g, params, &vars, &inputs, dropout_rng)?;
    let loss = g.cross_entropy(logits, &targets, Some(PAD))?;
    let grads = g.backward(loss)?;
    let out = vars
        .iter()
        .zip(params.iter())
        .map(|((_, v), (_, t))| grads.get(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((g.value(loss).item(), out))
}

/// Mean cross-entropy of `batch` without building gradients for the caller.
pub fn batch_loss(params: &ModelParameters, batch: &TokenBatch) -> Result<f64> {
    Ok(batch_loss_sum(params, batch)?.0)
}

/// (mean loss, counted targets) for one batch.
fn batch_loss_sum(params: &ModelParameters, batch: &TokenBatch) -> Result<(f64, usize)> {
    let (inputs, targets) = batch.shift()?;
    let mut g = Graph::new();
    let vars = params.attach(&mut g);
    let logits = forward(&mut g, params, &vars, &inputs, None)?;
    let loss = g.cross_entropy(logits, &targets, Some(PAD))?;
    let counted = targets.iter().filter(|&&t| t != PAD).count();
    Ok((g.value(loss).item(), counted))
}

/// Training units: whole sentences, or packed windows of the token stream.
fn units(corpus: &[EncodedSequence], config: &TrainingConfig) -> Vec<EncodedSequence> {
    match config.seq_grouping {
        SeqGrouping::PerSentence => corpus.to_vec(),
        SeqGrouping::Pack => {
            let stream: Vec<usize> = corpus.iter().flat_map(|s| s.ids.iter().copied()).collect();
            let w = config.pack_window;
            // Consecutive windows overlap by one token so every stream
            // position after the first is a target exactly once.
            let mut out = Vec::new();
            let mut start = 0;
            while start + 1 < stream.len() {
                let end = (start + w).min(stream.len());
                out.push(EncodedSequence {
                    ids: stream[start..end].to_vec(),
                });
                start = end - 1;
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub perplexity: f64,
    pub lr: f64,
}

impl MetricRecord {
    /// Perplexity is always derived from the very same loss value.
    pub fn new(step: usize, loss: f64, lr: f64) -> Self {
        MetricRecord {
            step,
            loss,
            perplexity: loss.exp(),
            lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub group: String,
    pub arch: Architecture,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    step: usize,
    loss: String,
    perplexity: String,
    lr: String,
    group: String,
    arch: Architecture,
    seed: u64,
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl MetricSeries {
    pub fn new(group: impl Into<String>, arch: Architecture, seed: u64) -> Self {
        MetricSeries {
            group: group.into(),
            arch,
            seed,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::BadMetrics(format!("step {} after step {}", record.step, last.step)));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn perplexities(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.perplexity).collect()
    }

    pub fn min_perplexity(&self) -> Option<f64> {
        self.records.iter().map(|r| r.perplexity).reduce(f64::min)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["step", "loss", "perplexity", "lr", "group", "arch", "seed"])?;
        }
        for r in &self.records {
            w.serialize(CsvRow {
                step: r.step,
                loss: format_float(r.loss),
                perplexity: format_float(r.perplexity),
                lr: format_float(r.lr),
                group: self.group.clone(),
                arch: self.arch,
                seed: self.seed,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads one run's series; every row must carry the same metadata.
    pub fn read_csv<R: Read>(input: R) -> Result<MetricSeries> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut series: Option<MetricSeries> = None;
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::BadMetrics(format!("not a number: {s:?}")));
            let record = MetricRecord {
                step: row.step,
                loss: num(&row.loss)?,
                perplexity: num(&row.perplexity)?,
                lr: num(&row.lr)?,
            };
            let s = series.get_or_insert_with(|| MetricSeries::new(row.group.clone(), row.arch, row.seed));
            if (s.group.as_str(), s.arch, s.seed) != (row.group.as_str(), row.arch, row.seed) {
                return Err(Error::BadMetrics("mixed runs in one file".into()));
            }
            s.push(record)?;
        }
        series.ok_or_else(|| Error::BadMetrics("no records".into()))
    }
}

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub metrics: MetricSeries,
}

/// Runs `total_steps` Adam steps over seeded, per-epoch reshuffled batches.
/// The logged loss of a step is the training batch loss before its update.
pub fn train(
    mut params: ModelParameters,
    corpus: &[EncodedSequence],
    config: &TrainingConfig,
    group: &str,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_vocab(&params, corpus)?;
    let units = units(corpus, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let batch_size = config.batch_size.min(units.len());
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut state = AdamState::new(params.iter().map(|(_, t)| t));
    let mut metrics = MetricSeries::new(group, params.architecture(), config.seed);

    for step in 0..config.total_steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = TokenBatch::from_sequences(order[cursor..cursor + batch_size].iter().map(|&i| &units[i]))?;
        cursor += batch_size;
        let (loss, grads) = loss_and_gradients(&params, &batch, Some(&mut dropout_rng))?;
        if !loss.is_finite() {
            return Err(Error::InvalidOp {
                op: "train",
                msg: format!("non-finite loss at step {step}"),
            });
        }
        let lr = lr_schedule(step, config)?;
        if step % config.eval_every == 0 {
            metrics.push(MetricRecord::new(step, loss, lr))?;
        }
        adam_step(params.iter_mut().map(|(_, t)| t), &grads, &mut state, step + 1, lr, &config.adam)?;
    }
    Ok(TrainOutcome { params, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub perplexity: f64,
    pub tokens: usize,
}

const EVAL_BATCH: usize = 256;

/// Exp of the mean cross-entropy over every non-PAD held-out target.
pub fn evaluate_perplexity(params: &ModelParameters, heldout: &[EncodedSequence]) -> Result<Evaluation> {
    if heldout.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_vocab(params, heldout)?;
    let mut total = 0.0;
    let mut tokens = 0;
    for chunk in heldout.chunks(EVAL_BATCH) {
        let batch = TokenBatch::from_sequences(chunk)?;
        let (mean, counted) = batch_loss_sum(params, &batch)?;
        total += mean * counted as f64;
        tokens += counted;
    }
    let loss = total / tokens as f64;
    Ok(Evaluation {
        loss,
        perplexity: loss.exp(),
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, LstmConfig, ModelConfig, TransformerConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(total: usize) -> TrainingConfig {
        TrainingConfig {
            total_steps: total,
            peak_lr: 1.0,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let c = cfg(1000);
        assert_eq!(lr_schedule(0, &c).unwrap(), 0.0);
        assert_eq!(lr_schedule(140, &c).unwrap(), 1.0);
        assert_eq!(lr_schedule(70, &c).unwrap(), 0.5);
        assert_eq!(lr_schedule(1000, &c).unwrap(), 0.0);
        assert!((lr_schedule(570, &c).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(lr_schedule(1001, &c), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn schedule_peaks_once() {
        for total in [1, 2, 7, 50, 333] {
            let c = cfg(total);
            let lrs: Vec<f64> = (0..=total).map(|s| lr_schedule(s, &c).unwrap()).collect();
            assert_eq!(lrs.iter().filter(|&&x| x == 1.0).count(), 1, "total {total}");
        }
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainingConfig { warmup_fraction: 0.0, ..cfg(10) },
            TrainingConfig { warmup_fraction: 1.0, ..cfg(10) },
            TrainingConfig { total_steps: 0, ..cfg(10) },
            TrainingConfig { peak_lr: 0.0, ..cfg(10) },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidTrainingConfig(_))));
        }
    }

    proptest! {
        #[test]
        fn schedule_is_piecewise_linear_and_bounded(total in 1usize..2000, frac in 0.01f64..0.99) {
            let c = TrainingConfig { total_steps: total, warmup_fraction: frac, peak_lr: 2.0, ..TrainingConfig::default() };
            let mut prev = lr_schedule(0, &c).unwrap();
            for s in 1..=total {
                let lr = lr_schedule(s, &c).unwrap();
                prop_assert!((0.0..=2.0).contains(&lr));
                let bound = 2.0 / c.warmup_steps().min(total - c.warmup_steps().min(total)).max(1) as f64;
                prop_assert!((lr - prev).abs() <= bound + 1e-12);
                prev = lr;
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut w = vec![Tensor::from_fn(&[3], |i| i as f64 - 1.0)];
        let before = w.clone();
        let mut state = AdamState::new(&w);
        for step in 1..5 {
            adam_step(w.iter_mut(), &[Tensor::zeros(&[3])], &mut state, step, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let g = Tensor::new(vec![4], vec![0.3, -2.0, 1e-3, 7.5]).unwrap();
        let mut w = vec![Tensor::zeros(&[4])];
        let mut state = AdamState::new(&w);
        let lr = 0.01;
        adam_step(w.iter_mut(), std::slice::from_ref(&g), &mut state, 1, lr, &AdamConfig::default()).unwrap();
        for (u, gi) in w[0].data().iter().zip(g.data()) {
            assert!((u + lr * gi / (gi.abs() + 1e-8)).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut w = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(&w);
        let err = adam_step(w.iter_mut(), &[Tensor::zeros(&[4])], &mut state, 1, 0.1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut w = vec![Tensor::from_fn(&[6], |_| rng.random_range(-2.0..2.0))];
        let mut state = AdamState::new(&w);
        for step in 1..=200 {
            // lr decays linearly so the iterate settles instead of orbiting.
            let lr = 0.1 * (1.0 - (step - 1) as f64 / 200.0);
            let grad = Tensor::from_fn(&[6], |i| 2.0 * (w[0].data()[i] - target[i]));
            adam_step(w.iter_mut(), &[grad], &mut state, step, lr, &AdamConfig::default()).unwrap();
        }
        let dist: f64 = w[0].data().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-3, "distance {dist}");
    }

    fn toy_corpus(vocab: usize, n: usize, seed: u64) -> Vec<EncodedSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(2..6);
                let mut ids = vec![crate::tokenizer::BOS];
                ids.extend((0..len).map(|_| rng.random_range(4..vocab)));
                ids.push(crate::tokenizer::EOS);
                EncodedSequence { ids }
            })
            .collect()
    }

    fn tiny_transformer(vocab: usize) -> ModelParameters {
        let mut c = TransformerConfig::desk(vocab, 5);
        c.model_dim = 16;
        c.ff_dim = 32;
        init_model(&ModelConfig::Transformer(c)).unwrap()
    }

    #[test]
    fn dry_run_logs_every_step() {
        let corpus = toy_corpus(12, 20, 1);
        let out = train(tiny_transformer(12), &corpus, &TrainingConfig { total_steps: 2, ..TrainingConfig::default() }, "natural").unwrap();
        assert_eq!(out.metrics.len(), 2);
        let first = out.metrics.records[0];
        assert!(first.loss.is_finite());
        assert!((first.loss - 12f64.ln()).abs() < 0.05 * 12f64.ln());
        for r in &out.metrics.records {
            assert_eq!(r.perplexity.to_bits(), r.loss.exp().to_bits());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = toy_corpus(10, 30, 2);
        let config = TrainingConfig { total_steps: 6, batch_size: 8, ..TrainingConfig::default() };
        let a = train(tiny_transformer(10), &corpus, &config, "g").unwrap();
        let b = train(tiny_transformer(10), &corpus, &config, "g").unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let corpus = toy_corpus(20, 5, 3);
        let err = train(tiny_transformer(8), &corpus, &TrainingConfig::default(), "g").unwrap_err();
        assert!(matches!(err, Error::VocabMismatch { model: 8, .. }));
        assert!(matches!(evaluate_perplexity(&tiny_transformer(8), &[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn uniform_model_has_perplexity_vocab() {
        let mut params = init_model(&ModelConfig::Lstm(LstmConfig::desk(13, 0))).unwrap();
        for (name, t) in params.iter_mut() {
            if name.starts_with("head") {
                t.data_mut().fill(0.0);
            }
        }
        let eval = evaluate_perplexity(&params, &toy_corpus(13, 40, 4)).unwrap();
        assert!((eval.loss - 13f64.ln()).abs() < 1e-10);
        assert!((eval.perplexity - 13.0).abs() < 1e-9);
        assert_eq!(eval.perplexity.to_bits(), eval.loss.exp().to_bits());
    }

    #[test]
    fn memorizer_reaches_perplexity_one() {
        let corpus = vec![EncodedSequence { ids: vec![1, 5, 6, 7, 8, 2] }; 4];
        let config = TrainingConfig { total_steps: 150, peak_lr: 1e-2, batch_size: 4, ..TrainingConfig::default() };
        let out = train(tiny_transformer(9), &corpus, &config, "g").unwrap();
        let eval = evaluate_perplexity(&out.params, &corpus).unwrap();
        assert!(eval.perplexity <= 1.01, "{eval:?}");
    }

    #[test]
    fn pack_mode_targets_every_position_once() {
        let corpus = toy_corpus(10, 7, 5);
        let config = TrainingConfig { seq_grouping: SeqGrouping::Pack, pack_window: 4, ..TrainingConfig::default() };
        let windows = units(&corpus, &config);
        let stream: usize = corpus.iter().map(|s| s.len()).sum();
        assert_eq!(windows.iter().map(|w| w.len() - 1).sum::<usize>(), stream - 1);
        assert!(windows.iter().all(|w| w.len() <= 4));
        train(tiny_transformer(10), &corpus, &TrainingConfig { total_steps: 2, ..config }, "g").unwrap();
    }

    #[test]
    fn metrics_csv_round_trip() {
        let mut m = MetricSeries::new("parity-negation", Architecture::Lstm, 7);
        m.push(MetricRecord::new(0, std::f64::consts::LN_10, 0.0)).unwrap();
        m.push(MetricRecord::new(5, 0.1 + 0.2, 1.0 / 3.0)).unwrap();
        assert!(m.push(MetricRecord::new(5, 1.0, 0.0)).is_err());
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,loss,perplexity,lr,group,arch,seed\n0,2.3025850929940459e0,"), "{text}");
        let back = MetricSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
