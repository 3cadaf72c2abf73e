//! End-to-end experiments: corpus, group transforms, shared vocabulary,
//! training per (group, seed), held-out evaluation and the Welch tests.

mod plot;
mod report;

pub use report::{
    emit_report, linearity_gradient_summary, load_report, render_text, Comparison, GroupSummary, LinearitySummary,
    ReportFormat, RunReport, RunSummary,
};

use crate::error::{Error, Result};
use crate::grammar::{default_grammar, generate_corpus, GenerationConfig, LexiconSizes, Sentence};
use crate::models::{init_model, write_checkpoint, Architecture, LstmConfig, ModelConfig, TransformerConfig};
use crate::stats::{stabilized_window, welch_t_test, Metric, DEFAULT_START_FRACTION};
use crate::tokenizer::{EncodedSequence, Vocabulary};
use crate::training::{evaluate_perplexity, train, MetricSeries, SeqGrouping, TrainingConfig};
use crate::transforms::{apply_transform, normalize_external, TransformKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Natural,
    Reversed,
    ParityNegation,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Natural, Group::Reversed, Group::ParityNegation];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Natural => "natural",
            Group::Reversed => "reversed",
            Group::ParityNegation => "parity-negation",
        }
    }

    pub fn transform(self) -> TransformKind {
        match self {
            Group::Natural => TransformKind::Identity,
            Group::Reversed => TransformKind::Reverse,
            Group::ParityNegation => TransformKind::ParityNegation,
        }
    }

    pub fn is_impossible(self) -> bool {
        self != Group::Natural
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown group {s:?} (expected natural, reversed or parity-negation)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CorpusSource {
    Generated {
        sentences: usize,
        seed: u64,
        #[serde(default)]
        lexicon: LexiconSizes,
    },
    /// Line-oriented text, one sentence per line.
    External { path: PathBuf },
}

/// Transformer shape; vocabulary and seed are filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerShape {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_seq: usize,
    pub dropout: f64,
    pub tie_embeddings: bool,
}

impl Default for TransformerShape {
    fn default() -> Self {
        let c = TransformerConfig::desk(1, 0);
        TransformerShape {
            layers: c.layers,
            model_dim: c.model_dim,
            heads: c.heads,
            ff_dim: c.ff_dim,
            max_seq: c.max_seq,
            dropout: c.dropout,
            tie_embeddings: c.tie_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmShape {
    pub layers: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for LstmShape {
    fn default() -> Self {
        let c = LstmConfig::desk(1, 0);
        LstmShape {
            layers: c.layers,
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            dropout: c.dropout,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_true() -> bool {
    true
}

fn default_heldout() -> f64 {
    0.05
}

fn default_window() -> f64 {
    DEFAULT_START_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// "1" to "4" for the standard analogs, or any custom label.
    pub id: String,
    pub corpus: CorpusSource,
    pub groups: Vec<Group>,
    pub architecture: Architecture,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub transformer: TransformerShape,
    #[serde(default)]
    pub lstm: LstmShape,
    /// Run natural-vs-impossible tests.
    #[serde(default = "default_true")]
    pub compare: bool,
    #[serde(default = "default_heldout")]
    pub heldout_fraction: f64,
    #[serde(default = "default_window")]
    pub window_start: f64,
    #[serde(default)]
    pub save_checkpoints: bool,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    /// The four standard analogs: 1 and 3 use a generated 10,000-sentence
    /// corpus, 2 and 4 an external text file; 1 and 2 train transformers,
    /// 3 and 4 LSTMs.
    pub fn preset(id: u8, external: Option<PathBuf>, output_dir: PathBuf) -> Result<ExperimentSpec> {
        let architecture = match id {
            1 | 2 => Architecture::Transformer,
            3 | 4 => Architecture::Lstm,
            _ => return Err(Error::InvalidSpec(format!("no preset {id}; expected 1 to 4"))),
        };
        let mut training = TrainingConfig {
            total_steps: 500,
            ..TrainingConfig::default()
        };
        let corpus = match (id, external) {
            (1 | 3, _) => CorpusSource::Generated {
                sentences: 10_000,
                seed: 1,
                lexicon: LexiconSizes::default(),
            },
            (_, Some(path)) => {
                training.seq_grouping = SeqGrouping::Pack;
                CorpusSource::External { path }
            }
            (_, None) => {
                return Err(Error::InvalidSpec(format!("experiment {id} needs an external corpus path")));
            }
        };
        let spec = ExperimentSpec {
            id: id.to_string(),
            corpus,
            groups: Group::ALL.to_vec(),
            architecture,
            seeds: default_seeds(),
            training,
            transformer: TransformerShape::default(),
            lstm: LstmShape::default(),
            compare: true,
            heldout_fraction: default_heldout(),
            window_start: default_window(),
            save_checkpoints: false,
            output_dir,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<ExperimentSpec> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InvalidSpec(format!("spec file not found: {}", path.display())),
            _ => Error::Io(e),
        })?;
        ExperimentSpec::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        let mut seen = self.groups.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.groups.len() {
            return bad("groups must be distinct".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.compare && !self.groups.contains(&Group::Natural) {
            return bad("comparisons need the natural group".into());
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return bad(format!("heldout_fraction {} outside (0, 1)", self.heldout_fraction));
        }
        if !(0.0..1.0).contains(&self.window_start) {
            return bad(format!("window_start {} outside [0, 1)", self.window_start));
        }
        if let CorpusSource::Generated { sentences, .. } = self.corpus {
            if sentences < 2 {
                return bad("a generated corpus needs at least 2 sentences".into());
            }
        }
        self.training.validate()?;
        if self.architecture == Architecture::Transformer
            && self.training.seq_grouping == SeqGrouping::Pack
            && self.training.pack_window > self.transformer.max_seq + 1
        {
            return bad(format!(
                "pack_window {} needs max_seq of at least {}",
                self.training.pack_window,
                self.training.pack_window - 1
            ));
        }
        self.model_config(16, 0).validate()
    }

    pub fn model_config(&self, vocab: usize, seed: u64) -> ModelConfig {
        match self.architecture {
            Architecture::Transformer => {
                let s = &self.transformer;
                ModelConfig::Transformer(TransformerConfig {
                    layers: s.layers,
                    model_dim: s.model_dim,
                    heads: s.heads,
                    ff_dim: s.ff_dim,
                    max_seq: s.max_seq,
                    vocab,
                    seed,
                    dropout: s.dropout,
                    tie_embeddings: s.tie_embeddings,
                })
            }
            Architecture::Lstm => {
                let s = &self.lstm;
                ModelConfig::Lstm(LstmConfig {
                    layers: s.layers,
                    hidden_dim: s.hidden_dim,
                    embed_dim: s.embed_dim,
                    vocab,
                    seed,
                    dropout: s.dropout,
                })
            }
        }
    }

    fn comparisons(&self) -> Vec<Group> {
        if !self.compare {
            return Vec::new();
        }
        self.groups.iter().copied().filter(|g| g.is_impossible()).collect()
    }
}

/// Base sentences split into training and held-out parts.
pub struct BaseCorpus {
    pub train: Vec<Sentence>,
    pub heldout: Vec<Sentence>,
}

/// Builds the untransformed corpus and its seeded held-out split.
pub fn load_corpus(spec: &ExperimentSpec) -> Result<BaseCorpus> {
    let (mut sentences, split_seed) = match &spec.corpus {
        CorpusSource::Generated { sentences, seed, lexicon } => {
            let config = GenerationConfig {
                count: *sentences,
                seed: *seed,
                lexicon: *lexicon,
            };
            (generate_corpus(&default_grammar(), &config)?, *seed)
        }
        CorpusSource::External { path } => {
            let file = fs::File::open(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingCorpus(path.clone()),
                _ => Error::Io(e),
            })?;
            let mut out = Vec::new();
            for line in BufReader::new(file).lines() {
                let s = normalize_external(&line?);
                if !s.is_empty() {
                    out.push(s);
                }
            }
            (out, 0)
        }
    };
    if sentences.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed ^ SPLIT_STREAM));
    let n_held = ((spec.heldout_fraction * sentences.len() as f64).round() as usize).clamp(1, sentences.len() - 1);
    let mut held_idx: Vec<usize> = order[..n_held].to_vec();
    held_idx.sort_unstable();
    let mut is_held = vec![false; sentences.len()];
    for &i in &held_idx {
        is_held[i] = true;
    }
    let mut train = Vec::with_capacity(sentences.len() - n_held);
    let mut heldout = Vec::with_capacity(n_held);
    for (s, held) in sentences.drain(..).zip(is_held) {
        if held {
            heldout.push(s);
        } else {
            train.push(s);
        }
    }
    Ok(BaseCorpus { train, heldout })
}

/// Keeps the held-out shuffle independent of the generation stream.
const SPLIT_STREAM: u64 = 0x0005_9117_0000_0001;

/// One group's corpus, transformed and encoded with the shared vocabulary.
pub struct GroupCorpus {
    pub group: Group,
    pub train: Vec<Sentence>,
    pub heldout: Vec<Sentence>,
}

pub fn transform_groups(spec: &ExperimentSpec, base: &BaseCorpus) -> Result<Vec<GroupCorpus>> {
    spec.groups
        .iter()
        .map(|&group| {
            let apply = |xs: &[Sentence]| -> Result<Vec<Sentence>> {
                xs.iter().map(|s| apply_transform(group.transform(), s)).collect()
            };
            Ok(GroupCorpus {
                group,
                train: apply(&base.train)?,
                heldout: apply(&base.heldout)?,
            })
        })
        .collect()
}

/// Training and evaluation of one (group, seed) pair.
pub struct RunOutput {
    pub group: Group,
    pub seed: u64,
    pub metrics: MetricSeries,
    pub heldout: crate::training::Evaluation,
}

fn unwritable(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(unwritable(parent))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(unwritable(path))?))
}

fn write_lines(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut out = create_file(path)?;
    for s in sentences {
        writeln!(out, "{s}").map_err(unwritable(path))?;
    }
    out.flush().map_err(unwritable(path))?;
    Ok(())
}

pub fn metrics_file(group: Group, seed: u64) -> String {
    format!("metrics/{}_seed{seed}.csv", group.as_str())
}

/// Runs every (group, seed) pair, then the stabilized-window tests, and
/// writes corpora, vocabulary, metrics, the JSON and text reports, curve
/// files and plots under the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunReport> {
    run_experiment_with(spec, |_| {})
}

/// As [`run_experiment`], calling `progress` after each finished run.
pub fn run_experiment_with<F: FnMut(&RunOutput)>(spec: &ExperimentSpec, mut progress: F) -> Result<RunReport> {
    spec.validate()?;
    let out = &spec.output_dir;
    fs::create_dir_all(out).map_err(unwritable(out))?;
    let base = load_corpus(spec)?;
    let groups = transform_groups(spec, &base)?;
    let vocab = Vocabulary::build(groups.iter().flat_map(|g| g.train.iter()))?;
    {
        let path = out.join("vocab.txt");
        let mut f = create_file(&path)?;
        vocab.write(&mut f)?;
        f.flush().map_err(unwritable(&path))?;
    }
    let mut encoded: Vec<(Group, Vec<EncodedSequence>, Vec<EncodedSequence>)> = Vec::new();
    for g in &groups {
        write_lines(&out.join(format!("corpora/{}.train.txt", g.group)), &g.train)?;
        write_lines(&out.join(format!("corpora/{}.heldout.txt", g.group)), &g.heldout)?;
        let enc = |xs: &[Sentence]| xs.iter().map(|s| vocab.encode(s)).collect::<Vec<_>>();
        encoded.push((g.group, enc(&g.train), enc(&g.heldout)));
    }
    if let Architecture::Transformer = spec.architecture {
        let longest = encoded.iter().flat_map(|(_, t, h)| t.iter().chain(h)).map(|s| s.len()).max().unwrap_or(0);
        if spec.training.seq_grouping == SeqGrouping::PerSentence && longest > spec.transformer.max_seq {
            return Err(Error::InvalidModelConfig(format!(
                "max_seq {} is shorter than the longest encoded sentence ({longest} tokens)",
                spec.transformer.max_seq
            )));
        }
    }

    let mut runs = Vec::new();
    for (group, train_set, heldout) in &encoded {
        for &seed in &spec.seeds {
            let config = spec.model_config(vocab.len(), seed);
            let params = init_model(&config)?;
            let training = TrainingConfig {
                seed,
                ..spec.training.clone()
            };
            let outcome = train(params, train_set, &training, group.as_str())?;
            let eval = evaluate_perplexity(&outcome.params, heldout)?;
            let path = out.join(metrics_file(*group, seed));
            let mut f = create_file(&path)?;
            outcome.metrics.write_csv(&mut f)?;
            f.flush().map_err(unwritable(&path))?;
            if spec.save_checkpoints {
                let path = out.join(format!("checkpoints/{}_seed{seed}.bin", group.as_str()));
                let mut f = create_file(&path)?;
                write_checkpoint(&outcome.params, &mut f)?;
            }
            let run = RunOutput {
                group: *group,
                seed,
                metrics: outcome.metrics,
                heldout: eval,
            };
            progress(&run);
            runs.push(run);
        }
    }
    let report = assemble_report(spec, vocab.len(), runs)?;
    emit_report(&report, ReportFormat::Json, out)?;
    emit_report(&report, ReportFormat::Text, out)?;
    Ok(report)
}

/// Concatenated stabilized-window samples of every seed of `group`.
fn pooled_window(runs: &[RunOutput], group: Group, start: f64, metric: Metric) -> Result<Vec<f64>> {
    let mut samples = Vec::new();
    for r in runs.iter().filter(|r| r.group == group) {
        samples.extend(stabilized_window(&r.metrics, start, metric)?.samples);
    }
    Ok(samples)
}

fn assemble_report(spec: &ExperimentSpec, vocab_size: usize, runs: Vec<RunOutput>) -> Result<RunReport> {
    let mut groups = Vec::new();
    for &group in &spec.groups {
        let window = pooled_window(&runs, group, spec.window_start, Metric::Loss)?;
        let summaries = runs
            .iter()
            .filter(|r| r.group == group)
            .map(|r| RunSummary::new(r, metrics_file(group, r.seed)))
            .collect::<Result<Vec<_>>>()?;
        groups.push(GroupSummary {
            group,
            mean_stabilized_loss: window.iter().sum::<f64>() / window.len() as f64,
            runs: summaries,
        });
    }
    let mut comparisons = Vec::new();
    for other in spec.comparisons() {
        for metric in [Metric::Loss, Metric::Perplexity] {
            let a = pooled_window(&runs, Group::Natural, spec.window_start, metric)?;
            let b = pooled_window(&runs, other, spec.window_start, metric)?;
            comparisons.push(Comparison {
                comparison: format!("{} vs {}", Group::Natural, other),
                metric,
                result: welch_t_test(&a, &b)?,
            });
        }
    }
    let series = runs.into_iter().map(|r| r.metrics).collect();
    Ok(RunReport {
        experiment: spec.id.clone(),
        architecture: spec.architecture,
        vocab_size,
        parameter_count: spec.model_config(vocab_size, 0).parameter_count(),
        seeds: spec.seeds.clone(),
        total_steps: spec.training.total_steps,
        window_start: spec.window_start,
        groups,
        comparisons,
        series,
    })
}
