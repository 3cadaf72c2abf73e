use clap::{Args, Parser, Subcommand};
use implab_core::grammar::{default_grammar, generate_corpus, GenerationConfig, LexiconSizes, Sentence};
use implab_core::harness::{
    emit_report, load_report, render_text, run_experiment_with, ExperimentSpec, ReportFormat,
};
use implab_core::models::{
    init_model, read_checkpoint, write_checkpoint, Architecture, LstmConfig, ModelConfig, TransformerConfig,
};
use implab_core::stats::{format_test, stabilized_window, welch_t_test, Metric, DEFAULT_START_FRACTION};
use implab_core::training::{evaluate_perplexity, train, MetricSeries, SeqGrouping, TrainingConfig};
use implab_core::{transform_corpus, Error, ErrorCategory, TransformKind, Vocabulary};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "implab", version, about = "Train miniature language models on natural and impossible languages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample sentences from the built-in grammar, one per line.
    Generate {
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only the first N nouns of the lexicon.
        #[arg(long)]
        nouns: Option<usize>,
        #[arg(long)]
        verbs: Option<usize>,
        #[arg(long)]
        modals: Option<usize>,
        /// Output file; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Apply a transformation line by line.
    Transform {
        #[arg(long, value_parser = parse_kind)]
        kind: TransformKind,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 4096)]
        chunk_size: usize,
    },
    /// Train one model on a corpus file and save metrics and weights.
    Train(TrainArgs),
    /// Held-out loss and perplexity of a saved model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Welch's t-test between the stabilized windows of two sets of runs.
    Stats {
        /// Metric CSVs of the first group (typically natural).
        #[arg(long, num_args = 1.., required = true)]
        a: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        b: Vec<PathBuf>,
        #[arg(long, default_value = "loss", value_parser = parse_metric)]
        metric: Metric,
        #[arg(long, default_value_t = DEFAULT_START_FRACTION)]
        window: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run a full experiment from a spec file or a numbered preset.
    Experiment(ExperimentArgs),
    /// Re-render the report of a finished experiment directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "text", value_parser = parse_format)]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Sentences, one per line, already transformed.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "transformer", value_parser = parse_arch)]
    arch: Architecture,
    /// Existing vocabulary file; built from the corpus when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = "custom")]
    group: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pack: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// 1 to 4; 2 and 4 need --corpus.
    #[arg(long)]
    preset: Option<u8>,
    /// External text corpus for presets 2 and 4.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run with this single seed instead of the spec's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Print the resolved spec as TOML and exit.
    #[arg(long)]
    print_spec: bool,
}

fn parse_kind(s: &str) -> Result<TransformKind, String> {
    s.parse()
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s {
        "loss" => Ok(Metric::Loss),
        "perplexity" => Ok(Metric::Perplexity),
        other => Err(format!("unknown metric {other:?} (expected loss or perplexity)")),
    }
}

fn open(path: &Path) -> implab_core::Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::MissingCorpus(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn create(path: &Path) -> implab_core::Result<BufWriter<File>> {
    let fail = |source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    File::create(path).map(BufWriter::new).map_err(fail)
}

fn output(path: Option<&Path>) -> implab_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_sentences(path: &Path) -> implab_core::Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let s = Sentence::parse_line(&line?);
        if !s.is_empty() {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn cmd_generate(
    count: usize,
    seed: u64,
    sizes: [Option<usize>; 3],
    out: Option<&Path>,
) -> implab_core::Result<()> {
    let full = LexiconSizes::default();
    let lexicon = LexiconSizes {
        nouns: sizes[0].unwrap_or(full.nouns),
        verbs: sizes[1].unwrap_or(full.verbs),
        modals: sizes[2].unwrap_or(full.modals),
    };
    let config = GenerationConfig { count, seed, lexicon };
    let mut w = output(out)?;
    for s in generate_corpus(&default_grammar(), &config)? {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> implab_core::Result<()> {
    let sentences = read_sentences(&args.corpus)?;
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::read(open(p)?)?,
        None => Vocabulary::build(&sentences)?,
    };
    let corpus: Vec<_> = sentences.iter().map(|s| vocab.encode(s)).collect();
    let mut config = TrainingConfig {
        seed: args.seed,
        ..TrainingConfig::default()
    };
    if let Some(n) = args.steps {
        config.total_steps = n;
    }
    if let Some(lr) = args.lr {
        config.peak_lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if args.pack {
        config.seq_grouping = SeqGrouping::Pack;
    }
    let model = match args.arch {
        Architecture::Transformer => ModelConfig::Transformer(TransformerConfig::desk(vocab.len(), args.seed)),
        Architecture::Lstm => ModelConfig::Lstm(LstmConfig::desk(vocab.len(), args.seed)),
    };
    let params = init_model(&model)?;
    let outcome = train(params, &corpus, &config, &args.group)?;
    outcome.metrics.write_csv(create(&args.out.join("metrics.csv"))?)?;
    write_checkpoint(&outcome.params, create(&args.out.join("model.bin"))?)?;
    vocab.write(create(&args.out.join("vocab.txt"))?)?;
    if let Some(last) = outcome.metrics.records.last() {
        println!(
            "step {} loss {:.4} perplexity {:.4}; wrote {}",
            last.step,
            last.loss,
            last.perplexity,
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, vocab: &Path, corpus: &Path) -> implab_core::Result<()> {
    let params = read_checkpoint(open(checkpoint)?)?;
    let vocab = Vocabulary::read(open(vocab)?)?;
    let heldout: Vec<_> = read_sentences(corpus)?.iter().map(|s| vocab.encode(s)).collect();
    let e = evaluate_perplexity(&params, &heldout)?;
    println!("loss {:.6} perplexity {:.6} tokens {}", e.loss, e.perplexity, e.tokens);
    if vocab.unknown_count() > 0 {
        eprintln!("note: {} out-of-vocabulary words mapped to <unk>", vocab.unknown_count());
    }
    Ok(())
}

fn pooled(paths: &[PathBuf], metric: Metric, window: f64) -> implab_core::Result<Vec<f64>> {
    let mut samples = Vec::new();
    for p in paths {
        let series = MetricSeries::read_csv(open(p)?)?;
        samples.extend(stabilized_window(&series, window, metric)?.samples);
    }
    Ok(samples)
}

fn cmd_stats(a: &[PathBuf], b: &[PathBuf], metric: Metric, window: f64, json: bool) -> implab_core::Result<()> {
    let r = welch_t_test(&pooled(a, metric, window)?, &pooled(b, metric, window)?)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!("{}", format_test(&r));
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> implab_core::Result<()> {
    let mut spec = match (&args.spec, args.preset) {
        (Some(path), _) => ExperimentSpec::read(path)?,
        (None, Some(id)) => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/experiment{id}")));
            ExperimentSpec::preset(id, args.corpus.clone(), out)?
        }
        (None, None) => return Err(Error::InvalidSpec("pass --spec FILE or --preset N".into())),
    };
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    }
    if let Some(steps) = args.steps {
        spec.training.total_steps = steps;
    }
    spec.validate()?;
    if args.print_spec {
        print!("{}", spec.to_toml());
        return Ok(());
    }
    let runs = spec.groups.len() * spec.seeds.len();
    let mut done = 0;
    let report = run_experiment_with(&spec, |r| {
        done += 1;
        eprintln!("[{done}/{runs}] {} seed {}: held-out perplexity {:.4}", r.group, r.seed, r.heldout.perplexity);
    })?;
    print!("{}", render_text(&report));
    eprintln!("outputs in {}", spec.output_dir.display());
    Ok(())
}

fn cmd_report(dir: &Path, format: ReportFormat) -> implab_core::Result<()> {
    let report = load_report(dir)?;
    emit_report(&report, format, dir)?;
    match format {
        ReportFormat::Text => print!("{}", render_text(&report)),
        ReportFormat::Json => print!("{}", fs::read_to_string(dir.join("report.json"))?),
    }
    Ok(())
}

fn run(cli: Cli) -> implab_core::Result<()> {
    match cli.command {
        Command::Generate {
            count,
            seed,
            nouns,
            verbs,
            modals,
            output: out,
        } => cmd_generate(count, seed, [nouns, verbs, modals], out.as_deref()),
        Command::Transform {
            kind,
            input,
            output: out,
            chunk_size,
        } => {
            let n = transform_corpus(kind, open(&input)?, output(out.as_deref())?, chunk_size)?;
            eprintln!("{n} lines");
            Ok(())
        }
        Command::Train(args) => cmd_train(&args),
        Command::Eval {
            checkpoint,
            vocab,
            corpus,
        } => cmd_eval(&checkpoint, &vocab, &corpus),
        Command::Stats {
            a,
            b,
            metric,
            window,
            json,
        } => cmd_stats(&a, &b, metric, window, json),
        Command::Experiment(args) => cmd_experiment(&args),
        Command::Report { dir, format } => cmd_report(&dir, format),
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Input => 2,
        ErrorCategory::Config => 3,
        ErrorCategory::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(exit_code(ErrorCategory::Config));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
