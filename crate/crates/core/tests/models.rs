use implab_core::models::{
    init_model, lstm_forward, read_checkpoint, transformer_forward, write_checkpoint, LstmConfig, ModelConfig,
    TokenBatch, TransformerConfig,
};
use implab_core::tokenizer::{EncodedSequence, BOS, EOS};
use implab_core::training::evaluate_perplexity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn golden_config() -> TransformerConfig {
    TransformerConfig {
        layers: 2,
        model_dim: 16,
        heads: 2,
        ff_dim: 32,
        max_seq: 8,
        vocab: 16,
        seed: 42,
        dropout: 0.0,
        tie_embeddings: true,
    }
}

fn golden_tokens() -> TokenBatch {
    TokenBatch::new(vec![1, 5, 9, 4, 12, 7, 1, 15, 3, 3, 8, 0], 2, 6).unwrap()
}

/// The reference file is written on the first run and compared on every
/// later one; delete it to regenerate after an intentional model change.
#[test]
fn transformer_logits_match_golden_file() {
    let params = init_model(&ModelConfig::Transformer(golden_config())).unwrap();
    let logits = transformer_forward(&params, &golden_tokens()).unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/transformer_logits.txt");
    if !path.exists() {
        let text: String = logits.data().iter().map(|x| format!("{x:?}\n")).collect();
        std::fs::write(&path, text).unwrap();
        eprintln!("wrote new golden file {}", path.display());
    }
    let expected: Vec<f64> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(expected.len(), logits.len());
    for (i, (a, e)) in logits.data().iter().zip(&expected).enumerate() {
        assert!((a - e).abs() <= 1e-12, "logit {i}: {a} vs {e}");
    }
}

fn random_corpus(vocab: usize, n: usize) -> Vec<EncodedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (0..n)
        .map(|_| {
            let mut ids = vec![BOS];
            ids.extend((0..rng.random_range(3..7)).map(|_| rng.random_range(4..vocab)));
            ids.push(EOS);
            EncodedSequence { ids }
        })
        .collect()
}

#[test]
fn fresh_models_start_near_uniform() {
    let vocab = 120;
    let corpus = random_corpus(vocab, 200);
    let uniform = (vocab as f64).ln();
    for config in [
        ModelConfig::Transformer(TransformerConfig::desk(vocab, 3)),
        ModelConfig::Lstm(LstmConfig::desk(vocab, 3)),
    ] {
        let params = init_model(&config).unwrap();
        let loss = evaluate_perplexity(&params, &corpus).unwrap().loss;
        assert!((loss - uniform).abs() < 0.05 * uniform, "{:?}: {loss} vs {uniform}", config.architecture());
    }
}

#[test]
fn checkpoint_file_reproduces_logits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lstm.bin");
    let params = init_model(&ModelConfig::Lstm(LstmConfig::desk(16, 8))).unwrap();
    write_checkpoint(&params, std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = read_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    let tokens = golden_tokens();
    assert_eq!(
        lstm_forward(&params, &tokens).unwrap().data(),
        lstm_forward(&loaded, &tokens).unwrap().data()
    );
}

#[test]
fn forward_entry_points_check_architecture() {
    let lstm = init_model(&ModelConfig::Lstm(LstmConfig::desk(16, 0))).unwrap();
    let transformer = init_model(&ModelConfig::Transformer(golden_config())).unwrap();
    assert!(transformer_forward(&lstm, &golden_tokens()).is_err());
    assert!(lstm_forward(&transformer, &golden_tokens()).is_err());
}
