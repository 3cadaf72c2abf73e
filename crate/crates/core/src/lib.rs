//! Desk-scale laboratory for comparing how miniature language models learn
//! a natural grammar against impossible variants of it.

pub mod error;
pub mod grammar;
pub mod harness;
pub mod models;
pub mod numcore;
pub mod stats;
pub mod tokenizer;
pub mod training;
pub mod transforms;

pub use error::{Error, ErrorCategory, Result};
pub use grammar::{default_grammar, derives, generate_corpus, generate_sentence, GenerationConfig, Grammar, Sentence};
pub use tokenizer::{EncodedSequence, Vocabulary};
pub use transforms::{apply_transform, invert_parity_negation, transform_corpus, TransformKind};
