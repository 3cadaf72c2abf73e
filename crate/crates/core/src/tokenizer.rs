//! Closed word-level vocabulary with boundary specials.

use crate::error::{Error, Result};
use crate::grammar::Sentence;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    words: Vec<String>,
    unknown: AtomicUsize,
}

impl Clone for Vocabulary {
    fn clone(&self) -> Self {
        Vocabulary {
            ids: self.ids.clone(),
            words: self.words.clone(),
            unknown: AtomicUsize::new(self.unknown_count()),
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
}

impl EncodedSequence {
    /// Token count including BOS and EOS.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Vocabulary {
    /// Specials first, then words in order of first appearance.
    pub fn build<'a, I>(corpus: I) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        let mut vocab = Vocabulary {
            ids: HashMap::new(),
            words: SPECIAL_NAMES.iter().map(|s| s.to_string()).collect(),
            unknown: AtomicUsize::new(0),
        };
        let mut lines = 0;
        for sentence in corpus {
            lines += 1;
            for w in &sentence.words {
                if !vocab.ids.contains_key(w) {
                    vocab.ids.insert(w.clone(), vocab.words.len());
                    vocab.words.push(w.clone());
                }
            }
        }
        if lines == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(vocab)
    }

    /// Total size including specials.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    /// Number of out-of-vocabulary words seen by `encode` so far.
    pub fn unknown_count(&self) -> usize {
        self.unknown.load(Ordering::Relaxed)
    }

    pub fn encode(&self, s: &Sentence) -> EncodedSequence {
        let mut ids = Vec::with_capacity(s.len() + 2);
        ids.push(BOS);
        for w in &s.words {
            ids.push(self.id(w).unwrap_or_else(|| {
                self.unknown.fetch_add(1, Ordering::Relaxed);
                UNK
            }));
        }
        ids.push(EOS);
        EncodedSequence { ids }
    }

    /// Maps ids back to words; specials are dropped.
    pub fn decode(&self, e: &EncodedSequence) -> Result<Sentence> {
        let mut words = Vec::with_capacity(e.len());
        for &id in &e.ids {
            if id >= self.len() {
                return Err(Error::IdOutOfRange { id, size: self.len() });
            }
            if id >= NUM_SPECIALS {
                words.push(self.words[id].clone());
            }
        }
        Ok(Sentence::from_words(words))
    }

    /// Four special lines, then one word per line in id order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Vocabulary> {
        let mut words = Vec::new();
        for line in input.lines() {
            words.push(line?);
        }
        if words.len() < NUM_SPECIALS || words[..NUM_SPECIALS] != SPECIAL_NAMES {
            return Err(Error::BadVocabulary("missing special header".into()));
        }
        let mut ids = HashMap::new();
        for (id, w) in words.iter().enumerate().skip(NUM_SPECIALS) {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::BadVocabulary(format!("line {}: invalid word {w:?}", id + 1)));
            }
            if ids.insert(w.clone(), id).is_some() {
                return Err(Error::BadVocabulary(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary {
            ids,
            words,
            unknown: AtomicUsize::new(0),
        })
    }
}
