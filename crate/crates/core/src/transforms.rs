//! Identity, reversal and parity-negation transformations, applied per
//! sentence or streamed over a corpus file.

use crate::error::{Error, Result};
use crate::grammar::Sentence;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

/// The reserved negation marker. The grammar never produces it.
pub const NEGATION_TOKEN: &str = "NOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Identity,
    Reverse,
    ParityNegation,
}

impl TransformKind {
    pub const ALL: [TransformKind; 3] = [TransformKind::Identity, TransformKind::Reverse, TransformKind::ParityNegation];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Reverse => "reverse",
            TransformKind::ParityNegation => "parity-negation",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown transform {s:?} (expected identity, reverse or parity-negation)"))
    }
}

pub fn apply_transform(kind: TransformKind, s: &Sentence) -> Result<Sentence> {
    if s.is_empty() {
        return Err(Error::EmptyInput);
    }
    if s.words.iter().any(|w| w == NEGATION_TOKEN) {
        return Err(Error::ReservedToken);
    }
    Ok(match kind {
        TransformKind::Identity => s.clone(),
        TransformKind::Reverse => Sentence::from_words(s.words.iter().rev().cloned()),
        TransformKind::ParityNegation => {
            let mut words = Vec::with_capacity(s.len() + 1);
            if s.len() % 2 == 1 {
                words.extend(s.words.iter().cloned());
                words.push(NEGATION_TOKEN.to_string());
            } else {
                words.push(NEGATION_TOKEN.to_string());
                words.extend(s.words.iter().cloned());
            }
            Sentence::from_words(words)
        }
    })
}

/// Removes the single boundary negation token added by parity negation.
pub fn invert_parity_negation(s: &Sentence) -> Result<Sentence> {
    let positions: Vec<usize> = s
        .words
        .iter()
        .enumerate()
        .filter_map(|(i, w)| (w == NEGATION_TOKEN).then_some(i))
        .collect();
    match positions.as_slice() {
        [p] if *p == 0 || *p + 1 == s.len() => {
            let words = s.words.iter().enumerate().filter(|(i, _)| i != p).map(|(_, w)| w.clone());
            Ok(Sentence::from_words(words))
        }
        _ => Err(Error::NotParityNegation),
    }
}

/// Streams `input` line by line into `output`, `chunk_size` lines at a time.
/// Blank lines are treated as empty sentences and rejected. Returns the
/// number of lines written.
pub fn transform_corpus<R: BufRead, W: Write>(
    kind: TransformKind,
    input: R,
    mut output: W,
    chunk_size: usize,
) -> Result<usize> {
    if chunk_size == 0 {
        return Err(Error::InvalidOp {
            op: "transform_corpus",
            msg: "chunk size must be at least 1".into(),
        });
    }
    let mut chunk: Vec<Sentence> = Vec::with_capacity(chunk_size);
    let mut first_line = 1;
    let mut written = 0;
    let flush = |chunk: &mut Vec<Sentence>, first_line: usize, output: &mut W| -> Result<usize> {
        let mut buf = String::new();
        for (offset, s) in chunk.iter().enumerate() {
            let t = apply_transform(kind, s).map_err(|e| e.at_line(first_line + offset))?;
            buf.push_str(&t.to_string());
            buf.push('\n');
        }
        output.write_all(buf.as_bytes())?;
        let n = chunk.len();
        chunk.clear();
        Ok(n)
    };
    for line in input.lines() {
        chunk.push(Sentence::parse_line(&line?));
        if chunk.len() == chunk_size {
            written += flush(&mut chunk, first_line, &mut output)?;
            first_line += chunk_size;
        }
    }
    written += flush(&mut chunk, first_line, &mut output)?;
    output.flush()?;
    Ok(written)
}

/// Display form: the first word that is not the negation token is
/// capitalized.
pub fn render(s: &Sentence) -> String {
    let mut capitalized = false;
    let words: Vec<String> = s
        .words
        .iter()
        .map(|w| {
            if capitalized || w == NEGATION_TOKEN {
                return w.clone();
            }
            capitalized = true;
            let mut chars = w.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        })
        .collect();
    words.join(" ")
}

/// Normalizes a line of external text: lowercases words and strips every
/// non-alphanumeric character, so parity is counted over word tokens only.
pub fn normalize_external(line: &str) -> Sentence {
    Sentence::from_words(line.split_whitespace().filter_map(|w| {
        let cleaned: String = w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
        (!cleaned.is_empty()).then_some(cleaned)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(text: &str) -> Sentence {
        Sentence::parse_line(text)
    }

    #[test]
    fn reversal_example() {
        let out = apply_transform(TransformKind::Reverse, &s("the workers are using phones")).unwrap();
        assert_eq!(out.to_string(), "phones using are workers the");
        assert_eq!(render(&out), "Phones using are workers the");
    }

    #[test]
    fn parity_negation_examples() {
        let even = apply_transform(TransformKind::ParityNegation, &s("the horse has enjoyed the school")).unwrap();
        assert_eq!(even.to_string(), "NOT the horse has enjoyed the school");
        assert_eq!(render(&even), "NOT The horse has enjoyed the school");
        let odd = apply_transform(TransformKind::ParityNegation, &s("the girl is given cats")).unwrap();
        assert_eq!(odd.to_string(), "the girl is given cats NOT");
        assert_eq!(render(&odd), "The girl is given cats NOT");
    }

    #[test]
    fn identity_keeps_metadata() {
        let mut x = s("the dog runs");
        x.meta = Some(vec![1, 2, 3]);
        assert_eq!(apply_transform(TransformKind::Identity, &x).unwrap(), x);
    }

    #[test]
    fn transform_errors() {
        assert!(matches!(apply_transform(TransformKind::Reverse, &Sentence::default()), Err(Error::EmptyInput)));
        assert!(matches!(
            apply_transform(TransformKind::Identity, &s("NOT the dog")),
            Err(Error::ReservedToken)
        ));
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(
            invert_parity_negation(&s("NOT the horse has enjoyed the school")).unwrap().to_string(),
            "the horse has enjoyed the school"
        );
        assert_eq!(invert_parity_negation(&s("the girl is given cats NOT")).unwrap().to_string(), "the girl is given cats");
        for bad in ["the NOT girl runs", "the girl runs", "NOT the girl NOT", "NOT NOT"] {
            assert!(matches!(invert_parity_negation(&s(bad)), Err(Error::NotParityNegation)), "{bad}");
        }
    }

    #[test]
    fn kind_parses_from_cli_names() {
        for k in TransformKind::ALL {
            assert_eq!(k.as_str().parse::<TransformKind>().unwrap(), k);
        }
        assert!("shuffle".parse::<TransformKind>().is_err());
    }

    #[test]
    fn corpus_stream_reports_line_numbers() {
        let input = "the dog runs\n\nthe cat sleeps\n";
        let err = transform_corpus(TransformKind::Reverse, input.as_bytes(), Vec::new(), 1).unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, .. }), "{err}");
        let err = transform_corpus(TransformKind::Reverse, "a b\nc NOT\n".as_bytes(), Vec::new(), 8).unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, .. }), "{err}");
        assert!(transform_corpus(TransformKind::Reverse, "a\n".as_bytes(), Vec::new(), 0).is_err());
    }

    #[test]
    fn corpus_stream_writes_one_line_per_sentence() {
        let mut out = Vec::new();
        let n = transform_corpus(TransformKind::ParityNegation, "a b c\nd e\n".as_bytes(), &mut out, 1).unwrap();
        assert_eq!(n, 2);
        assert_eq!(String::from_utf8(out).unwrap(), "a b c NOT\nNOT d e\n");
    }

    #[test]
    fn external_text_is_lowercased_and_stripped() {
        assert_eq!(normalize_external("The dog, NOT happy!  \"Runs\".").to_string(), "the dog not happy runs");
        assert!(normalize_external(" ... ").is_empty());
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,8}"
    }

    fn sentence() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(word(), 1..12).prop_map(Sentence::from_words)
    }

    proptest! {
        #[test]
        fn reverse_is_an_involution(x in sentence()) {
            let once = apply_transform(TransformKind::Reverse, &x).unwrap();
            let twice = apply_transform(TransformKind::Reverse, &once).unwrap();
            prop_assert_eq!(&twice.words, &x.words);
            let mut a = once.words.clone();
            let mut b = x.words.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn parity_negation_position_rule(x in sentence()) {
            let y = apply_transform(TransformKind::ParityNegation, &x).unwrap();
            prop_assert_eq!(y.len(), x.len() + 1);
            prop_assert_eq!(y.words.last().unwrap() == NEGATION_TOKEN, x.len() % 2 == 1);
            prop_assert_eq!(invert_parity_negation(&y).unwrap().words, x.words);
        }

        #[test]
        fn stream_output_is_chunk_independent(xs in prop::collection::vec(sentence(), 0..40), chunk in 1usize..50) {
            let text: String = xs.iter().map(|s| format!("{s}\n")).collect();
            let mut a = Vec::new();
            let mut b = Vec::new();
            transform_corpus(TransformKind::ParityNegation, text.as_bytes(), &mut a, chunk).unwrap();
            transform_corpus(TransformKind::ParityNegation, text.as_bytes(), &mut b, 4096).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
