//! Bundled word lists and the noun pluralizer.

use serde::Deserialize;
use std::sync::OnceLock;

const LEXICON_TOML: &str = include_str!("../../data/lexicon.toml");

/// Verb forms needed by the auxiliary system.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(from = "[String; 3]")]
pub struct VerbForms {
    pub base: String,
    pub present_participle: String,
    pub past_participle: String,
}

impl From<[String; 3]> for VerbForms {
    fn from([base, present_participle, past_participle]: [String; 3]) -> Self {
        VerbForms {
            base,
            present_participle,
            past_participle,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct Lexicon {
    pub nouns: Vec<String>,
    pub verbs: Vec<VerbForms>,
    pub modals: Vec<String>,
}

impl Lexicon {
    /// The lexicon shipped with the crate.
    pub fn bundled() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| toml::from_str(LEXICON_TOML).expect("bundled lexicon is valid TOML"))
    }
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("child", "children"),
    ("man", "men"),
    ("woman", "women"),
    ("person", "people"),
    ("mouse", "mice"),
    ("tooth", "teeth"),
    ("foot", "feet"),
    ("goose", "geese"),
    ("ox", "oxen"),
    ("roof", "roofs"),
    ("chef", "chefs"),
];

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// English plural of a singular noun.
pub fn pluralize(noun: &str) -> String {
    if let Some((_, plural)) = IRREGULAR_PLURALS.iter().find(|(s, _)| *s == noun) {
        return (*plural).to_string();
    }
    if ["s", "x", "z", "ch", "sh"].iter().any(|end| noun.ends_with(end)) {
        return format!("{noun}es");
    }
    if let Some(stem) = noun.strip_suffix('y') {
        if stem.chars().last().is_some_and(|c| !is_vowel(c)) {
            return format!("{stem}ies");
        }
    }
    if let Some(stem) = noun.strip_suffix("fe") {
        return format!("{stem}ves");
    }
    if let Some(stem) = noun.strip_suffix('f') {
        return format!("{stem}ves");
    }
    format!("{noun}s")
}
