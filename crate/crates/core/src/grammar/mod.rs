//! Context-free grammar for simple English SVO sentences.
//!
//! The grammar is a quadruple (V, Σ, R, S). Subject-auxiliary number
//! agreement is carried as a feature on rules: the first expansion of the
//! agreement controller (`NP`) fixes the sentence number, and every later
//! expansion of an agreement target (`C_be`, `C_have`) must pick a rule whose
//! tag matches. Both the generator and the membership check honor it.

mod lexicon;

pub use lexicon::{pluralize, Lexicon, VerbForms};

use crate::error::{Error, Result};
use rand::Rng;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Number {
    Singular,
    Plural,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Nonterminal(String),
    Terminal(String),
}

impl Symbol {
    fn nt(name: &str) -> Symbol {
        Symbol::Nonterminal(name.to_string())
    }

    fn t(word: &str) -> Symbol {
        Symbol::Terminal(word.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub lhs: String,
    pub rhs: Vec<Symbol>,
    /// Agreement feature carried by this alternative, if any.
    pub number: Option<Number>,
}

impl RewriteRule {
    fn new(lhs: &str, rhs: Vec<Symbol>) -> Self {
        RewriteRule {
            lhs: lhs.to_string(),
            rhs,
            number: None,
        }
    }

    fn tagged(mut self, number: Number) -> Self {
        self.number = Some(number);
        self
    }
}

/// Which nonterminal fixes the sentence number and which ones must agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agreement {
    pub controller: String,
    pub targets: BTreeSet<String>,
}

/// Nonterminal whose single empty rule realizes the singular ∅ morpheme.
pub const NULL_MORPHEME: &str = "Zero";

#[derive(Debug, Clone)]
pub struct Grammar {
    nonterminals: BTreeSet<String>,
    terminals: BTreeSet<String>,
    rules: Vec<RewriteRule>,
    start: String,
    agreement: Option<Agreement>,
    by_lhs: HashMap<String, Vec<usize>>,
    min_yield: HashMap<String, usize>,
}

impl Grammar {
    /// Builds a grammar, deriving Σ from the rule right-hand sides and V from
    /// the left-hand sides.
    pub fn new(rules: Vec<RewriteRule>, start: &str, agreement: Option<Agreement>) -> Result<Self> {
        let nonterminals: BTreeSet<String> = rules.iter().map(|r| r.lhs.clone()).collect();
        let mut terminals = BTreeSet::new();
        for rule in &rules {
            if rule.rhs.is_empty() && rule.lhs != NULL_MORPHEME {
                return Err(Error::InvalidGrammar(format!(
                    "empty right side for {}; only {NULL_MORPHEME} may be empty",
                    rule.lhs
                )));
            }
            for sym in &rule.rhs {
                match sym {
                    Symbol::Nonterminal(n) if !nonterminals.contains(n) => {
                        return Err(Error::InvalidGrammar(format!("{n} has no rules")));
                    }
                    Symbol::Terminal(t) => {
                        terminals.insert(t.clone());
                    }
                    _ => {}
                }
            }
        }
        if let Some(clash) = nonterminals.intersection(&terminals).next() {
            return Err(Error::InvalidGrammar(format!("{clash} is both terminal and nonterminal")));
        }
        if !nonterminals.contains(start) {
            return Err(Error::InvalidGrammar(format!("start symbol {start} has no rules")));
        }
        if let Some(agr) = &agreement {
            for n in std::iter::once(&agr.controller).chain(&agr.targets) {
                if !nonterminals.contains(n) {
                    return Err(Error::InvalidGrammar(format!("agreement symbol {n} has no rules")));
                }
            }
        }
        let mut by_lhs: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            by_lhs.entry(rule.lhs.clone()).or_default().push(i);
        }
        let grammar = Grammar {
            nonterminals,
            terminals,
            rules,
            start: start.to_string(),
            agreement,
            by_lhs,
            min_yield: HashMap::new(),
        };
        grammar.check_acyclic()?;
        let mut min_yield = HashMap::new();
        for n in &grammar.nonterminals {
            grammar.shortest_yield(n, &mut min_yield);
        }
        Ok(Grammar { min_yield, ..grammar })
    }

    pub fn nonterminals(&self) -> &BTreeSet<String> {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &BTreeSet<String> {
        &self.terminals
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn agreement(&self) -> Option<&Agreement> {
        self.agreement.as_ref()
    }

    /// Indices of the alternatives for `lhs`, in rule order.
    pub fn alternatives(&self, lhs: &str) -> &[usize] {
        self.by_lhs.get(lhs).map(Vec::as_slice).unwrap_or(&[])
    }

    // Generation and parsing both rely on termination, so recursion is rejected.
    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Unseen,
            Active,
            Done,
        }
        fn visit(g: &Grammar, n: &str, marks: &mut HashMap<String, Mark>) -> Result<()> {
            match marks.get(n).copied().unwrap_or(Mark::Unseen) {
                Mark::Done => return Ok(()),
                Mark::Active => {
                    return Err(Error::InvalidGrammar(format!("recursive nonterminal {n}")));
                }
                Mark::Unseen => {}
            }
            marks.insert(n.to_string(), Mark::Active);
            for &i in g.alternatives(n) {
                for sym in &g.rules[i].rhs {
                    if let Symbol::Nonterminal(child) = sym {
                        visit(g, child, marks)?;
                    }
                }
            }
            marks.insert(n.to_string(), Mark::Done);
            Ok(())
        }
        let mut marks = HashMap::new();
        for n in &self.nonterminals {
            visit(self, n, &mut marks)?;
        }
        Ok(())
    }

    fn shortest_yield(&self, n: &str, memo: &mut HashMap<String, usize>) -> usize {
        if let Some(&len) = memo.get(n) {
            return len;
        }
        let len = self
            .alternatives(n)
            .iter()
            .map(|&i| {
                self.rules[i]
                    .rhs
                    .iter()
                    .map(|sym| match sym {
                        Symbol::Terminal(_) => 1,
                        Symbol::Nonterminal(c) => self.shortest_yield(c, memo),
                    })
                    .sum()
            })
            .min()
            .unwrap_or(0);
        memo.insert(n.to_string(), len);
        len
    }

    fn min_words(&self, name: &str) -> usize {
        self.min_yield.get(name).copied().unwrap_or(1)
    }

    /// Keeps only the first `k` alternatives of each lexical category, where
    /// `k` comes from the matching lexicon size.
    pub fn restrict_lexicon(&self, sizes: &LexiconSizes) -> Result<Grammar> {
        let limits = [
            ("N_sing", sizes.nouns),
            ("N_pl", sizes.nouns),
            ("V_base", sizes.verbs),
            ("V_ing", sizes.verbs),
            ("V_en", sizes.verbs),
            ("M", sizes.modals),
        ];
        let mut keep = vec![true; self.rules.len()];
        for (lhs, limit) in limits {
            let alts = self.alternatives(lhs);
            if alts.is_empty() {
                continue;
            }
            if limit == 0 || limit > alts.len() {
                return Err(Error::InvalidGenerationConfig(format!(
                    "{lhs} lexicon size {limit} outside 1..={}",
                    alts.len()
                )));
            }
            for &i in &alts[limit..] {
                keep[i] = false;
            }
        }
        let rules = self
            .rules
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(r, _)| r.clone())
            .collect();
        Grammar::new(rules, &self.start, self.agreement.clone())
    }

    fn admissible(&self, rule: &RewriteRule, state: &AgreementState) -> bool {
        match (&self.agreement, rule.number, state.number) {
            (Some(agr), Some(tag), Some(fixed)) if agr.targets.contains(&rule.lhs) => tag == fixed,
            _ => true,
        }
    }

    fn after_expansion(&self, rule: &RewriteRule, state: AgreementState) -> AgreementState {
        match &self.agreement {
            Some(agr) if rule.lhs == agr.controller && !state.controller_seen => AgreementState {
                number: rule.number.or(state.number),
                controller_seen: true,
            },
            _ => state,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct AgreementState {
    number: Option<Number>,
    controller_seen: bool,
}

/// The English SVO rule set with realized morphemes, over the full bundled
/// lexicon.
pub fn default_grammar() -> Grammar {
    use Number::{Plural, Singular};
    use Symbol as S;
    let lex = Lexicon::bundled();
    let r = RewriteRule::new;
    let mut rules = vec![
        r("Sentence", vec![S::nt("NP"), S::nt("VP")]),
        r("VP", vec![S::nt("Verb"), S::nt("Obj")]),
        r("Obj", vec![S::nt("NP")]),
        r("Obj", vec![S::nt("N_pl")]),
        r("NP", vec![S::nt("NP_sing")]).tagged(Singular),
        r("NP", vec![S::nt("NP_pl")]).tagged(Plural),
        r("NP_sing", vec![S::nt("T"), S::nt("N_sing"), S::nt(NULL_MORPHEME)]),
        r("NP_pl", vec![S::nt("T"), S::nt("N_pl")]),
        r(NULL_MORPHEME, vec![]),
        r("T", vec![S::t("the")]),
        r("Verb", vec![S::nt("Prog"), S::nt("V_ing")]),
        r("Verb", vec![S::nt("Perf"), S::nt("V_en")]),
        r("Verb", vec![S::nt("Pass"), S::nt("V_en")]),
        r("Verb", vec![S::nt("M"), S::nt("V_base")]),
        r("Prog", vec![S::nt("C_be")]),
        r("Prog", vec![S::nt("M"), S::nt("Be")]),
        r("Perf", vec![S::nt("C_have")]),
        r("Perf", vec![S::nt("M"), S::nt("Have")]),
        r("Pass", vec![S::nt("C_be")]),
        r("Be", vec![S::t("be")]),
        r("Have", vec![S::t("have")]),
        r("C_be", vec![S::t("is")]).tagged(Singular),
        r("C_be", vec![S::t("are")]).tagged(Plural),
        r("C_be", vec![S::t("was")]).tagged(Singular),
        r("C_be", vec![S::t("were")]).tagged(Plural),
        r("C_have", vec![S::t("has")]).tagged(Singular),
        r("C_have", vec![S::t("have")]).tagged(Plural),
    ];
    rules.extend(lex.modals.iter().map(|m| r("M", vec![S::t(m)])));
    rules.extend(lex.nouns.iter().map(|n| r("N_sing", vec![S::t(n)])));
    rules.extend(lex.nouns.iter().map(|n| r("N_pl", vec![S::t(&pluralize(n))])));
    rules.extend(lex.verbs.iter().map(|v| r("V_base", vec![S::t(&v.base)])));
    rules.extend(lex.verbs.iter().map(|v| r("V_ing", vec![S::t(&v.present_participle)])));
    rules.extend(lex.verbs.iter().map(|v| r("V_en", vec![S::t(&v.past_participle)])));
    let agreement = Agreement {
        controller: "NP".to_string(),
        targets: ["C_be", "C_have"].iter().map(|s| s.to_string()).collect(),
    };
    Grammar::new(rules, "Sentence", Some(agreement)).expect("default grammar is well formed")
}

/// A word sequence. Generated sentences carry the rule indices of their
/// leftmost derivation in `meta`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<String>,
    pub meta: Option<Vec<usize>>,
}

impl Sentence {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Sentence {
            words: words.into_iter().map(Into::into).collect(),
            meta: None,
        }
    }

    /// Splits a corpus line on whitespace.
    pub fn parse_line(line: &str) -> Self {
        Sentence::from_words(line.split_whitespace())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.words.join(" "))
    }
}

/// Per-category lexicon sizes; a size of k keeps the first k bundled entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LexiconSizes {
    pub nouns: usize,
    pub verbs: usize,
    pub modals: usize,
}

impl Default for LexiconSizes {
    fn default() -> Self {
        let lex = Lexicon::bundled();
        LexiconSizes {
            nouns: lex.nouns.len(),
            verbs: lex.verbs.len(),
            modals: lex.modals.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GenerationConfig {
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub lexicon: LexiconSizes,
}

impl GenerationConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        GenerationConfig {
            count,
            seed,
            lexicon: LexiconSizes::default(),
        }
    }
}

/// Expands the start symbol leftmost-first, choosing uniformly among the
/// admissible alternatives at every step.
pub fn generate_sentence<R: Rng + ?Sized>(grammar: &Grammar, rng: &mut R) -> Sentence {
    let mut stack = vec![Symbol::Nonterminal(grammar.start.clone())];
    let mut words = Vec::new();
    let mut trace = Vec::new();
    let mut state = AgreementState::default();
    while let Some(sym) = stack.pop() {
        match sym {
            Symbol::Terminal(w) => words.push(w),
            Symbol::Nonterminal(n) => {
                let choices: Vec<usize> = grammar
                    .alternatives(&n)
                    .iter()
                    .copied()
                    .filter(|&i| grammar.admissible(&grammar.rules[i], &state))
                    .collect();
                let idx = choices[rng.random_range(0..choices.len())];
                let rule = &grammar.rules[idx];
                state = grammar.after_expansion(rule, state);
                trace.push(idx);
                stack.extend(rule.rhs.iter().rev().cloned());
            }
        }
    }
    Sentence {
        words,
        meta: Some(trace),
    }
}

pub fn generate_corpus(grammar: &Grammar, config: &GenerationConfig) -> Result<Vec<Sentence>> {
    use rand::SeedableRng;
    let grammar = grammar.restrict_lexicon(&config.lexicon)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..config.count)
        .map(|_| generate_sentence(&grammar, &mut rng))
        .collect())
}

/// Membership test by exhaustive top-down parsing with agreement.
pub fn derives(grammar: &Grammar, sentence: &Sentence) -> bool {
    let words: Vec<&str> = sentence.words.iter().map(String::as_str).collect();
    let stack = vec![grammar.start.as_str()];
    parse(grammar, &words, stack, AgreementState::default())
}

// `stack` holds pending symbols with the next one on top; terminals and
// nonterminals are disjoint, so a name is a nonterminal iff it has rules.
fn parse(grammar: &Grammar, words: &[&str], mut stack: Vec<&str>, state: AgreementState) -> bool {
    let Some(top) = stack.pop() else {
        return words.is_empty();
    };
    if !grammar.nonterminals.contains(top) {
        return match words.split_first() {
            Some((w, rest)) if *w == top => parse(grammar, rest, stack, state),
            _ => false,
        };
    }
    grammar.alternatives(top).iter().any(|&i| {
        let rule = &grammar.rules[i];
        if !grammar.admissible(rule, &state) {
            return false;
        }
        let mut next = stack.clone();
        next.extend(rule.rhs.iter().rev().map(|s| match s {
            Symbol::Nonterminal(n) | Symbol::Terminal(n) => n.as_str(),
        }));
        let min_words: usize = next.iter().map(|s| grammar.min_words(s)).sum();
        min_words <= words.len() && parse(grammar, words, next, grammar.after_expansion(rule, state))
    })
}

/// Subject number of a generated sentence, read from its derivation trace.
pub fn subject_number(grammar: &Grammar, sentence: &Sentence) -> Option<Number> {
    let agr = grammar.agreement.as_ref()?;
    sentence
        .meta
        .as_ref()?
        .iter()
        .map(|&i| &grammar.rules[i])
        .find(|r| r.lhs == agr.controller)
        .and_then(|r| r.number)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(text: &str) -> Sentence {
        Sentence::parse_line(text)
    }

    #[test]
    fn start_symbol_first_expands_to_np_vp() {
        let g = default_grammar();
        let first = &g.rules()[g.alternatives(g.start())[0]];
        assert_eq!(first.rhs, vec![Symbol::nt("NP"), Symbol::nt("VP")]);
    }

    #[test]
    fn modal_set_matches_rewrite_rule() {
        let g = default_grammar();
        let modals: Vec<_> = g
            .alternatives("M")
            .iter()
            .map(|&i| g.rules()[i].rhs[0].clone())
            .collect();
        let expected: Vec<_> = ["will", "can", "may", "shall", "must"].map(Symbol::t).into();
        assert_eq!(modals, expected);
    }

    #[test]
    fn terminals_and_nonterminals_are_disjoint() {
        let g = default_grammar();
        assert!(g.nonterminals().is_disjoint(g.terminals()));
        assert!(g.nonterminals().contains(g.start()));
    }

    #[test]
    fn only_the_null_morpheme_may_be_empty() {
        let rules = vec![RewriteRule::new("S", vec![])];
        assert!(matches!(Grammar::new(rules, "S", None), Err(Error::InvalidGrammar(_))));
    }

    #[test]
    fn recursive_grammars_are_rejected() {
        let rules = vec![
            RewriteRule::new("S", vec![Symbol::t("a"), Symbol::nt("S")]),
            RewriteRule::new("S", vec![Symbol::t("a")]),
        ];
        assert!(matches!(Grammar::new(rules, "S", None), Err(Error::InvalidGrammar(_))));
    }

    #[test]
    fn terminal_nonterminal_clash_is_rejected() {
        let rules = vec![
            RewriteRule::new("S", vec![Symbol::t("A")]),
            RewriteRule::new("A", vec![Symbol::t("a")]),
        ];
        assert!(Grammar::new(rules, "S", None).is_err());
    }

    #[test]
    fn membership_examples() {
        let g = default_grammar();
        assert!(derives(&g, &s("the workers are using phones")));
        assert!(derives(&g, &s("the horse has enjoyed the school")));
        assert!(derives(&g, &s("the girl is given cats")));
        assert!(derives(&g, &s("the boys will have broken the windows")));
        assert!(!derives(&g, &s("phones using are workers the")));
        assert!(!derives(&g, &Sentence::default()));
    }

    #[test]
    fn membership_enforces_agreement() {
        let g = default_grammar();
        assert!(!derives(&g, &s("the girl are using phones")));
        assert!(!derives(&g, &s("the workers has enjoyed the school")));
        // object number is free
        assert!(derives(&g, &s("the girl has enjoyed the schools")));
        // modals do not agree
        assert!(derives(&g, &s("the girl must use phones")));
        assert!(derives(&g, &s("the girls must use phones")));
    }

    #[test]
    fn membership_rejects_wrong_participles() {
        let g = default_grammar();
        assert!(!derives(&g, &s("the girl is use phones")));
        assert!(!derives(&g, &s("the girl has using phones")));
        assert!(!derives(&g, &s("the girl will using phones")));
        assert!(!derives(&g, &s("the workers are using phones NOT")));
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let g = default_grammar();
        let a = generate_sentence(&g, &mut ChaCha8Rng::seed_from_u64(42));
        let b = generate_sentence(&g, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn generated_sentences_have_svo_shape() {
        let g = default_grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let sent = generate_sentence(&g, &mut rng);
            assert!(derives(&g, &sent), "{sent}");
            assert_eq!(sent.words[0], "the");
            assert!((5..=7).contains(&sent.len()), "{sent}");
            assert!(sent.words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
            assert!(sent.meta.as_ref().is_some_and(|m| !m.is_empty()));
        }
    }

    #[test]
    fn surface_length_bounds_are_attained() {
        let g = default_grammar();
        let corpus = generate_corpus(&g, &GenerationConfig::new(2000, 3)).unwrap();
        let min = corpus.iter().map(Sentence::len).min().unwrap();
        let max = corpus.iter().map(Sentence::len).max().unwrap();
        assert_eq!((min, max), (5, 7));
    }

    #[test]
    fn subject_number_matches_auxiliary_form() {
        let g = default_grammar();
        let corpus = generate_corpus(&g, &GenerationConfig::new(2000, 11)).unwrap();
        for sent in &corpus {
            let number = subject_number(&g, sent).unwrap();
            let aux = &sent.words[2];
            match aux.as_str() {
                "is" | "was" | "has" => assert_eq!(number, Number::Singular, "{sent}"),
                "are" | "were" | "have" => assert_eq!(number, Number::Plural, "{sent}"),
                m => assert!(Lexicon::bundled().modals.iter().any(|x| x == m), "{sent}"),
            }
        }
    }

    #[test]
    fn corpus_count_and_empty_case() {
        let g = default_grammar();
        assert_eq!(generate_corpus(&g, &GenerationConfig::new(10_000, 1)).unwrap().len(), 10_000);
        assert!(generate_corpus(&g, &GenerationConfig::new(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn restricted_lexicon_limits_vocabulary() {
        let g = default_grammar();
        let cfg = GenerationConfig {
            count: 3000,
            seed: 5,
            lexicon: LexiconSizes {
                nouns: 3,
                verbs: 2,
                modals: 1,
            },
        };
        let corpus = generate_corpus(&g, &cfg).unwrap();
        let restricted = g.restrict_lexicon(&cfg.lexicon).unwrap();
        let words: BTreeSet<&str> = corpus.iter().flat_map(|s| s.words.iter().map(String::as_str)).collect();
        for w in &words {
            assert!(restricted.terminals().contains(*w));
        }
        assert!(words.contains("worker") || words.contains("workers"));
        assert!(!words.contains("girl") && !words.contains("can"));
    }

    #[test]
    fn oversized_lexicon_is_rejected() {
        let g = default_grammar();
        let mut cfg = GenerationConfig::new(1, 1);
        cfg.lexicon.nouns = 10_000;
        assert!(matches!(generate_corpus(&g, &cfg), Err(Error::InvalidGenerationConfig(_))));
    }
}
