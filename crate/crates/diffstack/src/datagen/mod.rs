//! Formal-language dataset machinery: Dyck and palindrome generators,
//! acceptance oracles, hard-negative mutation, benchmark assembly and
//! plain-text corpus ingestion.

mod benchmark;
mod corpus;
mod io;

pub use benchmark::{build_benchmark, Benchmark, BenchmarkSpec, GrammarId};
pub use corpus::{load_corpus, load_corpus_strings, Corpus};
pub use io::{read_split, write_split, SplitMeta};

use crate::math::RngStream;
use crate::{Error, Result};

/// Bracket glyphs for up to six Dyck pairs.
const BRACKET_PAIRS: [(&str, &str); 6] = [
    ("(", ")"),
    ("[", "]"),
    ("{", "}"),
    ("<", ">"),
    ("a", "A"),
    ("b", "B"),
];

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Ordered symbol set with the reserved EOS marker as the final entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    /// (open index, close index) per bracket type; empty for non-bracket
    /// alphabets.
    pairs: Vec<(usize, usize)>,
}

impl Alphabet {
    /// Dyck alphabet with `n_pairs` bracket pairs plus EOS.
    pub fn dyck(n_pairs: usize) -> Result<Self> {
        if n_pairs == 0 || n_pairs > BRACKET_PAIRS.len() {
            return Err(Error::Config(format!(
                "Dyck alphabet supports 1..={} pairs, got {n_pairs}",
                BRACKET_PAIRS.len()
            )));
        }
        let mut symbols = Vec::new();
        let mut pairs = Vec::new();
        for (open, close) in BRACKET_PAIRS.iter().take(n_pairs) {
            pairs.push((symbols.len(), symbols.len() + 1));
            symbols.push((*open).to_string());
            symbols.push((*close).to_string());
        }
        symbols.push(EOS.to_string());
        Ok(Alphabet { symbols, pairs })
    }

    /// Two-letter alphabet {a, b} plus EOS for the palindrome language.
    pub fn palindrome() -> Self {
        Alphabet {
            symbols: vec!["a".into(), "b".into(), EOS.into()],
            pairs: Vec::new(),
        }
    }

    /// Arbitrary word list; EOS is appended as the final entry.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut symbols = words;
        if symbols.iter().any(|w| w == EOS) {
            return Err(Error::Config("word list already contains EOS".into()));
        }
        symbols.push(EOS.to_string());
        let uniq: std::collections::HashSet<&String> = symbols.iter().collect();
        if uniq.len() != symbols.len() {
            return Err(Error::Config("alphabet symbols must be unique".into()));
        }
        Ok(Alphabet {
            symbols,
            pairs: Vec::new(),
        })
    }

    /// Vocabulary size including EOS.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eos(&self) -> usize {
        self.symbols.len() - 1
    }

    /// Number of symbols usable inside strings (everything except EOS).
    pub fn n_terminals(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn index(&self, sym: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == sym)
    }

    /// The bracket type opened by `sym`, if any.
    fn open_type(&self, sym: usize) -> Option<usize> {
        self.pairs.iter().position(|&(o, _)| o == sym)
    }

    fn close_type(&self, sym: usize) -> Option<usize> {
        self.pairs.iter().position(|&(_, c)| c == sym)
    }
}

/// One labeled string: token indices (EOS excluded) and the accept bit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub label: bool,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self, alphabet: &Alphabet) -> String {
        self.tokens
            .iter()
            .map(|&t| alphabet.symbol(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A named collection of samples with its length window (inclusive bounds).
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: String,
    pub samples: Vec<Sample>,
    pub window: (usize, usize),
}

impl DatasetSplit {
    pub fn positive_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.label).count() as f64 / self.samples.len() as f64
    }

    /// Histogram of lengths in buckets of width 10 keyed by bucket start.
    pub fn length_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut h = std::collections::BTreeMap::new();
        for s in &self.samples {
            *h.entry((s.len() / 10) * 10).or_insert(0) += 1;
        }
        h
    }

    pub fn check_window(&self) -> Result<()> {
        for s in &self.samples {
            if s.len() < self.window.0 || s.len() > self.window.1 {
                return Err(Error::Generation(format!(
                    "split {}: sample length {} outside window {:?}",
                    self.name,
                    s.len(),
                    self.window
                )));
            }
        }
        Ok(())
    }
}

/// Production probabilities of the Dyck PCFG: each bracket type expands
/// with mass p/n, S->SS with p1, epsilon with the remainder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PcfgParams {
    pub p: f64,
    pub p1: f64,
}

impl Default for PcfgParams {
    fn default() -> Self {
        PcfgParams { p: 0.5, p1: 0.25 }
    }
}

impl PcfgParams {
    pub fn validate(&self) -> Result<()> {
        if self.p < 0.0 || self.p1 < 0.0 || self.p + self.p1 >= 1.0 {
            return Err(Error::Config(format!(
                "PCFG params need p, p1 >= 0 and p + p1 < 1, got p={} p1={}",
                self.p, self.p1
            )));
        }
        Ok(())
    }
}

/// Dyck membership: one left-to-right pass with an explicit symbol stack.
/// Accepts iff no pop from empty, no type mismatch, and the stack ends empty.
pub fn dyck_oracle(tokens: &[usize], alphabet: &Alphabet) -> Result<bool> {
    let mut stack: Vec<usize> = Vec::new();
    for &t in tokens {
        if let Some(ty) = alphabet.open_type(t) {
            stack.push(ty);
        } else if let Some(ty) = alphabet.close_type(t) {
            match stack.pop() {
                Some(open_ty) if open_ty == ty => {}
                _ => return Ok(false),
            }
        } else {
            return Err(Error::Config(format!(
                "symbol '{}' is not a bracket",
                alphabet.symbol(t)
            )));
        }
    }
    Ok(stack.is_empty())
}

/// Even-length mirror membership: w concatenated with its reverse.
pub fn palindrome_oracle(tokens: &[usize]) -> bool {
    tokens.len() % 2 == 0 && tokens.iter().eq(tokens.iter().rev())
}

/// One string from the Dyck PCFG, truncated at `max_len` (returns None if
/// the derivation would exceed it).
pub fn raw_dyck_string(
    params: &PcfgParams,
    alphabet: &Alphabet,
    max_len: usize,
    rng: &mut RngStream,
) -> Option<Vec<usize>> {
    #[derive(Clone, Copy)]
    enum Item {
        S,
        Term(usize),
    }
    let n = alphabet.n_pairs() as f64;
    let mut work = vec![Item::S];
    let mut out = Vec::new();
    while let Some(item) = work.pop() {
        match item {
            Item::Term(t) => {
                out.push(t);
                if out.len() > max_len {
                    return None;
                }
            }
            Item::S => {
                let u = rng.uniform();
                if u < params.p {
                    let ty = ((u / params.p * n) as usize).min(alphabet.n_pairs() - 1);
                    let (open, close) = alphabet.pairs()[ty];
                    work.push(Item::Term(close));
                    work.push(Item::S);
                    work.push(Item::Term(open));
                } else if u < params.p + params.p1 {
                    work.push(Item::S);
                    work.push(Item::S);
                }
                // otherwise epsilon
                if work.len() + out.len() > 4 * max_len + 8 {
                    return None;
                }
            }
        }
    }
    Some(out)
}

/// A positive Dyck sample whose length falls in `window`, by rejection.
pub fn sample_dyck(
    params: &PcfgParams,
    alphabet: &Alphabet,
    window: (usize, usize),
    rng: &mut RngStream,
    retry_budget: usize,
) -> Result<Sample> {
    params.validate()?;
    if window.1 < 2 || window.0 > window.1 {
        return Err(Error::Config(format!("unusable length window {window:?}")));
    }
    for _ in 0..retry_budget {
        if let Some(tokens) = raw_dyck_string(params, alphabet, window.1, rng) {
            if tokens.len() >= window.0 && tokens.len() <= window.1 {
                debug_assert!(dyck_oracle(&tokens, alphabet).unwrap());
                return Ok(Sample {
                    tokens,
                    label: true,
                });
            }
        }
    }
    Err(Error::Generation(format!(
        "window {window:?} unreachable under p={} p1={} after {retry_budget} tries",
        params.p, params.p1
    )))
}

/// A positive palindrome sample: even length in `window`, w followed by
/// its mirror image.
pub fn sample_palindrome(
    alphabet: &Alphabet,
    window: (usize, usize),
    rng: &mut RngStream,
) -> Result<Sample> {
    if window.0 < 2 {
        return Err(Error::Config("palindrome window min must be >= 2".into()));
    }
    let lo = window.0 + window.0 % 2;
    if lo > window.1 {
        return Err(Error::Config(format!(
            "window {window:?} contains no even length"
        )));
    }
    let n_even = (window.1 - lo) / 2 + 1;
    let len = lo + 2 * rng.below(n_even);
    let half: Vec<usize> = (0..len / 2)
        .map(|_| rng.below(alphabet.n_terminals()))
        .collect();
    let mut tokens = half.clone();
    tokens.extend(half.iter().rev());
    debug_assert!(palindrome_oracle(&tokens));
    Ok(Sample {
        tokens,
        label: true,
    })
}

/// Bookkeeping from hard-negative generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NegativeStats {
    pub requested: usize,
    pub produced: usize,
    /// Positives whose mutations all stayed accepted within the budget.
    pub skipped: usize,
}

/// Hard negatives: clone positives, overwrite 1 or 3 uniformly chosen
/// positions with uniform symbols, keep only oracle-rejected results.
/// `count` is how many to produce (the builder derives it as a 15-30%
/// fraction of the easy-negative pool).
pub fn make_negatives(
    positives: &[Sample],
    count: usize,
    alphabet: &Alphabet,
    oracle: &dyn Fn(&[usize]) -> bool,
    rng: &mut RngStream,
) -> (Vec<Sample>, NegativeStats) {
    const PER_STRING_BUDGET: usize = 100;
    let mut stats = NegativeStats {
        requested: count,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(count);
    if positives.is_empty() {
        return (out, stats);
    }
    while out.len() < count {
        let base = &positives[rng.below(positives.len())];
        if base.is_empty() {
            stats.skipped += 1;
            if stats.skipped > count * PER_STRING_BUDGET {
                break;
            }
            continue;
        }
        let mut made = false;
        for _ in 0..PER_STRING_BUDGET {
            let mut tokens = base.tokens.clone();
            let swaps = if rng.below(2) == 0 { 1 } else { 3 };
            for _ in 0..swaps.min(tokens.len()) {
                let pos = rng.below(tokens.len());
                tokens[pos] = rng.below(alphabet.n_terminals());
            }
            if !oracle(&tokens) {
                out.push(Sample {
                    tokens,
                    label: false,
                });
                made = true;
                break;
            }
        }
        if !made {
            stats.skipped += 1;
            if stats.skipped > count {
                // give up rather than loop forever on a degenerate language
                break;
            }
        }
    }
    stats.produced = out.len();
    (out, stats)
}
