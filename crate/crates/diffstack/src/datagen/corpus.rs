//! Plain-text corpus ingestion for language-model runs.
//!
//! Lines are whitespace-tokenized. The vocabulary keeps the `cap` most
//! frequent words (ties resolved by first appearance), maps the rest to
//! `<unk>`, and always reserves `<unk>` and `<eos>`. Each line becomes one
//! sequence; the trainer appends EOS as the final prediction target.

use super::{Alphabet, UNK};
use crate::Result;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Corpus {
    pub alphabet: Alphabet,
    /// One token-index sequence per non-empty input line, EOS excluded.
    pub sequences: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn n_tokens(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn unk_index(&self) -> usize {
        self.alphabet.index(UNK).unwrap()
    }

    /// Tokenize more text against this corpus's (frozen) vocabulary;
    /// unknown words map to `<unk>`.
    pub fn encode_text(&self, text: &str) -> Vec<Vec<usize>> {
        let unk = self.unk_index();
        text.lines()
            .filter_map(|line| {
                let seq: Vec<usize> = line
                    .split_whitespace()
                    .map(|w| self.alphabet.index(w).unwrap_or(unk))
                    .collect();
                (!seq.is_empty()).then_some(seq)
            })
            .collect()
    }
}

pub fn load_corpus(path: &Path, vocab_cap: usize) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| crate::Error::Io(format!("{}: {e}", path.display())))?;
    load_corpus_strings(&text, vocab_cap)
}

/// Build a corpus from raw text. `vocab_cap` bounds the number of corpus
/// words kept; `<unk>` and `<eos>` come on top of it.
pub fn load_corpus_strings(text: &str, vocab_cap: usize) -> Result<Corpus> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for line in text.lines() {
        for word in line.split_whitespace() {
            let c = counts.entry(word).or_insert(0);
            if *c == 0 {
                first_seen.push(word);
            }
            *c += 1;
        }
    }

    let mut ranked = first_seen.clone();
    // stable sort keeps first-appearance order among equal counts
    ranked.sort_by_key(|w| std::cmp::Reverse(counts[w]));
    ranked.truncate(vocab_cap);
    let mut words: Vec<String> = ranked.iter().map(|w| w.to_string()).collect();
    words.push(UNK.to_string());
    let alphabet = Alphabet::from_words(words)?;
    let unk = alphabet.index(UNK).unwrap();

    let mut sequences = Vec::new();
    for line in text.lines() {
        let seq: Vec<usize> = line
            .split_whitespace()
            .map(|w| alphabet.index(w).unwrap_or(unk))
            .collect();
        if !seq.is_empty() {
            sequences.push(seq);
        }
    }
    Ok(Corpus {
        alphabet,
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::EOS;

    #[test]
    fn encode_text_maps_unknowns_to_unk() {
        let c = load_corpus_strings("a a b\n", 10).unwrap();
        let enc = c.encode_text("b zzz a\n\n");
        assert_eq!(enc, vec![vec![1, c.unk_index(), 0]]);
    }

    #[test]
    fn small_corpus_vocab_and_indices() {
        let c = load_corpus_strings("a a b\n", 10).unwrap();
        // a, b, <unk>, <eos>
        assert_eq!(c.alphabet.len(), 4);
        assert_eq!(c.alphabet.symbol(0), "a");
        assert_eq!(c.alphabet.symbol(1), "b");
        assert_eq!(c.alphabet.symbol(2), UNK);
        assert_eq!(c.alphabet.symbol(3), EOS);
        assert_eq!(c.alphabet.eos(), 3);
        assert_eq!(c.sequences, vec![vec![0, 0, 1]]);
        assert_eq!(c.n_tokens(), 3);
    }

    #[test]
    fn cap_maps_rare_words_to_unk() {
        let text = "x x x y y z\nz q\n";
        let c = load_corpus_strings(text, 2).unwrap();
        // kept: x (3), y (2); z and q collapse to <unk>
        assert_eq!(c.alphabet.len(), 4);
        assert_eq!(c.alphabet.symbol(0), "x");
        assert_eq!(c.alphabet.symbol(1), "y");
        let unk = c.unk_index();
        assert_eq!(c.sequences[0], vec![0, 0, 0, 1, 1, unk]);
        assert_eq!(c.sequences[1], vec![unk, unk]);
    }

    #[test]
    fn frequency_ties_keep_first_appearance_order() {
        let c = load_corpus_strings("b a b a\n", 2).unwrap();
        assert_eq!(c.alphabet.symbol(0), "b");
        assert_eq!(c.alphabet.symbol(1), "a");
    }

    #[test]
    fn empty_lines_are_skipped() {
        let c = load_corpus_strings("a b\n\n  \nb a\n", 10).unwrap();
        assert_eq!(c.sequences.len(), 2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "a a b\n").unwrap();
        let c = load_corpus(&path, 10).unwrap();
        assert_eq!(c.n_tokens(), 3);
        assert!(load_corpus(&dir.path().join("missing.txt"), 10).is_err());
    }
}
