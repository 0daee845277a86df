//! Byte-pair-encoding subword segmentation.
//!
//! Words start as character sequences with the marker `_` prefixed to the
//! word-initial symbol, so `The cat` segments to pieces like `_The _cat`
//! and joining pieces then splitting on the marker restores the original
//! words. Merges are learned greedily: the most frequent adjacent symbol
//! pair wins each round, ties broken lexicographically so learning is
//! deterministic. Words containing a literal `_` are not round-trippable;
//! corpora are assumed free of the marker.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Marker prefixed to word-initial subword pieces.
pub const WORD_MARKER: char = '_';

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("cannot learn BPE from an empty corpus")]
    EmptyCorpus,
    #[error("bad merge line {line}: '{text}'")]
    BadMergeLine { line: usize, text: String },
    #[error("failed to read '{path}': {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> BpeModel {
        BpeModel { merges }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Learn up to `num_merges` merge operations from tokenized sentences.
    pub fn learn(corpus: &[Vec<String>], num_merges: usize) -> Result<BpeModel, BpeError> {
        let mut word_freqs: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for word in sentence {
                *word_freqs.entry(word).or_insert(0) += 1;
            }
        }
        if word_freqs.is_empty() {
            return Err(BpeError::EmptyCorpus);
        }

        let mut words: Vec<(Vec<String>, u64)> = word_freqs
            .into_iter()
            .map(|(w, f)| (symbolize(w), f))
            .collect();
        // HashMap order must not leak into the merge list.
        words.sort();

        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
            for (symbols, freq) in &words {
                for pair in symbols.windows(2) {
                    *pair_counts
                        .entry((pair[0].as_str(), pair[1].as_str()))
                        .or_insert(0) += freq;
                }
            }
            let Some(best) = pair_counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(pair, _)| (pair.0.to_string(), pair.1.to_string()))
            else {
                break;
            };
            for (symbols, _) in &mut words {
                merge_in_place(symbols, &best);
            }
            merges.push(best);
        }
        Ok(BpeModel { merges })
    }

    /// Segment one word into subword pieces, applying merges in learned
    /// order. Unknown characters pass through as singleton pieces.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut symbols = symbolize(word);
        for merge in &self.merges {
            merge_in_place(&mut symbols, merge);
        }
        symbols
    }

    /// Segment a tokenized sentence into the flat subword sequence.
    pub fn apply(&self, sentence: &[String]) -> Vec<String> {
        sentence
            .iter()
            .flat_map(|w| self.apply_word(w))
            .collect()
    }

    /// One merge per line, `left right`, in learned order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<BpeModel, BpeError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(BpeError::BadMergeLine {
                        line: i + 1,
                        text: line.to_string(),
                    })
                }
            }
        }
        Ok(BpeModel { merges })
    }

    pub fn save(&self, path: &Path) -> Result<(), BpeError> {
        fs::write(path, self.to_text()).map_err(|source| BpeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<BpeModel, BpeError> {
        let text = fs::read_to_string(path).map_err(|source| BpeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        BpeModel::from_text(&text)
    }
}

fn symbolize(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                format!("{WORD_MARKER}{c}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Replace non-overlapping occurrences of the pair, left to right.
fn merge_in_place(symbols: &mut Vec<String>, (left, right): &(String, String)) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if &symbols[i] == left && &symbols[i + 1] == right {
            let joined = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols[i] = joined;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

/// Concatenate pieces and split on the word marker, restoring whole words.
pub fn join_subwords(pieces: &[String]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for piece in pieces {
        if let Some(rest) = piece.strip_prefix(WORD_MARKER) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            current.push_str(rest);
        } else {
            current.push_str(piece);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn zero_merges_yield_marked_characters() {
        let model = BpeModel::learn(&[sent("ab c")], 0).unwrap();
        assert_eq!(model.apply(&sent("ab c")), vec!["_a", "b", "_c"]);
    }

    #[test]
    fn first_merge_matches_a_brute_force_pair_count() {
        let corpus = vec![sent("low low lowest")];
        let model = BpeModel::learn(&corpus, 2).unwrap();

        // Independent oracle: count adjacent marked-character pairs by hand.
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for word in &corpus[0] {
            let syms = symbolize(word);
            for pair in syms.windows(2) {
                *counts.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += 1;
            }
        }
        // (_l, o) and (o, w) both occur 3 times; the lexicographically
        // smaller pair must win.
        assert_eq!(counts[&("_l".to_string(), "o".to_string())], 3);
        assert_eq!(counts[&("o".to_string(), "w".to_string())], 3);
        assert_eq!(model.merges()[0], ("_l".to_string(), "o".to_string()));
        // After merging (_l,o), the most frequent pair is (_lo, w).
        assert_eq!(model.merges()[1], ("_lo".to_string(), "w".to_string()));
    }

    #[test]
    fn single_character_corpus_caps_learned_merges() {
        let model = BpeModel::learn(&[sent("a a a")], 10).unwrap();
        assert!(model.merges().is_empty());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            BpeModel::learn(&[], 4),
            Err(BpeError::EmptyCorpus)
        ));
        assert!(matches!(
            BpeModel::learn(&[Vec::new()], 4),
            Err(BpeError::EmptyCorpus)
        ));
    }

    #[test]
    fn canonical_segmentation_example() {
        let merges = [
            ("_T", "h"),
            ("_Th", "e"),
            ("_c", "a"),
            ("_ca", "t"),
            ("_e", "a"),
            ("_ea", "t"),
            ("_f", "i"),
            ("s", "h"),
        ]
        .iter()
        .map(|(l, r)| (l.to_string(), r.to_string()))
        .collect();
        let model = BpeModel::from_merges(merges);
        let pieces = model.apply(&sent("The cat eats fish ."));
        assert_eq!(pieces, vec!["_The", "_cat", "_eat", "s", "_fi", "sh", "_."]);
        assert_eq!(
            join_subwords(&pieces),
            vec!["The", "cat", "eats", "fish", "."]
        );
    }

    #[test]
    fn learning_is_deterministic() {
        let corpus = vec![sent("banana bandana ban and anna"), sent("nab nana band")];
        let a = BpeModel::learn(&corpus, 12).unwrap();
        let b = BpeModel::learn(&corpus, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_text_round_trips() {
        let model = BpeModel::learn(&[sent("hello world hold")], 6).unwrap();
        let back = BpeModel::from_text(&model.to_text()).unwrap();
        assert_eq!(model, back);
    }
}
