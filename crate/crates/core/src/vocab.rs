//! Token/id vocabulary with fixed reserved entries.

use std::collections::HashMap;

use thiserror::Error;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const EOP: &str = "<eop>";

/// Reserved tokens, in id order 0..5.
pub const RESERVED: [&str; 5] = [PAD, UNK, SOS, EOS, EOP];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("max_size {0} does not exceed the {n} reserved tokens", n = RESERVED.len())]
    TooSmall(usize),
    #[error("vocabulary file is missing reserved token '{0}' at its fixed id")]
    BadReserved(&'static str),
    #[error("duplicate token '{0}'")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const SOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;
    pub const EOP_ID: usize = 4;

    /// Keep the most frequent tokens, ties broken lexicographically;
    /// reserved tokens always occupy ids 0..5.
    pub fn build<'a, I>(corpus: I, max_size: usize) -> Result<Vocab, VocabError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size <= RESERVED.len() {
            return Err(VocabError::TooSmall(max_size));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for token in sentence {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Ok(Vocab::from_tokens(tokens).expect("constructed tokens are unique"))
    }

    /// Rebuild from an id-ordered token list (checkpoints, files).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab, VocabError> {
        for (i, reserved) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*reserved) {
                return Err(VocabError::BadReserved(reserved));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab, VocabError> {
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }
}
