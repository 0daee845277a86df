//! CoNLL-style dependency blocks: one token per line with tab- or
//! space-separated columns `index form head`, blank-line separated
//! sentences, head 0 for the root.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConllError {
    #[error("failed to read '{path}': {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("sentence {sentence}: malformed line '{text}'")]
    Malformed { sentence: usize, text: String },
    #[error("sentence {sentence}: token index {found} out of order (expected {expected})")]
    BadIndex {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("sentence {sentence}: head {head} out of range for {len} tokens")]
    HeadOutOfRange {
        sentence: usize,
        head: usize,
        len: usize,
    },
    #[error("sentence {sentence}: multiple roots")]
    MultipleRoots { sentence: usize },
    #[error("sentence {sentence}: no root")]
    NoRoot { sentence: usize },
    #[error("sentence {sentence}: cycle through token {token}")]
    Cycle { sentence: usize, token: usize },
}

/// Dependency tree over a token sequence; `heads[i]` is the 1-based head
/// of token `i+1`, with 0 marking the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTree {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
}

impl DependencyTree {
    /// Validate single-rootedness, head ranges, and acyclicity.
    pub fn new(
        tokens: Vec<String>,
        heads: Vec<usize>,
        sentence: usize,
    ) -> Result<DependencyTree, ConllError> {
        let n = tokens.len();
        assert_eq!(n, heads.len(), "tokens and heads must align");
        for &h in &heads {
            if h > n {
                return Err(ConllError::HeadOutOfRange {
                    sentence,
                    head: h,
                    len: n,
                });
            }
        }
        // Walk up from every token; more than n hops means a cycle. Checked
        // before root counting so a rootless loop reports as a cycle.
        for start in 1..=n {
            let mut cur = start;
            let mut hops = 0;
            while cur != 0 {
                cur = heads[cur - 1];
                hops += 1;
                if hops > n {
                    return Err(ConllError::Cycle {
                        sentence,
                        token: start,
                    });
                }
            }
        }
        match heads.iter().filter(|&&h| h == 0).count() {
            0 => return Err(ConllError::NoRoot { sentence }),
            1 => {}
            _ => return Err(ConllError::MultipleRoots { sentence }),
        }
        Ok(DependencyTree { tokens, heads })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Position (1-based) of the root token.
    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).unwrap() + 1
    }

    /// 1-based dependent positions of `head`, in sentence order.
    pub fn dependents(&self, head: usize) -> Vec<usize> {
        (1..=self.len()).filter(|&i| self.heads[i - 1] == head).collect()
    }
}

pub fn read_conll_str(text: &str) -> Result<Vec<DependencyTree>, ConllError> {
    let mut out = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();

    let flush = |tokens: &mut Vec<String>, heads: &mut Vec<usize>, out: &mut Vec<DependencyTree>| {
        if tokens.is_empty() {
            return Ok(());
        }
        let tree = DependencyTree::new(std::mem::take(tokens), std::mem::take(heads), out.len() + 1)?;
        out.push(tree);
        Ok(())
    };

    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut tokens, &mut heads, &mut out)?;
            continue;
        }
        let sentence = out.len() + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 3 {
            return Err(ConllError::Malformed {
                sentence,
                text: line.to_string(),
            });
        }
        let index: usize = cols[0].parse().map_err(|_| ConllError::Malformed {
            sentence,
            text: line.to_string(),
        })?;
        if index != tokens.len() + 1 {
            return Err(ConllError::BadIndex {
                sentence,
                expected: tokens.len() + 1,
                found: index,
            });
        }
        let head: usize = cols[2].parse().map_err(|_| ConllError::Malformed {
            sentence,
            text: line.to_string(),
        })?;
        tokens.push(cols[1].to_string());
        heads.push(head);
    }
    flush(&mut tokens, &mut heads, &mut out)?;
    Ok(out)
}

pub fn read_conll(path: &Path) -> Result<Vec<DependencyTree>, ConllError> {
    let text = fs::read_to_string(path).map_err(|source| ConllError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_conll_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_sentence() {
        let trees = read_conll_str("1\teats\t0\n").unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].root(), 1);
    }

    #[test]
    fn four_token_sentence_roots_at_eats() {
        let text = "1\tThe\t2\n2\tcat\t3\n3\teats\t0\n4\tfish\t3\n";
        let trees = read_conll_str(text).unwrap();
        let t = &trees[0];
        assert_eq!(t.root(), 3);
        assert_eq!(t.dependents(3), vec![2, 4]);
        assert_eq!(t.dependents(2), vec![1]);
    }

    #[test]
    fn cycle_is_detected() {
        let err = read_conll_str("1\ta\t2\n2\tb\t1\n").unwrap_err();
        assert!(matches!(err, ConllError::Cycle { sentence: 1, .. }));
    }

    #[test]
    fn multiple_roots_are_rejected_with_sentence_number() {
        let text = "1\ta\t0\n\n1\tb\t0\n2\tc\t0\n";
        let err = read_conll_str(text).unwrap_err();
        assert!(matches!(err, ConllError::MultipleRoots { sentence: 2 }));
    }

    #[test]
    fn head_out_of_range_is_rejected() {
        let err = read_conll_str("1\ta\t5\n").unwrap_err();
        assert!(matches!(err, ConllError::HeadOutOfRange { head: 5, .. }));
    }

    #[test]
    fn blank_lines_separate_sentences() {
        let text = "1\ta\t0\n\n\n1\tb\t2\n2\tc\t0\n";
        let trees = read_conll_str(text).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[1].tokens, vec!["b", "c"]);
    }
}
