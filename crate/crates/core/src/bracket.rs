//! Penn-style bracketed tree reading, one tree per line.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tree::{Nested, Tree, TreeError};

#[derive(Debug, Error)]
pub enum BracketError {
    #[error("failed to read '{path}': {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("line {line}: {source}")]
    BadTree { line: usize, source: TreeError },
}

/// Parse one bracketed tree, e.g. `(S (NP (DT The) (NN cat)) (VP (VBZ eats)))`.
///
/// The node kind comes from the structure: a node whose children are all
/// bare tokens is a preterminal, one with only bracketed children is a
/// nonterminal, and a mix of the two is rejected.
pub fn parse_tree(line: &str) -> Result<Tree, TreeError> {
    parse_line(line, 1).map_err(|e| match e {
        BracketError::Parse { msg, col, .. } => {
            TreeError::Invalid(format!("column {col}: {msg}"))
        }
        BracketError::BadTree { source, .. } => source,
        BracketError::Io { .. } => unreachable!("no I/O in parse_tree"),
    })
}

pub fn read_bracketed_str(text: &str) -> Result<Vec<Tree>, BracketError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| parse_line(line, i + 1))
        .collect()
}

pub fn read_bracketed(path: &Path) -> Result<Vec<Tree>, BracketError> {
    let text = fs::read_to_string(path).map_err(|source| BracketError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_bracketed_str(&text)
}

/// Write trees in the canonical single-space bracket encoding.
pub fn write_bracketed(trees: &[Tree]) -> String {
    let mut out = String::new();
    for t in trees {
        out.push_str(&t.to_bracket());
        out.push('\n');
    }
    out
}

#[derive(Debug, PartialEq)]
enum Token {
    Open(String),
    Close,
    Atom(String),
}

fn parse_line(line: &str, lineno: usize) -> Result<Tree, BracketError> {
    let err = |col: usize, msg: String| BracketError::Parse {
        line: lineno,
        col,
        msg,
    };

    let mut tokens: Vec<(usize, Token)> = Vec::new();
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let col = pos + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c == ')' {
            tokens.push((col, Token::Close));
            i += 1;
        } else if c == '(' {
            i += 1;
            let mut tag = String::new();
            while i < chars.len() && !chars[i].1.is_whitespace() && chars[i].1 != '(' && chars[i].1 != ')' {
                tag.push(chars[i].1);
                i += 1;
            }
            if tag.is_empty() {
                return Err(err(col, "expected a tag after '('".into()));
            }
            tokens.push((col, Token::Open(tag)));
        } else {
            let mut atom = String::new();
            while i < chars.len() && !chars[i].1.is_whitespace() && chars[i].1 != '(' && chars[i].1 != ')' {
                atom.push(chars[i].1);
                i += 1;
            }
            tokens.push((col, Token::Atom(atom)));
        }
    }

    if tokens.is_empty() {
        return Err(err(1, "empty tree".into()));
    }

    let mut stack: Vec<(usize, String, Vec<Nested>)> = Vec::new();
    let mut finished: Option<Nested> = None;
    for (col, token) in tokens {
        if finished.is_some() {
            return Err(err(col, "trailing content after the tree closed".into()));
        }
        match token {
            Token::Open(tag) => stack.push((col, tag, Vec::new())),
            Token::Atom(word) => match stack.last_mut() {
                Some((_, _, children)) => children.push(Nested::Leaf(word)),
                None => return Err(err(col, "token outside any brackets".into())),
            },
            Token::Close => match stack.pop() {
                Some((_, tag, children)) => {
                    let node = Nested::Node(tag, children);
                    match stack.last_mut() {
                        Some((_, _, siblings)) => siblings.push(node),
                        None => finished = Some(node),
                    }
                }
                None => return Err(err(col, "unbalanced ')'".into())),
            },
        }
    }
    match finished {
        Some(nested) => Tree::from_nested(&nested).map_err(|source| BracketError::BadTree {
            line: lineno,
            source,
        }),
        None => {
            let col = stack.last().map(|(c, _, _)| *c).unwrap_or(1);
            Err(err(col, format!("unbalanced '(': {} unclosed", stack.len())))
        }
    }
}
