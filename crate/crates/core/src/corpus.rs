//! Parallel corpus ingestion.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read '{path}': {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line counts differ: {src_path} has {src_lines}, {tgt_path} has {tgt_lines}")]
    LineCountMismatch {
        src_path: String,
        src_lines: usize,
        tgt_path: String,
        tgt_lines: usize,
    },
    #[error("{path}:{line}: empty sentence")]
    EmptyLine { path: String, line: usize },
}

/// Aligned sentence pairs as whitespace token sequences.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub name: String,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Pair line `i` of the source file with line `i` of the target file.
pub fn read_parallel(src_path: &Path, tgt_path: &Path) -> Result<ParallelCorpus, CorpusError> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::LineCountMismatch {
            src_path: src_path.display().to_string(),
            src_lines: src.len(),
            tgt_path: tgt_path.display().to_string(),
            tgt_lines: tgt.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let s_toks = tokenize_checked(s, src_path, i + 1)?;
        let t_toks = tokenize_checked(t, tgt_path, i + 1)?;
        pairs.push((s_toks, t_toks));
    }
    Ok(ParallelCorpus {
        pairs,
        name: format!(
            "{}-{}",
            stem(src_path),
            stem(tgt_path)
        ),
    })
}

fn tokenize_checked(line: &str, path: &Path, lineno: usize) -> Result<Vec<String>, CorpusError> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptyLine {
            path: path.display().to_string(),
            line: lineno,
        });
    }
    Ok(tokens)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
