use thiserror::Error;

use treenmt_core::grammar::GrammarError;
use treenmt_core::tree::{Tree, TreeError};
use treenmt_core::vocab::VocabError;
use treenmt_tensor::{CheckpointError, TensorError};

use crate::config::ConfigError;

/// Partial output carried by truncation errors.
#[derive(Debug)]
pub struct PartialDecode {
    pub words: Vec<String>,
    pub tree: Tree,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("source sentence is empty")]
    EmptySource,
    #[error("tree-variant model requires a grammar")]
    MissingGrammar,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("grammar has no rules with left-hand side '{0}'")]
    NoRulesFor(String),
    #[error("gold decision at step {step} is illegal under the mask")]
    GoldIllegal { step: usize },
    #[error("decode exceeded the step limit of {limit}")]
    StepLimit { limit: usize, partial: PartialDecode },
    #[error("decode exceeded the tree depth limit of {limit}")]
    DepthLimit { limit: usize, partial: PartialDecode },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
