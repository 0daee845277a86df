//! Target-side structure for tree-based translation: trees and grammars,
//! canonical derivations, the four tree-variant builders, BPE subword
//! segmentation, vocabularies, and the corpus/tree/dependency file readers.

pub mod bpe;
pub mod bracket;
pub mod builders;
pub mod conll;
pub mod corpus;
pub mod derivation;
pub mod grammar;
pub mod tree;
pub mod vocab;

pub use bpe::{join_subwords, BpeModel};
pub use builders::TreeVariant;
pub use conll::DependencyTree;
pub use corpus::ParallelCorpus;
pub use derivation::{canonical_derivation, replay_derivation, Derivation, RuleChoice, Step, WordChoice};
pub use grammar::{Grammar, Rule, Symbol};
pub use tree::{form_preterminals, Tree};
pub use vocab::Vocab;
