//! Tree-structured decoder for neural machine translation.
//!
//! Two coupled LSTMs generate a target tree jointly with its words: a rule
//! RNN chooses CFG expansions for the leftmost open nonterminal under a
//! grammar mask, and a word RNN fills preterminals with subwords. A
//! seq2seq mode shares the encoder, attention, and word RNN for flat
//! targets.

pub mod config;
pub mod decode;
mod error;
pub mod layers;
pub mod model;
pub mod state;
pub mod train;

pub use config::{Config, ModelVariant, OptimizerKind, Precision};
pub use decode::{beam_decode, greedy_decode, greedy_decode_with, DecodeLimits, DecodeOutput, StepTrace};
pub use error::{ModelError, PartialDecode, Result};
pub use model::{checkpoint_precision, peek_config, Model};
pub use state::{mount, MountedModel, PrevEmission, StackSym, TreeState};
pub use train::{loss_and_grads, loss_only, StepStats, Target, TrainLog, Trainer};
