//! Key-value text configuration.
//!
//! Format: one `key = value` per line, `#` comments, unknown keys rejected.
//! Every knob has a default, so an empty config is valid.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use treenmt_core::TreeVariant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    BadLine { line: usize, text: String },
    #[error("config line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for '{key}': {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Target-side structure the model is trained on. The four tree variants
/// share the tree decoder; `Seq2seq` drops the rule RNN and grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Tree(TreeVariant),
    Seq2seq,
}

impl ModelVariant {
    pub fn is_tree(self) -> bool {
        matches!(self, ModelVariant::Tree(_))
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelVariant::Tree(v) => v.fmt(f),
            ModelVariant::Seq2seq => f.write_str("seq2seq"),
        }
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "seq2seq" {
            return Ok(ModelVariant::Seq2seq);
        }
        TreeVariant::from_str(s)
            .map(ModelVariant::Tree)
            .map_err(|_| format!("unknown variant '{s}' (expected con, con-null, dep, binary, or seq2seq)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub hidden_size: usize,
    pub embed_size: usize,
    pub precision: Precision,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    pub epochs: usize,
    pub log_every: usize,
    pub variant: ModelVariant,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    /// Decode step budget as a multiple of the source subword length.
    pub max_step_factor: usize,
    pub max_depth: usize,
    /// Re-initialize the word RNN state at each phrase instead of once per
    /// sentence.
    pub word_rnn_per_phrase_init: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hidden_size: 256,
            embed_size: 256,
            precision: Precision::F32,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            seed: 1,
            epochs: 10,
            log_every: 100,
            variant: ModelVariant::Tree(TreeVariant::BinaryConcat),
            src_vocab_size: 8000,
            tgt_vocab_size: 8000,
            max_step_factor: 8,
            max_depth: 64,
            word_rnn_per_phrase_init: false,
        }
    }
}

impl Config {
    pub fn from_text(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: lineno,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| ConfigError::BadValue {
                line: lineno,
                key: key.to_string(),
                msg,
            };
            match key {
                "hidden_size" => cfg.hidden_size = parse_num(value).map_err(bad)?,
                "embed_size" => cfg.embed_size = parse_num(value).map_err(bad)?,
                "precision" => {
                    cfg.precision = match value {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        other => return Err(bad(format!("'{other}' is not f32 or f64"))),
                    }
                }
                "optimizer" => {
                    cfg.optimizer = match value {
                        "adam" => OptimizerKind::Adam,
                        "sgd" => OptimizerKind::Sgd,
                        other => return Err(bad(format!("'{other}' is not adam or sgd"))),
                    }
                }
                "lr" => cfg.lr = parse_num(value).map_err(bad)?,
                "seed" => cfg.seed = parse_num(value).map_err(bad)?,
                "epochs" => cfg.epochs = parse_num(value).map_err(bad)?,
                "log_every" => cfg.log_every = parse_num(value).map_err(bad)?,
                "variant" => cfg.variant = value.parse().map_err(bad)?,
                "src_vocab_size" => cfg.src_vocab_size = parse_num(value).map_err(bad)?,
                "tgt_vocab_size" => cfg.tgt_vocab_size = parse_num(value).map_err(bad)?,
                "max_step_factor" => cfg.max_step_factor = parse_num(value).map_err(bad)?,
                "max_depth" => cfg.max_depth = parse_num(value).map_err(bad)?,
                "word_rnn_per_phrase_init" => {
                    cfg.word_rnn_per_phrase_init =
                        value.parse().map_err(|_| bad(format!("'{value}' is not a bool")))?
                }
                other => {
                    return Err(ConfigError::UnknownKey {
                        line: lineno,
                        key: other.to_string(),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "hidden_size = {}\n\
             embed_size = {}\n\
             precision = {}\n\
             optimizer = {}\n\
             lr = {}\n\
             seed = {}\n\
             epochs = {}\n\
             log_every = {}\n\
             variant = {}\n\
             src_vocab_size = {}\n\
             tgt_vocab_size = {}\n\
             max_step_factor = {}\n\
             max_depth = {}\n\
             word_rnn_per_phrase_init = {}\n",
            self.hidden_size,
            self.embed_size,
            self.precision,
            self.optimizer,
            self.lr,
            self.seed,
            self.epochs,
            self.log_every,
            self.variant,
            self.src_vocab_size,
            self.tgt_vocab_size,
            self.max_step_factor,
            self.max_depth,
            self.word_rnn_per_phrase_init,
        )
    }
}

fn parse_num<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("{e}"))
}
