//! The translation model: encoder, attention, word RNN, and (in tree
//! variants) the rule RNN with its grammar-masked projection head.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use treenmt_core::{Grammar, Vocab};
use treenmt_tensor::checkpoint::{self, Writer};
use treenmt_tensor::rng::SplitRng;
use treenmt_tensor::{Scalar, Tensor};

use crate::config::{Config, Precision};
#[cfg(test)]
use crate::config::ModelVariant;
use crate::error::{ModelError, Result};
use crate::layers::{uniform_init, AttentionParams, EncoderParams, LstmParams};

const META_CONFIG: &str = "__meta.config";
const META_SRC_VOCAB: &str = "__meta.src_vocab";
const META_TGT_VOCAB: &str = "__meta.tgt_vocab";
const META_GRAMMAR: &str = "__meta.grammar";

/// Rule-side parameters, absent in seq2seq mode.
#[derive(Debug, Clone)]
pub struct TreeParts<F: Scalar> {
    /// Input `[rule-or-word embedding; context; parent state; word state]`.
    pub rule_rnn: LstmParams<F>,
    /// Rows: one per rule, then eos, then the start-of-derivation token.
    pub rule_emb: Tensor<F>,
    /// `[rules + 1, 2H]` projection onto rule decisions (incl. eos).
    pub w_rule: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    pub config: Config,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub grammar: Option<Grammar>,
    pub encoder: EncoderParams<F>,
    pub attention: AttentionParams<F>,
    pub word_rnn: LstmParams<F>,
    pub word_emb: Tensor<F>,
    /// `[|tgt vocab|, 2H]` in tree mode, `[|tgt vocab|, H]` flat.
    pub w_word: Tensor<F>,
    pub tree: Option<TreeParts<F>>,
}

impl<F: Scalar> Model<F> {
    /// Random-initialized model; all draws come from named streams of the
    /// seeded generator, so construction is reproducible.
    pub fn new(
        mut config: Config,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        grammar: Option<Grammar>,
    ) -> Result<Model<F>> {
        // The element type is the real precision; keep the config honest so
        // checkpoint dispatch stays consistent.
        config.precision = match F::DTYPE {
            treenmt_tensor::Dtype::F64 => Precision::F64,
            _ => Precision::F32,
        };
        let (h, e) = (config.hidden_size, config.embed_size);
        let rng = SplitRng::new(config.seed);

        let tree = if config.variant.is_tree() {
            let grammar = grammar.as_ref().ok_or(ModelError::MissingGrammar)?;
            let decisions = grammar.decision_count();
            Some(TreeParts {
                rule_rnn: LstmParams::new(e + 4 * h, h, &mut rng.stream("rule_rnn")),
                rule_emb: uniform_init(&[decisions + 1, e], &mut rng.stream("rule_emb")),
                w_rule: uniform_init(&[decisions, 2 * h], &mut rng.stream("w_rule")),
            })
        } else {
            None
        };

        let word_input = if tree.is_some() { h + e + 2 * h } else { e + 2 * h };
        let word_out = if tree.is_some() { 2 * h } else { h };

        Ok(Model {
            encoder: EncoderParams::new(
                src_vocab.len(),
                e,
                h,
                &mut rng.stream("encoder"),
            ),
            attention: AttentionParams::new(h, &mut rng.stream("attention")),
            word_rnn: LstmParams::new(word_input, h, &mut rng.stream("word_rnn")),
            word_emb: uniform_init(&[tgt_vocab.len(), e], &mut rng.stream("word_emb")),
            w_word: uniform_init(&[tgt_vocab.len(), word_out], &mut rng.stream("w_word")),
            tree,
            config,
            src_vocab,
            tgt_vocab,
            grammar,
        })
    }

    pub fn is_tree(&self) -> bool {
        self.tree.is_some()
    }

    /// Grammar accessor for tree mode.
    pub fn grammar(&self) -> Result<&Grammar> {
        self.grammar.as_ref().ok_or(ModelError::MissingGrammar)
    }

    /// Row of `rule_emb` holding the start-of-derivation embedding.
    pub fn sod_row(&self) -> usize {
        self.grammar
            .as_ref()
            .map(|g| g.decision_count())
            .unwrap_or(0)
    }

    /// Enumerate every parameter with its hierarchical name, in a fixed
    /// order shared by mounting, checkpoints, and optimizers.
    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        self.encoder.visit(f);
        f("attention.w".into(), &self.attention.w);
        self.word_rnn.visit("decoder.word", f);
        f("decoder.word_emb".into(), &self.word_emb);
        f("decoder.w_word".into(), &self.w_word);
        if let Some(tree) = &self.tree {
            tree.rule_rnn.visit("decoder.rule", f);
            f("decoder.rule_emb".into(), &tree.rule_emb);
            f("decoder.w_rule".into(), &tree.w_rule);
        }
    }

    pub fn for_each_param_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        self.encoder.visit_mut(f);
        f("attention.w".into(), &mut self.attention.w);
        self.word_rnn.visit_mut("decoder.word", f);
        f("decoder.word_emb".into(), &mut self.word_emb);
        f("decoder.w_word".into(), &mut self.w_word);
        if let Some(tree) = &mut self.tree {
            tree.rule_rnn.visit_mut("decoder.rule", f);
            f("decoder.rule_emb".into(), &mut tree.rule_emb);
            f("decoder.w_rule".into(), &mut tree.w_rule);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.numel());
        n
    }

    /// Write parameters plus the config/vocab/grammar metadata needed to
    /// reconstruct the model from the file alone.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(treenmt_tensor::CheckpointError::from)?;
        let mut writer = Writer::new(BufWriter::new(file))?;
        writer.bytes(META_CONFIG, self.config.to_text().as_bytes())?;
        writer.bytes(META_SRC_VOCAB, self.src_vocab.to_text().as_bytes())?;
        writer.bytes(META_TGT_VOCAB, self.tgt_vocab.to_text().as_bytes())?;
        if let Some(g) = &self.grammar {
            writer.bytes(META_GRAMMAR, g.to_text().as_bytes())?;
        }
        let mut result = Ok(());
        self.for_each_param(&mut |name, tensor| {
            if result.is_ok() {
                result = writer.tensor(&name, tensor);
            }
        });
        result?;
        writer.finish()?;
        Ok(())
    }

    /// Load a checkpoint saved at the same precision as `F`.
    pub fn load(path: &Path) -> Result<Model<F>> {
        let file = File::open(path).map_err(treenmt_tensor::CheckpointError::from)?;
        let map = checkpoint::read_map(file)?;
        let config = Config::from_text(&meta_text(&map, META_CONFIG)?)?;
        let src_vocab = Vocab::from_text(&meta_text(&map, META_SRC_VOCAB)?)?;
        let tgt_vocab = Vocab::from_text(&meta_text(&map, META_TGT_VOCAB)?)?;
        let grammar = if config.variant.is_tree() {
            Some(Grammar::from_text(&meta_text(&map, META_GRAMMAR)?)?)
        } else {
            None
        };
        let mut model = Model::new(config, src_vocab, tgt_vocab, grammar)?;
        let mut result: Result<()> = Ok(());
        model.for_each_param_mut(&mut |name, tensor| {
            if result.is_err() {
                return;
            }
            match checkpoint::require_tensor::<F>(&map, &name) {
                Ok(loaded) if loaded.shape() == tensor.shape() => *tensor = loaded,
                Ok(loaded) => {
                    result = Err(treenmt_tensor::CheckpointError::ShapeMismatch {
                        name,
                        found: loaded.shape().to_vec(),
                        expected: tensor.shape().to_vec(),
                    }
                    .into())
                }
                Err(e) => result = Err(e.into()),
            }
        });
        result?;
        Ok(model)
    }
}

/// Read just the configuration from a checkpoint, to pick the precision
/// before constructing a typed model.
pub fn peek_config(path: &Path) -> Result<Config> {
    let file = File::open(path).map_err(treenmt_tensor::CheckpointError::from)?;
    let map = checkpoint::read_map(file)?;
    Ok(Config::from_text(&meta_text(&map, META_CONFIG)?)?)
}

pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    Ok(peek_config(path)?.precision)
}

fn meta_text(
    map: &std::collections::HashMap<String, checkpoint::Payload>,
    name: &str,
) -> Result<String> {
    let bytes = checkpoint::require_bytes(map, name)?;
    String::from_utf8(bytes)
        .map_err(|_| treenmt_tensor::CheckpointError::BadName.into())
}
