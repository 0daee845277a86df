//! The live generation state machine.
//!
//! A mounted model advances two coupled LSTMs over an interleaved timeline.
//! Rule steps score the next grammar rule for the leftmost open nonterminal
//! (or end-of-sentence once the stack is empty); word steps fill the open
//! preterminal with subwords until end-of-phrase. The rule RNN advances on
//! every step, consuming the embedding of whatever was emitted at the
//! previous step (a rule or a subword); the word RNN advances only on word
//! steps. Each step's softmax reads `W . tanh([rule state; word state])`,
//! and the attention context is recomputed from the state of the RNN that
//! acted, then fed to both RNNs' next inputs.

use treenmt_core::derivation::SENTINEL;
use treenmt_core::grammar::Symbol;
use treenmt_core::vocab::Vocab;
use treenmt_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{ModelError, Result};
use crate::layers::{AttentionVars, Encoded, EncoderVars, LstmVars};
use crate::model::Model;

/// What the previous step emitted; selects the rule RNN's input embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrevEmission {
    /// No step yet: the distinguished start-of-derivation embedding.
    Start,
    /// Rule decision id (a grammar rule; eos is never consumed).
    Rule(usize),
    /// Target-vocabulary id (subwords and eop).
    Word(usize),
}

/// Open symbol awaiting expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackSym {
    Nonterminal(String),
    Pre,
}

#[derive(Debug, Clone)]
pub struct OpenEntry {
    pub sym: StackSym,
    /// Timeline index of the rule step that introduced this symbol.
    pub parent: usize,
    pub depth: usize,
}

/// Decoder state for tree-variant models. Cloning forks the hypothesis;
/// tensor handles are shared on the tape.
#[derive(Clone)]
pub struct TreeState<'t, F: Scalar> {
    pub rule_h: Var<'t, F>,
    pub rule_c: Var<'t, F>,
    pub word_h: Var<'t, F>,
    pub word_c: Var<'t, F>,
    /// Hidden state of the most recent word step; zero before any word.
    pub last_word_h: Var<'t, F>,
    /// Previous attention context, fed to the next step's inputs.
    pub ctx: Var<'t, F>,
    pub prev: PrevEmission,
    pub last_word_id: Option<usize>,
    pub open: Vec<OpenEntry>,
    /// Rule-RNN hidden state per timeline index; entry 0 is the initial
    /// state, entry t the state after step t.
    pub step_states: Vec<Var<'t, F>>,
    pub t: usize,
    pub word_steps: usize,
    pub finished: bool,
    in_phrase: bool,
    word_init_h: Var<'t, F>,
    zero_h: Var<'t, F>,
}

impl<'t, F: Scalar> TreeState<'t, F> {
    pub fn top(&self) -> Option<&OpenEntry> {
        self.open.last()
    }

    /// Parent timeline index the next step will read its structural
    /// context from (sentinel once the stack is empty).
    pub fn next_parent(&self) -> usize {
        self.top().map(|e| e.parent).unwrap_or(SENTINEL)
    }
}

/// Distribution produced by one step, before a decision is applied.
pub struct StepScores<'t, F: Scalar> {
    pub logits: Var<'t, F>,
    pub mask: Vec<bool>,
}

impl<'t, F: Scalar> StepScores<'t, F> {
    pub fn log_probs(&self) -> Result<Var<'t, F>> {
        Ok(self.logits.log_softmax_masked(&self.mask)?)
    }

    pub fn probs(&self) -> Result<Var<'t, F>> {
        Ok(self.logits.softmax_masked(&self.mask)?)
    }
}

/// Model parameters inserted on a tape, ready to run.
pub struct MountedModel<'t, F: Scalar> {
    pub tape: &'t Tape<F>,
    pub encoder: EncoderVars<'t, F>,
    pub attention: AttentionVars<'t, F>,
    pub word_rnn: LstmVars<'t, F>,
    pub word_emb: Var<'t, F>,
    pub w_word: Var<'t, F>,
    pub rule_rnn: Option<LstmVars<'t, F>>,
    pub rule_emb: Option<Var<'t, F>>,
    pub w_rule: Option<Var<'t, F>>,
    /// `(name, var)` for every parameter, in visitor order.
    pub params: Vec<(String, Var<'t, F>)>,
    pub model: &'t Model<F>,
    pub encoded: Encoded<'t, F>,
}

/// Mount all parameters and encode the source sentence.
pub fn mount<'t, F: Scalar>(
    model: &'t Model<F>,
    tape: &'t Tape<F>,
    src_ids: &[usize],
) -> Result<MountedModel<'t, F>> {
    let encoder = EncoderVars::mount(&model.encoder, tape);
    let attention = AttentionVars::mount(&model.attention, tape);
    let word_rnn = LstmVars::mount(&model.word_rnn, tape);
    let word_emb = tape.leaf(model.word_emb.clone());
    let w_word = tape.leaf(model.w_word.clone());
    let (rule_rnn, rule_emb, w_rule) = match &model.tree {
        Some(parts) => (
            Some(LstmVars::mount(&parts.rule_rnn, tape)),
            Some(tape.leaf(parts.rule_emb.clone())),
            Some(tape.leaf(parts.w_rule.clone())),
        ),
        None => (None, None, None),
    };

    // Parameter list mirrors Model::for_each_param order; mounting reuses
    // the leaves created above via name lookup instead of re-inserting.
    let mut names = Vec::new();
    model.for_each_param(&mut |name, _| names.push(name));
    let mut vars = Vec::new();
    {
        let enc = &encoder;
        let mut push = |name: &str, var: Var<'t, F>| vars.push((name.to_string(), var));
        let [fw_ih, fw_hh, fw_b] = enc.fwd_vars();
        let [bw_ih, bw_hh, bw_b] = enc.bwd_vars();
        push("encoder.emb", enc.emb_var());
        push("encoder.fwd.w_ih", fw_ih);
        push("encoder.fwd.w_hh", fw_hh);
        push("encoder.fwd.bias", fw_b);
        push("encoder.bwd.w_ih", bw_ih);
        push("encoder.bwd.w_hh", bw_hh);
        push("encoder.bwd.bias", bw_b);
        push("encoder.init.w", enc.init_w_var());
        push("encoder.init.b", enc.init_b_var());
        push("attention.w", attention.var());
        let [ww_ih, ww_hh, ww_b] = word_rnn.vars();
        push("decoder.word.w_ih", ww_ih);
        push("decoder.word.w_hh", ww_hh);
        push("decoder.word.bias", ww_b);
        push("decoder.word_emb", word_emb);
        push("decoder.w_word", w_word);
        if let (Some(rnn), Some(emb), Some(w)) = (&rule_rnn, &rule_emb, &w_rule) {
            let [rw_ih, rw_hh, rw_b] = rnn.vars();
            push("decoder.rule.w_ih", rw_ih);
            push("decoder.rule.w_hh", rw_hh);
            push("decoder.rule.bias", rw_b);
            push("decoder.rule_emb", *emb);
            push("decoder.w_rule", *w);
        }
    }
    debug_assert_eq!(
        names,
        vars.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "mounted parameter order must match the visitor"
    );

    let encoded = encoder.encode(tape, src_ids)?;
    Ok(MountedModel {
        tape,
        encoder,
        attention,
        word_rnn,
        word_emb,
        w_word,
        rule_rnn,
        rule_emb,
        w_rule,
        params: vars,
        model,
        encoded,
    })
}

impl<'t, F: Scalar> MountedModel<'t, F> {
    fn hidden(&self) -> usize {
        self.model.config.hidden_size
    }

    /// Fresh tree-decoder state: both RNNs start from the encoder's final
    /// projection, context and word history start at zero, and the stack
    /// holds the grammar's start symbol.
    pub fn start_state(&self) -> Result<TreeState<'t, F>> {
        let grammar = self.model.grammar()?;
        let h = self.hidden();
        let zero_h = self.tape.leaf(Tensor::zeros(&[h]));
        let zero_ctx = self.tape.leaf(Tensor::zeros(&[2 * h]));
        let init = self.encoded.init;
        Ok(TreeState {
            rule_h: init,
            rule_c: zero_h,
            word_h: init,
            word_c: zero_h,
            last_word_h: zero_h,
            ctx: zero_ctx,
            prev: PrevEmission::Start,
            last_word_id: None,
            open: vec![OpenEntry {
                sym: StackSym::Nonterminal(grammar.start_symbol().to_string()),
                parent: SENTINEL,
                depth: 0,
            }],
            step_states: vec![init],
            t: 0,
            word_steps: 0,
            finished: false,
            in_phrase: false,
            word_init_h: init,
            zero_h,
        })
    }

    fn prev_embedding(&self, state: &TreeState<'t, F>) -> Result<Var<'t, F>> {
        let rule_emb = self.rule_emb.expect("tree mode");
        Ok(match state.prev {
            PrevEmission::Start => rule_emb.row(self.model.sod_row())?,
            PrevEmission::Rule(id) => rule_emb.row(id)?,
            PrevEmission::Word(id) => self.word_emb.row(id)?,
        })
    }

    /// Advance the rule RNN and score rule decisions for the open
    /// nonterminal; with an empty stack only eos is legal.
    pub fn rule_step(&self, state: &mut TreeState<'t, F>) -> Result<StepScores<'t, F>> {
        let grammar = self.model.grammar()?;
        let rule_rnn = self.rule_rnn.as_ref().expect("tree mode");
        if state.finished {
            return Err(ModelError::Contract("rule_step after eos".into()));
        }
        let mask = match state.top() {
            Some(OpenEntry {
                sym: StackSym::Pre, ..
            }) => {
                return Err(ModelError::Contract(
                    "rule_step while the open symbol is a preterminal".into(),
                ))
            }
            Some(OpenEntry {
                sym: StackSym::Nonterminal(tag),
                ..
            }) => {
                let ids = grammar.rules_with_lhs(tag);
                if ids.is_empty() {
                    return Err(ModelError::NoRulesFor(tag.clone()));
                }
                let mut mask = vec![false; grammar.decision_count()];
                for &id in ids {
                    mask[id] = true;
                }
                mask
            }
            None => {
                let mut mask = vec![false; grammar.decision_count()];
                mask[grammar.eos_id()] = true;
                mask
            }
        };

        let parent = state.next_parent();
        let s_tree_p = state.step_states[parent];
        let input = self.tape.concat(&[
            self.prev_embedding(state)?,
            state.ctx,
            s_tree_p,
            state.last_word_h,
        ])?;
        let (h, c) = rule_rnn.step(input, state.rule_h, state.rule_c)?;
        state.rule_h = h;
        state.rule_c = c;
        state.t += 1;
        state.step_states.push(h);

        let (ctx, _) = self.attention.attend(h, self.encoded.states)?;
        state.ctx = ctx;

        let feats = self.tape.concat(&[state.rule_h, state.last_word_h])?.tanh()?;
        let logits = self.w_rule.expect("tree mode").matmul(feats)?;
        Ok(StepScores { logits, mask })
    }

    /// Commit a rule decision: pop the expanded symbol, push its right-hand
    /// side leftmost-on-top, or finish on eos.
    pub fn apply_rule(&self, state: &mut TreeState<'t, F>, decision: usize) -> Result<()> {
        let grammar = self.model.grammar()?;
        if decision == grammar.eos_id() {
            if let Some(top) = state.top() {
                return Err(ModelError::Contract(format!(
                    "eos with open symbol '{:?}'",
                    top.sym
                )));
            }
            state.finished = true;
            state.prev = PrevEmission::Rule(decision);
            return Ok(());
        }
        let rule = grammar.rule(decision);
        let top = state
            .open
            .pop()
            .ok_or_else(|| ModelError::Contract("rule applied to an empty stack".into()))?;
        match &top.sym {
            StackSym::Nonterminal(tag) if *tag == rule.lhs => {}
            other => {
                return Err(ModelError::Contract(format!(
                    "rule '{rule}' cannot expand open symbol '{other:?}'"
                )))
            }
        }
        for sym in rule.rhs.iter().rev() {
            state.open.push(OpenEntry {
                sym: match sym {
                    Symbol::Nonterminal(tag) => StackSym::Nonterminal(tag.clone()),
                    Symbol::Pre => StackSym::Pre,
                },
                parent: state.t,
                depth: top.depth + 1,
            });
        }
        state.prev = PrevEmission::Rule(decision);
        Ok(())
    }

    /// Advance the word RNN (and the rule RNN, which updates on every
    /// step) and score the next subword or end-of-phrase.
    pub fn word_step(&self, state: &mut TreeState<'t, F>) -> Result<StepScores<'t, F>> {
        let rule_rnn = self.rule_rnn.as_ref().expect("tree mode");
        match state.top() {
            Some(OpenEntry {
                sym: StackSym::Pre, ..
            }) => {}
            other => {
                return Err(ModelError::Contract(format!(
                    "word_step while the open symbol is '{other:?}'"
                )))
            }
        }
        if self.model.config.word_rnn_per_phrase_init && !state.in_phrase {
            state.word_h = state.word_init_h;
            state.word_c = state.zero_h;
        }
        state.in_phrase = true;

        let parent = state.next_parent();
        let s_tree_p = state.step_states[parent];
        let prev_ctx = state.ctx;

        let w_prev = self
            .word_emb
            .row(state.last_word_id.unwrap_or(Vocab::SOS_ID))?;
        let word_input = self.tape.concat(&[s_tree_p, w_prev, prev_ctx])?;
        let (wh, wc) = self.word_rnn.step(word_input, state.word_h, state.word_c)?;
        state.word_h = wh;
        state.word_c = wc;
        state.last_word_h = wh;

        // Rule RNN consumes the previous emission (rule or subword) and the
        // fresh word state.
        let rule_input = self
            .tape
            .concat(&[self.prev_embedding(state)?, prev_ctx, s_tree_p, wh])?;
        let (rh, rc) = rule_rnn.step(rule_input, state.rule_h, state.rule_c)?;
        state.rule_h = rh;
        state.rule_c = rc;
        state.t += 1;
        state.step_states.push(rh);
        state.word_steps += 1;

        let (ctx, _) = self.attention.attend(wh, self.encoded.states)?;
        state.ctx = ctx;

        let feats = self.tape.concat(&[state.rule_h, state.word_h])?.tanh()?;
        let logits = self.w_word.matmul(feats)?;
        let mask = vec![true; self.model.tgt_vocab.len()];
        Ok(StepScores { logits, mask })
    }

    /// Commit a word decision; eop closes the phrase and pops the
    /// preterminal.
    pub fn apply_word(&self, state: &mut TreeState<'t, F>, word_id: usize) -> Result<()> {
        match state.top() {
            Some(OpenEntry {
                sym: StackSym::Pre, ..
            }) => {}
            other => {
                return Err(ModelError::Contract(format!(
                    "word applied while the open symbol is '{other:?}'"
                )))
            }
        }
        if word_id == Vocab::EOP_ID {
            state.open.pop();
            state.in_phrase = false;
        }
        state.prev = PrevEmission::Word(word_id);
        state.last_word_id = Some(word_id);
        Ok(())
    }
}

/// Decoder state for seq2seq mode: word RNN, attention, and input feeding
/// over a flat subword stream.
#[derive(Clone)]
pub struct FlatState<'t, F: Scalar> {
    pub h: Var<'t, F>,
    pub c: Var<'t, F>,
    pub ctx: Var<'t, F>,
    pub prev_id: usize,
    pub steps: usize,
}

impl<'t, F: Scalar> MountedModel<'t, F> {
    pub fn start_flat(&self) -> FlatState<'t, F> {
        let h = self.hidden();
        FlatState {
            h: self.encoded.init,
            c: self.tape.leaf(Tensor::zeros(&[h])),
            ctx: self.tape.leaf(Tensor::zeros(&[2 * h])),
            prev_id: Vocab::SOS_ID,
            steps: 0,
        }
    }

    pub fn flat_step(&self, state: &mut FlatState<'t, F>) -> Result<StepScores<'t, F>> {
        let emb = self.word_emb.row(state.prev_id)?;
        let input = self.tape.concat(&[emb, state.ctx])?;
        let (h, c) = self.word_rnn.step(input, state.h, state.c)?;
        state.h = h;
        state.c = c;
        let (ctx, _) = self.attention.attend(h, self.encoded.states)?;
        state.ctx = ctx;
        state.steps += 1;
        let logits = self.w_word.matmul(h.tanh()?)?;
        Ok(StepScores {
            logits,
            mask: vec![true; self.model.tgt_vocab.len()],
        })
    }

    pub fn flat_apply(&self, state: &mut FlatState<'t, F>, word_id: usize) {
        state.prev_id = word_id;
    }
}
