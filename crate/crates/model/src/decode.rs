//! Greedy and beam search.
//!
//! Both searches interleave rule and word steps exactly as training does;
//! the grammar mask guarantees every finished hypothesis replays to a
//! valid tree. Hypotheses finish when the rule RNN emits eos (legal only
//! once the open-symbol stack is empty) and are ranked by total
//! log-probability divided by word-step count, which keeps scores
//! comparable across tree variants with very different rule-step counts.

use treenmt_core::derivation::{replay_derivation, Derivation, RuleChoice, Step, WordChoice};
use treenmt_core::grammar::{Grammar, Symbol};
use treenmt_core::tree::{NodeKind, Tree, PRE_TAG, ROOT_TAG};
use treenmt_core::vocab::Vocab;
use treenmt_tensor::{Scalar, Tape, Tensor};

use crate::config::Config;
use crate::error::{ModelError, PartialDecode, Result};
use crate::model::Model;
use crate::state::{mount, MountedModel, StackSym, TreeState};

#[derive(Debug, Clone, Copy)]
pub struct DecodeLimits {
    pub max_steps: usize,
    pub max_depth: usize,
}

impl DecodeLimits {
    /// Step budget scales with the source length; depth is absolute.
    pub fn from_config(config: &Config, src_len: usize) -> DecodeLimits {
        DecodeLimits {
            max_steps: config.max_step_factor * src_len.max(1),
            max_depth: config.max_depth,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Subword sentence (leaf sequence in tree mode).
    pub words: Vec<String>,
    pub tree: Option<Tree>,
    pub derivation: Option<Derivation>,
    /// Length-normalized log-probability.
    pub score: f64,
}

/// Per-step distribution snapshot for diagnostics and invariant tests.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub is_rule_step: bool,
    pub mask: Vec<bool>,
    pub probs: Vec<f64>,
}

fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn to_f64_vec<F: Scalar>(t: &Tensor<F>) -> Vec<f64> {
    t.data().iter().map(|x| x.to_f64()).collect()
}

/// Greedy decode with the config-derived limits.
pub fn greedy_decode<F: Scalar>(model: &Model<F>, src_ids: &[usize]) -> Result<DecodeOutput> {
    let limits = DecodeLimits::from_config(&model.config, src_ids.len());
    greedy_decode_with(model, src_ids, limits, None)
}

pub fn greedy_decode_with<F: Scalar>(
    model: &Model<F>,
    src_ids: &[usize],
    limits: DecodeLimits,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<DecodeOutput> {
    let tape = Tape::new();
    let mounted = mount(model, &tape, src_ids)?;
    if model.is_tree() {
        greedy_tree(&mounted, limits, trace.as_deref_mut())
    } else {
        greedy_flat(&mounted, limits, trace)
    }
}

fn greedy_tree<'t, F: Scalar>(
    mounted: &MountedModel<'t, F>,
    limits: DecodeLimits,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<DecodeOutput> {
    let grammar = mounted.model.grammar()?;
    let vocab = &mounted.model.tgt_vocab;
    let mut state = mounted.start_state()?;
    let mut steps: Vec<Step> = Vec::new();
    let mut total_logp = 0.0;

    while !state.finished {
        if state.t >= limits.max_steps {
            return Err(ModelError::StepLimit {
                limit: limits.max_steps,
                partial: partial_decode(&steps, grammar),
            });
        }
        let parent = state.next_parent();
        let is_word = matches!(
            state.top(),
            Some(entry) if matches!(entry.sym, StackSym::Pre)
        );
        if !is_word {
            if let Some(top) = state.top() {
                if top.depth + 1 > limits.max_depth {
                    return Err(ModelError::DepthLimit {
                        limit: limits.max_depth,
                        partial: partial_decode(&steps, grammar),
                    });
                }
            }
            let scores = mounted.rule_step(&mut state)?;
            let log_probs = to_f64_vec(&scores.log_probs()?.value());
            let best = argmax_f64(&log_probs);
            if let Some(t) = trace.as_deref_mut() {
                t.push(StepTrace {
                    is_rule_step: true,
                    mask: scores.mask.clone(),
                    probs: to_f64_vec(&scores.probs()?.value()),
                });
            }
            total_logp += log_probs[best];
            steps.push(Step::Rule {
                choice: if best == grammar.eos_id() {
                    RuleChoice::Eos
                } else {
                    RuleChoice::Apply(best)
                },
                parent,
            });
            mounted.apply_rule(&mut state, best)?;
        } else {
            let scores = mounted.word_step(&mut state)?;
            let log_probs = to_f64_vec(&scores.log_probs()?.value());
            let best = argmax_f64(&log_probs);
            if let Some(t) = trace.as_deref_mut() {
                t.push(StepTrace {
                    is_rule_step: false,
                    mask: scores.mask.clone(),
                    probs: to_f64_vec(&scores.probs()?.value()),
                });
            }
            total_logp += log_probs[best];
            steps.push(Step::Word {
                choice: if best == Vocab::EOP_ID {
                    WordChoice::Eop
                } else {
                    WordChoice::Subword(vocab.token(best).to_string())
                },
                parent,
            });
            mounted.apply_word(&mut state, best)?;
        }
    }

    let derivation = Derivation { steps };
    let tree = replay_derivation(&derivation, grammar)?;
    debug_assert!(tree.validate().is_ok());
    Ok(DecodeOutput {
        words: derivation.words(),
        score: total_logp / state.word_steps.max(1) as f64,
        tree: Some(tree),
        derivation: Some(derivation),
    })
}

fn greedy_flat<'t, F: Scalar>(
    mounted: &MountedModel<'t, F>,
    limits: DecodeLimits,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<DecodeOutput> {
    let vocab = &mounted.model.tgt_vocab;
    let mut state = mounted.start_flat();
    let mut words = Vec::new();
    let mut total_logp = 0.0;
    loop {
        if state.steps >= limits.max_steps {
            return Err(ModelError::StepLimit {
                limit: limits.max_steps,
                partial: PartialDecode {
                    words,
                    tree: Tree::with_root(NodeKind::Nonterminal(ROOT_TAG.to_string())),
                },
            });
        }
        let scores = mounted.flat_step(&mut state)?;
        let log_probs = to_f64_vec(&scores.log_probs()?.value());
        let best = argmax_f64(&log_probs);
        if let Some(t) = trace.as_deref_mut() {
            t.push(StepTrace {
                is_rule_step: false,
                mask: scores.mask.clone(),
                probs: to_f64_vec(&scores.probs()?.value()),
            });
        }
        total_logp += log_probs[best];
        if best == Vocab::EOS_ID {
            break;
        }
        words.push(vocab.token(best).to_string());
        mounted.flat_apply(&mut state, best);
    }
    Ok(DecodeOutput {
        score: total_logp / (words.len() + 1).max(1) as f64,
        words,
        tree: None,
        derivation: None,
    })
}

/// Beam search returning up to `beam_size` finished hypotheses, best
/// normalized score first.
pub fn beam_decode<F: Scalar>(
    model: &Model<F>,
    src_ids: &[usize],
    beam_size: usize,
    limits: DecodeLimits,
) -> Result<Vec<DecodeOutput>> {
    if beam_size == 0 {
        return Err(ModelError::Contract("beam size must be at least 1".into()));
    }
    let tape = Tape::new();
    let mounted = mount(model, &tape, src_ids)?;
    if model.is_tree() {
        beam_tree(&mounted, beam_size, limits)
    } else {
        beam_flat(&mounted, beam_size, limits)
    }
}

struct TreeHyp<'t, F: Scalar> {
    state: TreeState<'t, F>,
    steps: Vec<Step>,
    logp: f64,
}

fn beam_tree<'t, F: Scalar>(
    mounted: &MountedModel<'t, F>,
    beam_size: usize,
    limits: DecodeLimits,
) -> Result<Vec<DecodeOutput>> {
    let grammar = mounted.model.grammar()?;
    let vocab = &mounted.model.tgt_vocab;
    let mut active = vec![TreeHyp {
        state: mounted.start_state()?,
        steps: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<DecodeOutput> = Vec::new();
    let mut best_partial: Option<(f64, Vec<Step>)> = None;

    for _ in 0..limits.max_steps {
        if active.is_empty() {
            break;
        }
        let mut candidates: Vec<TreeHyp<'t, F>> = Vec::new();
        for hyp in active.drain(..) {
            let parent = hyp.state.next_parent();
            let is_word = matches!(
                hyp.state.top(),
                Some(entry) if matches!(entry.sym, StackSym::Pre)
            );
            let mut stepped = hyp.state.clone();
            if !is_word {
                if let Some(top) = stepped.top() {
                    if top.depth + 1 > limits.max_depth {
                        continue; // hypothesis cannot be completed in depth
                    }
                }
                let scores = mounted.rule_step(&mut stepped)?;
                let log_probs = to_f64_vec(&scores.log_probs()?.value());
                for (decision, lp) in top_choices(&log_probs, Some(&scores.mask), beam_size) {
                    let mut next = stepped.clone();
                    mounted.apply_rule(&mut next, decision)?;
                    let mut steps = hyp.steps.clone();
                    steps.push(Step::Rule {
                        choice: if decision == grammar.eos_id() {
                            RuleChoice::Eos
                        } else {
                            RuleChoice::Apply(decision)
                        },
                        parent,
                    });
                    let logp = hyp.logp + lp;
                    if next.finished {
                        let derivation = Derivation { steps };
                        let tree = replay_derivation(&derivation, grammar)?;
                        finished.push(DecodeOutput {
                            words: derivation.words(),
                            score: logp / next.word_steps.max(1) as f64,
                            tree: Some(tree),
                            derivation: Some(derivation),
                        });
                    } else {
                        candidates.push(TreeHyp { state: next, steps, logp });
                    }
                }
            } else {
                let scores = mounted.word_step(&mut stepped)?;
                let log_probs = to_f64_vec(&scores.log_probs()?.value());
                for (decision, lp) in top_choices(&log_probs, None, beam_size) {
                    let mut next = stepped.clone();
                    mounted.apply_word(&mut next, decision)?;
                    let mut steps = hyp.steps.clone();
                    steps.push(Step::Word {
                        choice: if decision == Vocab::EOP_ID {
                            WordChoice::Eop
                        } else {
                            WordChoice::Subword(vocab.token(decision).to_string())
                        },
                        parent,
                    });
                    candidates.push(TreeHyp {
                        state: next,
                        steps,
                        logp: hyp.logp + lp,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap_or(std::cmp::Ordering::Equal));
        candidates.truncate(beam_size);
        if let Some(best) = candidates.first() {
            if best_partial.as_ref().map(|(lp, _)| best.logp > *lp).unwrap_or(true) {
                best_partial = Some((best.logp, best.steps.clone()));
            }
        }
        active = candidates;
    }

    if finished.is_empty() {
        let steps = best_partial.map(|(_, s)| s).unwrap_or_default();
        return Err(ModelError::StepLimit {
            limit: limits.max_steps,
            partial: partial_decode(&steps, grammar),
        });
    }
    finished.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    finished.truncate(beam_size);
    Ok(finished)
}

struct FlatHyp<'t, F: Scalar> {
    state: crate::state::FlatState<'t, F>,
    words: Vec<String>,
    logp: f64,
}

fn beam_flat<'t, F: Scalar>(
    mounted: &MountedModel<'t, F>,
    beam_size: usize,
    limits: DecodeLimits,
) -> Result<Vec<DecodeOutput>> {
    let vocab = &mounted.model.tgt_vocab;
    let mut active = vec![FlatHyp {
        state: mounted.start_flat(),
        words: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<DecodeOutput> = Vec::new();

    for _ in 0..limits.max_steps {
        if active.is_empty() {
            break;
        }
        let mut candidates: Vec<FlatHyp<'t, F>> = Vec::new();
        for hyp in active.drain(..) {
            let mut stepped = hyp.state.clone();
            let scores = mounted.flat_step(&mut stepped)?;
            let log_probs = to_f64_vec(&scores.log_probs()?.value());
            for (decision, lp) in top_choices(&log_probs, None, beam_size) {
                let logp = hyp.logp + lp;
                if decision == Vocab::EOS_ID {
                    finished.push(DecodeOutput {
                        score: logp / (hyp.words.len() + 1).max(1) as f64,
                        words: hyp.words.clone(),
                        tree: None,
                        derivation: None,
                    });
                } else {
                    let mut next = stepped.clone();
                    mounted.flat_apply(&mut next, decision);
                    let mut words = hyp.words.clone();
                    words.push(vocab.token(decision).to_string());
                    candidates.push(FlatHyp {
                        state: next,
                        words,
                        logp,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap_or(std::cmp::Ordering::Equal));
        candidates.truncate(beam_size);
        active = candidates;
    }

    if finished.is_empty() {
        let words = active.first().map(|h| h.words.clone()).unwrap_or_default();
        return Err(ModelError::StepLimit {
            limit: limits.max_steps,
            partial: PartialDecode {
                words,
                tree: Tree::with_root(NodeKind::Nonterminal(ROOT_TAG.to_string())),
            },
        });
    }
    finished.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    finished.truncate(beam_size);
    Ok(finished)
}

/// Top-k `(index, log_prob)` choices, masked entries excluded, ties broken
/// toward lower indices (matching greedy argmax).
fn top_choices(log_probs: &[f64], mask: Option<&[bool]>, k: usize) -> Vec<(usize, f64)> {
    let mut choices: Vec<(usize, f64)> = log_probs
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.map(|m| m[*i]).unwrap_or(true))
        .map(|(i, &lp)| (i, lp))
        .collect();
    choices.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    choices.truncate(k);
    choices
}

/// Lenient replay for truncation errors: unexpanded nonterminals stay
/// childless, so the result shows how far generation got.
fn partial_decode(steps: &[Step], grammar: &Grammar) -> PartialDecode {
    let mut tree = Tree::with_root(NodeKind::Nonterminal(ROOT_TAG.to_string()));
    let mut open = vec![tree.root()];
    let mut words = Vec::new();
    for step in steps {
        match step {
            Step::Rule {
                choice: RuleChoice::Apply(id),
                ..
            } => {
                let rule = grammar.rule(*id);
                let node = match open.pop() {
                    Some(n) => n,
                    None => break,
                };
                let mut children = Vec::new();
                for sym in &rule.rhs {
                    let kind = match sym {
                        Symbol::Nonterminal(tag) => NodeKind::Nonterminal(tag.clone()),
                        Symbol::Pre => NodeKind::Preterminal(PRE_TAG.to_string()),
                    };
                    children.push(tree.add_child(node, kind));
                }
                open.extend(children.into_iter().rev());
            }
            Step::Rule {
                choice: RuleChoice::Eos,
                ..
            } => break,
            Step::Word { choice, .. } => {
                let Some(&top) = open.last() else { break };
                match choice {
                    WordChoice::Subword(w) => {
                        words.push(w.clone());
                        tree.add_child(top, NodeKind::Terminal(w.clone()));
                    }
                    WordChoice::Eop => {
                        open.pop();
                    }
                }
            }
        }
    }
    PartialDecode { words, tree }
}
