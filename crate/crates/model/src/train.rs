//! Teacher-forced training: per-example loss, gradients, and the epoch
//! loop. The loss is the sum over timeline steps of the cross-entropy of
//! the gold decision under the masked (rule) or full (word) softmax.

use std::collections::HashMap;

use treenmt_core::derivation::{Derivation, RuleChoice, Step, WordChoice};
use treenmt_core::vocab::Vocab;
use treenmt_tensor::optim::{sgd_step, Adam};
use treenmt_tensor::rng::SplitRng;
use treenmt_tensor::{Scalar, Tape, Tensor, Var};

use crate::config::OptimizerKind;
use crate::error::{ModelError, Result};
use crate::model::Model;
use crate::state::mount;

/// Gold target for one sentence pair.
#[derive(Debug, Clone)]
pub enum Target {
    /// Tree variants: the canonical derivation of the gold tree.
    Derivation(Derivation),
    /// Seq2seq: gold subword ids, ending with the eos id.
    Flat(Vec<usize>),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub loss: f64,
    pub decisions: usize,
    pub correct: usize,
}

impl StepStats {
    pub fn accuracy(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.correct as f64 / self.decisions as f64
        }
    }
}

/// Map a derivation step to the decision id the softmax must assign.
fn decision_id<F: Scalar>(model: &Model<F>, step: &Step) -> Result<usize> {
    Ok(match step {
        Step::Rule {
            choice: RuleChoice::Apply(id),
            ..
        } => *id,
        Step::Rule {
            choice: RuleChoice::Eos,
            ..
        } => model.grammar()?.eos_id(),
        Step::Word {
            choice: WordChoice::Subword(w),
            ..
        } => model.tgt_vocab.id(w),
        Step::Word {
            choice: WordChoice::Eop,
            ..
        } => Vocab::EOP_ID,
    })
}

fn argmax<F: Scalar>(values: &Tensor<F>) -> usize {
    let mut best = 0;
    for (i, &v) in values.data().iter().enumerate() {
        if v > values.data()[best] {
            best = i;
        }
    }
    best
}

/// Loss variable, decision statistics, and named parameter handles.
pub type ForwardPass<'t, F> = (Var<'t, F>, StepStats, Vec<(String, Var<'t, F>)>);

/// Teacher-forced forward pass; returns the scalar loss variable plus
/// decision statistics.
pub fn forward_loss<'t, F: Scalar>(
    tape: &'t Tape<F>,
    model: &'t Model<F>,
    src_ids: &[usize],
    target: &Target,
) -> Result<ForwardPass<'t, F>> {
    let mounted = mount(model, tape, src_ids)?;
    let mut stats = StepStats::default();
    let mut loss: Option<Var<'t, F>> = None;

    let mut add_loss = |term: Var<'t, F>| -> Result<()> {
        loss = Some(match loss {
            Some(acc) => acc.add(term)?,
            None => term,
        });
        Ok(())
    };

    match target {
        Target::Derivation(deriv) => {
            let mut state = mounted.start_state()?;
            for (i, step) in deriv.steps.iter().enumerate() {
                let gold = decision_id(model, step)?;
                let scores = match step {
                    Step::Rule { .. } => mounted.rule_step(&mut state)?,
                    Step::Word { .. } => mounted.word_step(&mut state)?,
                };
                if !scores.mask[gold] {
                    return Err(ModelError::GoldIllegal { step: i + 1 });
                }
                let log_probs = scores.log_probs()?;
                if argmax(&log_probs.value()) == gold {
                    stats.correct += 1;
                }
                stats.decisions += 1;
                add_loss(log_probs.cross_entropy(gold)?)?;
                match step {
                    Step::Rule { .. } => mounted.apply_rule(&mut state, gold)?,
                    Step::Word { .. } => mounted.apply_word(&mut state, gold)?,
                }
            }
            if !state.finished {
                return Err(ModelError::Contract(
                    "gold derivation did not end in eos".into(),
                ));
            }
        }
        Target::Flat(ids) => {
            let mut state = mounted.start_flat();
            for &gold in ids {
                let scores = mounted.flat_step(&mut state)?;
                let log_probs = scores.log_probs()?;
                if argmax(&log_probs.value()) == gold {
                    stats.correct += 1;
                }
                stats.decisions += 1;
                add_loss(log_probs.cross_entropy(gold)?)?;
                mounted.flat_apply(&mut state, gold);
            }
        }
    }

    let loss = loss.ok_or_else(|| ModelError::Contract("empty target".into()))?;
    stats.loss = loss.item()?.to_f64();
    Ok((loss, stats, mounted.params))
}

/// Loss and statistics without gradients.
pub fn loss_only<F: Scalar>(
    model: &Model<F>,
    src_ids: &[usize],
    target: &Target,
) -> Result<StepStats> {
    let tape = Tape::new();
    let (_, stats, _) = forward_loss(&tape, model, src_ids, target)?;
    Ok(stats)
}

/// Loss, statistics, and per-parameter gradients keyed by name.
pub fn loss_and_grads<F: Scalar>(
    model: &Model<F>,
    src_ids: &[usize],
    target: &Target,
) -> Result<(StepStats, HashMap<String, Tensor<F>>)> {
    let tape = Tape::new();
    let (loss, stats, params) = forward_loss(&tape, model, src_ids, target)?;
    let grads = tape.backward(loss)?;
    let by_name = params
        .into_iter()
        .map(|(name, var)| (name, grads.get(var)))
        .collect();
    Ok((stats, by_name))
}

pub enum Optimizer<F: Scalar> {
    Adam(Adam<F>),
    Sgd { lr: F },
}

impl<F: Scalar> Optimizer<F> {
    pub fn from_config(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(F::from_f64(lr))),
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: F::from_f64(lr),
            },
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy)]
pub struct TrainLog {
    pub step: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

pub struct Trainer<F: Scalar> {
    pub model: Model<F>,
    optimizer: Optimizer<F>,
    shuffle_rng: SplitRng,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: Model<F>) -> Self {
        let optimizer = Optimizer::from_config(model.config.optimizer, model.config.lr);
        let shuffle_rng = SplitRng::new(model.config.seed).stream("shuffle");
        Trainer {
            model,
            optimizer,
            shuffle_rng,
        }
    }

    /// Forward, backward, and one optimizer update.
    pub fn train_example(&mut self, src_ids: &[usize], target: &Target) -> Result<StepStats> {
        let (stats, grads) = loss_and_grads(&self.model, src_ids, target)?;
        if let Optimizer::Adam(adam) = &mut self.optimizer {
            adam.next_step();
        }
        let optimizer = &mut self.optimizer;
        let mut result: Result<()> = Ok(());
        self.model.for_each_param_mut(&mut |name, param| {
            if result.is_err() {
                return;
            }
            let grad = grads.get(&name).expect("gradient for every parameter");
            result = match optimizer {
                Optimizer::Adam(adam) => adam.update(&name, param, grad),
                Optimizer::Sgd { lr } => sgd_step(&name, param, grad, *lr),
            }
            .map_err(ModelError::from);
        });
        result?;
        Ok(stats)
    }

    /// Average loss and teacher-forced accuracy over a dataset, without
    /// updating parameters.
    pub fn evaluate(model: &Model<F>, data: &[(Vec<usize>, Target)]) -> Result<StepStats> {
        let mut total = StepStats::default();
        let mut loss_sum = 0.0;
        for (src, target) in data {
            let s = loss_only(model, src, target)?;
            loss_sum += s.loss;
            total.decisions += s.decisions;
            total.correct += s.correct;
        }
        total.loss = loss_sum / data.len().max(1) as f64;
        Ok(total)
    }

    /// Shuffled epoch loop; `sink` receives a log line every `log_every`
    /// examples (with per-example loss averaged since the last line) and
    /// one line per epoch end carrying the dev loss when a dev set is
    /// given.
    pub fn train(
        &mut self,
        data: &[(Vec<usize>, Target)],
        dev: Option<&[(Vec<usize>, Target)]>,
        sink: &mut dyn FnMut(TrainLog),
    ) -> Result<StepStats> {
        let epochs = self.model.config.epochs;
        let log_every = self.model.config.log_every.max(1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut global_step = 0;
        let mut window_loss = 0.0;
        let mut window_count = 0;
        let mut last = StepStats::default();

        for _ in 0..epochs {
            self.shuffle_rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for &idx in &order {
                let (src, target) = &data[idx];
                let stats = self.train_example(src, target)?;
                global_step += 1;
                window_loss += stats.loss;
                window_count += 1;
                epoch_loss += stats.loss;
                last = stats;
                if global_step % log_every == 0 {
                    sink(TrainLog {
                        step: global_step,
                        train_loss: window_loss / window_count as f64,
                        dev_loss: None,
                    });
                    window_loss = 0.0;
                    window_count = 0;
                }
            }
            if let Some(dev_data) = dev {
                let dev_stats = Self::evaluate(&self.model, dev_data)?;
                sink(TrainLog {
                    step: global_step,
                    train_loss: epoch_loss / data.len().max(1) as f64,
                    dev_loss: Some(dev_stats.loss),
                });
            }
        }
        Ok(last)
    }
}
