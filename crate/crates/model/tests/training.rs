//! End-to-end behavior of the decoder state machine and trainer on toy
//! fixtures.

use treenmt_core::bracket::parse_tree;
use treenmt_core::derivation::{canonical_derivation, Derivation, RuleChoice, Step, WordChoice};
use treenmt_core::grammar::{Grammar, Symbol};
use treenmt_core::tree::{delinearize, linearize, Tree};
use treenmt_core::vocab::Vocab;
use treenmt_model::{
    beam_decode, greedy_decode, loss_only, mount, Config, DecodeLimits, Model, ModelError,
    ModelVariant, StackSym, Target, Trainer,
};
use treenmt_tensor::Tape;

fn vocab_from(sentences: &[Vec<String>], extra: usize) -> Vocab {
    let max = sentences.iter().flatten().count() + 6 + extra;
    Vocab::build(sentences.iter().map(Vec::as_slice), max).unwrap()
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Tree-mode fixture: trees given as final bracket strings.
struct Fixture {
    model: Model<f64>,
    data: Vec<(Vec<usize>, Target)>,
}

fn tree_fixture(pairs: &[(&str, &str)], hidden: usize, lr: f64) -> Fixture {
    let trees: Vec<Tree> = pairs.iter().map(|(_, t)| parse_tree(t).unwrap()).collect();
    let grammar = Grammar::extract(&trees).unwrap();
    let src_sents: Vec<Vec<String>> = pairs.iter().map(|(s, _)| toks(s)).collect();
    let tgt_sents: Vec<Vec<String>> = trees.iter().map(|t| t.leaves()).collect();
    let src_vocab = vocab_from(&src_sents, 0);
    let tgt_vocab = vocab_from(&tgt_sents, 0);
    let config = Config {
        hidden_size: hidden,
        embed_size: hidden,
        lr,
        seed: 11,
        variant: ModelVariant::Tree(treenmt_core::TreeVariant::ConstituencyFull),
        ..Config::default()
    };
    let model = Model::new(config, src_vocab.clone(), tgt_vocab, Some(grammar.clone())).unwrap();
    let data = src_sents
        .iter()
        .zip(&trees)
        .map(|(src, tree)| {
            (
                src_vocab.encode(src),
                Target::Derivation(canonical_derivation(tree, &grammar).unwrap()),
            )
        })
        .collect();
    Fixture { model, data }
}

fn fig1_fixture() -> Fixture {
    tree_fixture(
        &[(
            "neko ga sakana o taberu",
            "(ROOT (S (NP (pre _The _cat)) (VP (pre _eat s) (NP (pre _fi sh))) (PUNC (pre _.))))",
        )],
        16,
        1e-3,
    )
}

/// Independent stack oracle: replays the derivation over plain symbols.
#[derive(Debug, PartialEq, Clone)]
enum RefSym {
    Nt(String),
    Pre,
}

fn reference_stack_trace(deriv: &Derivation, grammar: &Grammar) -> Vec<Vec<(RefSym, usize)>> {
    let mut stack: Vec<(RefSym, usize)> = vec![(RefSym::Nt("ROOT".into()), 0)];
    let mut traces = Vec::new();
    for (i, step) in deriv.steps.iter().enumerate() {
        let t = i + 1;
        match step {
            Step::Rule {
                choice: RuleChoice::Apply(id),
                ..
            } => {
                let rule = grammar.rule(*id);
                let (top, _) = stack.pop().expect("open symbol");
                assert_eq!(top, RefSym::Nt(rule.lhs.clone()));
                for sym in rule.rhs.iter().rev() {
                    stack.push((
                        match sym {
                            Symbol::Nonterminal(tag) => RefSym::Nt(tag.clone()),
                            Symbol::Pre => RefSym::Pre,
                        },
                        t,
                    ));
                }
            }
            Step::Rule {
                choice: RuleChoice::Eos,
                ..
            } => assert!(stack.is_empty()),
            Step::Word {
                choice: WordChoice::Subword(_),
                ..
            } => assert_eq!(stack.last().map(|(s, _)| s.clone()), Some(RefSym::Pre)),
            Step::Word {
                choice: WordChoice::Eop,
                ..
            } => {
                let (top, _) = stack.pop().expect("open pre");
                assert_eq!(top, RefSym::Pre);
            }
        }
        traces.push(stack.clone());
    }
    traces
}

#[test]
fn teacher_forcing_tracks_the_replay_automaton_stack() {
    let fx = fig1_fixture();
    let (src, target) = &fx.data[0];
    let Target::Derivation(deriv) = target else {
        unreachable!()
    };
    let grammar = fx.model.grammar().unwrap();
    let reference = reference_stack_trace(deriv, grammar);

    let tape = Tape::new();
    let mounted = mount(&fx.model, &tape, src).unwrap();
    let mut state = mounted.start_state().unwrap();
    for (i, step) in deriv.steps.iter().enumerate() {
        match step {
            Step::Rule { choice, .. } => {
                let scores = mounted.rule_step(&mut state).unwrap();
                let gold = match choice {
                    RuleChoice::Apply(id) => *id,
                    RuleChoice::Eos => grammar.eos_id(),
                };
                assert!(scores.mask[gold], "gold rule masked at step {}", i + 1);
                mounted.apply_rule(&mut state, gold).unwrap();
            }
            Step::Word { choice, .. } => {
                let _ = mounted.word_step(&mut state).unwrap();
                let gold = match choice {
                    WordChoice::Subword(w) => fx.model.tgt_vocab.id(w),
                    WordChoice::Eop => Vocab::EOP_ID,
                };
                mounted.apply_word(&mut state, gold).unwrap();
            }
        }
        let got: Vec<(RefSym, usize)> = state
            .open
            .iter()
            .map(|e| {
                (
                    match &e.sym {
                        StackSym::Nonterminal(t) => RefSym::Nt(t.clone()),
                        StackSym::Pre => RefSym::Pre,
                    },
                    e.parent,
                )
            })
            .collect();
        assert_eq!(got, reference[i], "stack mismatch after step {}", i + 1);
    }
    assert!(state.finished);
    assert_eq!(state.word_steps, deriv.word_step_count());
}

#[test]
fn rule_mask_at_root_allows_exactly_root_rules() {
    let fx = fig1_fixture();
    let (src, _) = &fx.data[0];
    let grammar = fx.model.grammar().unwrap();
    let tape = Tape::new();
    let mounted = mount(&fx.model, &tape, src).unwrap();
    let mut state = mounted.start_state().unwrap();
    let scores = mounted.rule_step(&mut state).unwrap();
    for (id, rule) in grammar.rules().iter().enumerate() {
        assert_eq!(scores.mask[id], rule.lhs == "ROOT");
    }
    assert!(!scores.mask[grammar.eos_id()]);
    // ROOT has one rule, so the masked distribution is a point mass.
    let probs = scores.probs().unwrap().value();
    assert!((probs.data()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn empty_stack_unmasks_only_eos() {
    let fx = fig1_fixture();
    let (src, target) = &fx.data[0];
    let Target::Derivation(deriv) = target else {
        unreachable!()
    };
    let grammar = fx.model.grammar().unwrap();
    let tape = Tape::new();
    let mounted = mount(&fx.model, &tape, src).unwrap();
    let mut state = mounted.start_state().unwrap();
    for step in &deriv.steps[..deriv.len() - 1] {
        match step {
            Step::Rule { choice, .. } => {
                mounted.rule_step(&mut state).unwrap();
                let gold = match choice {
                    RuleChoice::Apply(id) => *id,
                    RuleChoice::Eos => grammar.eos_id(),
                };
                mounted.apply_rule(&mut state, gold).unwrap();
            }
            Step::Word { choice, .. } => {
                mounted.word_step(&mut state).unwrap();
                let gold = match choice {
                    WordChoice::Subword(w) => fx.model.tgt_vocab.id(w),
                    WordChoice::Eop => Vocab::EOP_ID,
                };
                mounted.apply_word(&mut state, gold).unwrap();
            }
        }
    }
    assert!(state.open.is_empty());
    let scores = mounted.rule_step(&mut state).unwrap();
    let allowed: Vec<usize> = (0..scores.mask.len()).filter(|&i| scores.mask[i]).collect();
    assert_eq!(allowed, vec![grammar.eos_id()]);
}

#[test]
fn step_contracts_reject_wrong_step_kind() {
    let fx = fig1_fixture();
    let (src, _) = &fx.data[0];
    let tape = Tape::new();
    let mounted = mount(&fx.model, &tape, src).unwrap();

    // word_step while the top is a nonterminal.
    let mut state = mounted.start_state().unwrap();
    assert!(matches!(
        mounted.word_step(&mut state),
        Err(ModelError::Contract(_))
    ));

    // rule_step while the top is a preterminal.
    let grammar = fx.model.grammar().unwrap();
    let root_rule = grammar.rules_with_lhs("ROOT")[0];
    let s_rule = grammar.rules_with_lhs("S")[0];
    let np_rule = grammar.rules_with_lhs("NP")[0];
    mounted.rule_step(&mut state).unwrap();
    mounted.apply_rule(&mut state, root_rule).unwrap();
    mounted.rule_step(&mut state).unwrap();
    mounted.apply_rule(&mut state, s_rule).unwrap();
    mounted.rule_step(&mut state).unwrap();
    mounted.apply_rule(&mut state, np_rule).unwrap();
    assert!(matches!(
        mounted.rule_step(&mut state),
        Err(ModelError::Contract(_))
    ));

    // Applying a rule whose LHS differs from the open symbol.
    let mut fresh = mounted.start_state().unwrap();
    mounted.rule_step(&mut fresh).unwrap();
    assert!(matches!(
        mounted.apply_rule(&mut fresh, s_rule),
        Err(ModelError::Contract(_))
    ));

    // Applying a rule once the stack is empty.
    let mut drained = mounted.start_state().unwrap();
    drained.open.clear();
    assert!(matches!(
        mounted.apply_rule(&mut drained, root_rule),
        Err(ModelError::Contract(_))
    ));
}

#[test]
fn single_rule_grammar_fixes_the_decoded_topology() {
    // Every LHS has exactly one rule, so masking fully determines the
    // topology; only the words are free.
    let fx = tree_fixture(&[("s t u", "(ROOT (X (pre _a _b)))")], 10, 1e-3);
    let (src, _) = &fx.data[0];
    // An untrained model may never emit eop and truncate; the structural
    // skeleton is forced either way.
    let tree = match greedy_decode(&fx.model, src) {
        Ok(out) => {
            let deriv = out.derivation.unwrap();
            assert_eq!(deriv.rule_step_count(), 3); // ROOT -> X, X -> pre, eos
            out.tree.unwrap()
        }
        Err(ModelError::StepLimit { partial, .. }) => partial.tree,
        Err(e) => panic!("unexpected: {e}"),
    };
    assert_eq!(tree.kind(tree.root()).tag(), "ROOT");
    let child = tree.children(tree.root())[0];
    assert_eq!(tree.kind(child).tag(), "X");
    let pre = tree.children(child)[0];
    assert!(tree.kind(pre).is_preterminal());
}

#[test]
fn empty_phrase_is_legal_at_decode_time() {
    let fx = fig1_fixture();
    let (src, _) = &fx.data[0];
    let grammar = fx.model.grammar().unwrap();
    let tape = Tape::new();
    let mounted = mount(&fx.model, &tape, src).unwrap();
    let mut state = mounted.start_state().unwrap();
    let root_rule = grammar.rules_with_lhs("ROOT")[0];
    let s_rule = grammar.rules_with_lhs("S")[0];
    let np_rule = grammar.rules_with_lhs("NP")[0];
    mounted.rule_step(&mut state).unwrap();
    mounted.apply_rule(&mut state, root_rule).unwrap();
    mounted.rule_step(&mut state).unwrap();
    mounted.apply_rule(&mut state, s_rule).unwrap();
    mounted.rule_step(&mut state).unwrap();
    mounted.apply_rule(&mut state, np_rule).unwrap();
    let depth_before = state.open.len();
    mounted.word_step(&mut state).unwrap();
    mounted.apply_word(&mut state, Vocab::EOP_ID).unwrap();
    assert_eq!(state.open.len(), depth_before - 1);
}

#[test]
fn forced_single_rule_steps_contribute_zero_loss() {
    // Grammar with exactly one rule per LHS: every rule decision is forced,
    // so the masked cross-entropy of each rule step is exactly zero.
    let fx = tree_fixture(
        &[("s", "(ROOT (X (pre _a _b)))")],
        8,
        1e-3,
    );
    let (src, target) = &fx.data[0];
    let Target::Derivation(d) = target else { unreachable!() };
    assert_eq!(d.rule_step_count(), 3); // ROOT->X, X->pre, eos: all forced

    // Walk the derivation and collect each step's gold cross-entropy.
    let grammar = fx.model.grammar().unwrap();
    let tape = Tape::new();
    let mounted = mount(&fx.model, &tape, src).unwrap();
    let mut state = mounted.start_state().unwrap();
    let mut rule_loss = 0.0;
    let mut word_loss = 0.0;
    for step in &d.steps {
        match step {
            Step::Rule { choice, .. } => {
                let scores = mounted.rule_step(&mut state).unwrap();
                let gold = match choice {
                    RuleChoice::Apply(id) => *id,
                    RuleChoice::Eos => grammar.eos_id(),
                };
                let lp = scores.log_probs().unwrap().value();
                rule_loss += -lp.data()[gold];
                mounted.apply_rule(&mut state, gold).unwrap();
            }
            Step::Word { choice, .. } => {
                let scores = mounted.word_step(&mut state).unwrap();
                let gold = match choice {
                    WordChoice::Subword(w) => fx.model.tgt_vocab.id(w),
                    WordChoice::Eop => Vocab::EOP_ID,
                };
                let lp = scores.log_probs().unwrap().value();
                word_loss += -lp.data()[gold];
                mounted.apply_word(&mut state, gold).unwrap();
            }
        }
    }
    assert_eq!(rule_loss, 0.0, "forced rule steps must cost exactly log 1");
    let stats = loss_only(&fx.model, src, target).unwrap();
    assert!((stats.loss - word_loss).abs() < 1e-9);
}

#[test]
fn one_pair_overfits_below_loss_threshold_in_200_steps() {
    let mut fx = tree_fixture(
        &[(
            "neko ga sakana o taberu",
            "(ROOT (S (NP (pre _The _cat)) (VP (pre _eat s) (NP (pre _fi sh))) (PUNC (pre _.))))",
        )],
        64,
        1e-2,
    );
    let (src, target) = fx.data[0].clone();
    let mut trainer = Trainer::new(fx.model);
    let mut losses = Vec::new();
    for _ in 0..200 {
        losses.push(trainer.train_example(&src, &target).unwrap().loss);
    }
    assert!(
        losses.last().unwrap() < &0.05,
        "final loss {}",
        losses.last().unwrap()
    );

    // Windowed monotone decrease (tolerance 1e-3 between 10-step windows).
    let windows: Vec<f64> = losses
        .chunks(10)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    for pair in windows.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-3,
            "window rose: {} -> {}",
            pair[0],
            pair[1]
        );
    }

    // Greedy decode reproduces the training target.
    let out = greedy_decode(&trainer.model, &src).unwrap();
    assert_eq!(
        out.words,
        toks("_The _cat _eat s _fi sh _."),
        "decoded {:?}",
        out.words
    );
    fx.model = trainer.model;
}

#[test]
fn beam_one_equals_greedy_and_nbest_scores_are_sorted() {
    let fx = tree_fixture(
        &[
            ("a b", "(ROOT (S (NP (pre _x)) (VP (pre _y _z))))"),
            ("c", "(ROOT (S (NP (pre _y)) (VP (pre _x))))"),
        ],
        12,
        1e-3,
    );
    for (src, _) in &fx.data {
        let limits = DecodeLimits::from_config(&fx.model.config, src.len());
        let greedy = greedy_decode(&fx.model, src);
        let beam = beam_decode(&fx.model, src, 1, limits);
        match (greedy, beam) {
            (Ok(g), Ok(b)) => {
                assert_eq!(g.words, b[0].words);
                assert_eq!(g.tree, b[0].tree);
                assert!((g.score - b[0].score).abs() < 1e-9);
            }
            (Err(ModelError::StepLimit { .. }), Err(ModelError::StepLimit { .. })) => {}
            (g, b) => panic!("divergent outcomes: {g:?} vs {b:?}"),
        }

        if let Ok(nbest) = beam_decode(&fx.model, src, 5, limits) {
            for pair in nbest.windows(2) {
                assert!(pair[0].score >= pair[1].score - 1e-12);
            }
        }
    }
}

#[test]
fn flat_beam_one_equals_flat_greedy() {
    let src_sents = vec![toks("a b"), toks("c a")];
    let tgt_sents = vec![toks("_x _y"), toks("_z")];
    let src_vocab = vocab_from(&src_sents, 0);
    let tgt_vocab = vocab_from(&tgt_sents, 0);
    let config = Config {
        hidden_size: 10,
        embed_size: 8,
        seed: 6,
        variant: ModelVariant::Seq2seq,
        ..Config::default()
    };
    let model: Model<f64> = Model::new(config, src_vocab.clone(), tgt_vocab, None).unwrap();
    for sent in &src_sents {
        let src = src_vocab.encode(sent);
        let limits = DecodeLimits::from_config(&model.config, src.len());
        let greedy = greedy_decode(&model, &src);
        let beam = beam_decode(&model, &src, 1, limits);
        match (greedy, beam) {
            (Ok(g), Ok(b)) => {
                assert_eq!(g.words, b[0].words);
                assert!((g.score - b[0].score).abs() < 1e-9);
            }
            (Err(ModelError::StepLimit { .. }), Err(ModelError::StepLimit { .. })) => {}
            (g, b) => panic!("divergent outcomes: {g:?} vs {b:?}"),
        }
    }
    assert!(matches!(
        beam_decode(&model, &src_vocab.encode(&src_sents[0]), 0, DecodeLimits {
            max_steps: 8,
            max_depth: 8
        }),
        Err(ModelError::Contract(_))
    ));
}

#[test]
fn seq2seq_mode_overfits_and_supports_linearized_trees() {
    // LIN baseline: flat targets are linearized trees; after training, the
    // decoded token stream delinearizes back to the gold tree.
    let gold_trees: Vec<Tree> = [
        "(ROOT (S (NP (pre _a)) (VP (pre _b _c))))",
        "(ROOT (S (NP (pre _c)) (VP (pre _a))))",
        "(ROOT (S (NP (pre _b _b)) (VP (pre _c))))",
    ]
    .iter()
    .map(|s| parse_tree(s).unwrap())
    .collect();
    let sources = ["p q", "q r", "r p"];

    let tgt_sents: Vec<Vec<String>> = gold_trees.iter().map(linearize).collect();
    let src_sents: Vec<Vec<String>> = sources.iter().map(|s| toks(s)).collect();
    let src_vocab = vocab_from(&src_sents, 0);
    let tgt_vocab = vocab_from(&tgt_sents, 0);
    let config = Config {
        hidden_size: 32,
        embed_size: 32,
        lr: 1e-2,
        seed: 3,
        variant: ModelVariant::Seq2seq,
        ..Config::default()
    };
    let model: Model<f64> = Model::new(config, src_vocab.clone(), tgt_vocab.clone(), None).unwrap();
    let data: Vec<(Vec<usize>, Target)> = src_sents
        .iter()
        .zip(&tgt_sents)
        .map(|(s, t)| {
            let mut ids = tgt_vocab.encode(t);
            ids.push(Vocab::EOS_ID);
            (src_vocab.encode(s), Target::Flat(ids))
        })
        .collect();

    let mut trainer = Trainer::new(model);
    for _ in 0..150 {
        for (src, target) in &data {
            trainer.train_example(src, target).unwrap();
        }
    }
    for ((src, _), gold) in data.iter().zip(&gold_trees) {
        let out = greedy_decode(&trainer.model, src).unwrap();
        assert!(out.tree.is_none());
        let tree = delinearize(&out.words).unwrap();
        assert_eq!(&tree, gold);
    }
}

#[test]
fn per_phrase_word_rnn_init_changes_later_phrases_only() {
    // With per-phrase re-initialization the word RNN forgets the first
    // phrase before starting the second, so losses diverge from the
    // default continuous configuration only at the second phrase.
    let build = |flag: bool| {
        let trees =
            vec![parse_tree("(ROOT (S (NP (pre _x _y)) (VP (pre _z _w))))").unwrap()];
        let grammar = Grammar::extract(&trees).unwrap();
        let tgt = vocab_from(&[trees[0].leaves()], 0);
        let src = vocab_from(&[toks("a b")], 0);
        let config = Config {
            hidden_size: 12,
            embed_size: 12,
            seed: 2,
            word_rnn_per_phrase_init: flag,
            variant: ModelVariant::Tree(treenmt_core::TreeVariant::ConstituencyFull),
            ..Config::default()
        };
        let model: Model<f64> = Model::new(config, src.clone(), tgt, Some(grammar.clone())).unwrap();
        let deriv = canonical_derivation(&trees[0], &grammar).unwrap();
        
        loss_only(&model, &src.encode(&toks("a b")), &Target::Derivation(deriv))
            .unwrap()
            .loss
    };
    let continuous = build(false);
    let per_phrase = build(true);
    assert!(
        (continuous - per_phrase).abs() > 1e-12,
        "flag had no effect: {continuous} vs {per_phrase}"
    );
}

#[test]
fn step_limit_error_carries_the_partial_output() {
    let fx = fig1_fixture();
    let (src, _) = &fx.data[0];
    let limits = DecodeLimits {
        max_steps: 2,
        max_depth: 64,
    };
    match treenmt_model::greedy_decode_with(&fx.model, src, limits, None) {
        Err(ModelError::StepLimit { limit, partial }) => {
            assert_eq!(limit, 2);
            assert!(!partial.tree.is_empty());
        }
        other => panic!("expected step-limit error, got {other:?}"),
    }
}
