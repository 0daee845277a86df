//! Derivations: the canonical interleaved rule/word timeline that
//! reconstructs a tree.
//!
//! Steps are numbered from 1 on the timeline; parent pointers refer to the
//! timeline index of the rule step that introduced the node being acted on,
//! with the sentinel 0 standing for the pre-derivation initial state. A
//! tree is generated top-down and left-to-right: expanding a nonterminal
//! emits one rule step, reaching a preterminal emits one word step per
//! subword and a closing end-of-phrase step, and the derivation ends with
//! the end-of-sentence rule step once every symbol is closed.

use crate::grammar::{Grammar, Rule, Symbol};
use crate::tree::{NodeKind, Tree, TreeError, PRE_TAG};
use crate::vocab::EOP;

/// Sentinel parent: the initial state before any step.
pub const SENTINEL: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleChoice {
    Apply(usize),
    Eos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WordChoice {
    Subword(String),
    Eop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Rule { choice: RuleChoice, parent: usize },
    Word { choice: WordChoice, parent: usize },
}

impl Step {
    pub fn parent(&self) -> usize {
        match self {
            Step::Rule { parent, .. } | Step::Word { parent, .. } => *parent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Derivation {
    pub steps: Vec<Step>,
}

impl Derivation {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step at 1-based timeline position `t`.
    pub fn at(&self, t: usize) -> &Step {
        &self.steps[t - 1]
    }

    pub fn rule_step_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Rule { .. }))
            .count()
    }

    pub fn word_step_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Word { .. }))
            .count()
    }

    /// Subword sentence: word steps in order with end-of-phrase dropped.
    pub fn words(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Word {
                    choice: WordChoice::Subword(w),
                    ..
                } => Some(w.clone()),
                _ => None,
            })
            .collect()
    }

    /// Debug dump: one step per line, `t  RULE|WORD  symbol  parent`.
    pub fn dump(&self, grammar: &Grammar) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let t = i + 1;
            let line = match step {
                Step::Rule {
                    choice: RuleChoice::Apply(id),
                    parent,
                } => format!("{t}\tRULE\t{}\t{parent}", grammar.rule(*id)),
                Step::Rule {
                    choice: RuleChoice::Eos,
                    parent,
                } => format!("{t}\tRULE\t{}\t{parent}", crate::vocab::EOS),
                Step::Word {
                    choice: WordChoice::Subword(w),
                    parent,
                } => format!("{t}\tWORD\t{w}\t{parent}"),
                Step::Word {
                    choice: WordChoice::Eop,
                    parent,
                } => format!("{t}\tWORD\t{EOP}\t{parent}"),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Pre-order, leftmost-first derivation of an existing tree.
pub fn canonical_derivation(tree: &Tree, grammar: &Grammar) -> Result<Derivation, TreeError> {
    let mut steps = Vec::new();
    // Stack of (node, parent timeline index); top is the leftmost open node.
    let mut open = vec![(tree.root(), SENTINEL)];
    let mut t = 0usize;

    while let Some((node_id, parent)) = open.pop() {
        match &tree.node(node_id).kind {
            NodeKind::Nonterminal(tag) => {
                let mut rhs = Vec::new();
                for &c in tree.children(node_id) {
                    match &tree.node(c).kind {
                        NodeKind::Nonterminal(t) => rhs.push(Symbol::Nonterminal(t.clone())),
                        NodeKind::Preterminal(_) => rhs.push(Symbol::Pre),
                        NodeKind::Terminal(w) => {
                            return Err(TreeError::Invalid(format!(
                                "bare terminal '{w}' under nonterminal '{tag}'"
                            )))
                        }
                    }
                }
                let rule = Rule {
                    lhs: tag.clone(),
                    rhs,
                };
                let rule_id = grammar
                    .id_of(&rule)
                    .ok_or_else(|| TreeError::MissingRule {
                        rule: rule.to_string(),
                    })?;
                t += 1;
                steps.push(Step::Rule {
                    choice: RuleChoice::Apply(rule_id),
                    parent,
                });
                for &c in tree.children(node_id).iter().rev() {
                    open.push((c, t));
                }
            }
            NodeKind::Preterminal(_) => {
                for &c in tree.children(node_id) {
                    let NodeKind::Terminal(w) = &tree.node(c).kind else {
                        return Err(TreeError::Invalid(
                            "preterminal with non-terminal child".into(),
                        ));
                    };
                    t += 1;
                    steps.push(Step::Word {
                        choice: WordChoice::Subword(w.clone()),
                        parent,
                    });
                }
                t += 1;
                steps.push(Step::Word {
                    choice: WordChoice::Eop,
                    parent,
                });
            }
            NodeKind::Terminal(w) => {
                return Err(TreeError::Invalid(format!(
                    "terminal '{w}' reached outside a preterminal"
                )))
            }
        }
    }

    steps.push(Step::Rule {
        choice: RuleChoice::Eos,
        parent: SENTINEL,
    });
    Ok(Derivation { steps })
}

/// Run the expansion automaton over recorded steps, rebuilding the tree.
pub fn replay_derivation(deriv: &Derivation, grammar: &Grammar) -> Result<Tree, TreeError> {
    let mut tree: Option<Tree> = None;
    // Stack of open node ids in the tree under construction.
    let mut open: Vec<usize> = Vec::new();
    let mut done = false;

    for (i, step) in deriv.steps.iter().enumerate() {
        if done {
            return Err(TreeError::MalformedDerivation(format!(
                "step {} after end of sentence",
                i + 1
            )));
        }
        match step {
            Step::Rule {
                choice: RuleChoice::Eos,
                ..
            } => {
                if let Some(&top) = open.last() {
                    let tag = tree.as_ref().map(|t| t.kind(top).tag().to_string());
                    return Err(TreeError::MalformedDerivation(format!(
                        "end of sentence with open symbol '{}'",
                        tag.unwrap_or_default()
                    )));
                }
                done = true;
            }
            Step::Rule {
                choice: RuleChoice::Apply(rule_id),
                ..
            } => {
                let rule = grammar.rule(*rule_id);
                let node_id = match (&mut tree, open.pop()) {
                    (Some(t), Some(top)) => {
                        let kind = t.kind(top);
                        if kind.tag() != rule.lhs || kind.is_preterminal() {
                            return Err(TreeError::Grammaticality {
                                rule: rule.to_string(),
                                open: kind.tag().to_string(),
                            });
                        }
                        top
                    }
                    (None, _) => {
                        if rule.lhs != grammar.start_symbol() {
                            return Err(TreeError::Grammaticality {
                                rule: rule.to_string(),
                                open: grammar.start_symbol().to_string(),
                            });
                        }
                        tree = Some(Tree::with_root(NodeKind::Nonterminal(rule.lhs.clone())));
                        0
                    }
                    (Some(_), None) => {
                        return Err(TreeError::MalformedDerivation(format!(
                            "rule '{rule}' applied with no open symbol"
                        )))
                    }
                };
                let t = tree.as_mut().expect("tree exists");
                let mut child_ids = Vec::with_capacity(rule.rhs.len());
                for sym in &rule.rhs {
                    let kind = match sym {
                        Symbol::Nonterminal(tag) => NodeKind::Nonterminal(tag.clone()),
                        Symbol::Pre => NodeKind::Preterminal(PRE_TAG.to_string()),
                    };
                    child_ids.push(t.add_child(node_id, kind));
                }
                open.extend(child_ids.into_iter().rev());
            }
            Step::Word { choice, .. } => {
                let Some(&top) = open.last() else {
                    return Err(TreeError::MalformedDerivation(
                        "word step with no open symbol".into(),
                    ));
                };
                let t = tree.as_mut().ok_or_else(|| {
                    TreeError::MalformedDerivation("word step before any rule".into())
                })?;
                if !t.kind(top).is_preterminal() {
                    return Err(TreeError::MalformedDerivation(format!(
                        "word step while open symbol is '{}'",
                        t.kind(top).tag()
                    )));
                }
                match choice {
                    WordChoice::Subword(w) => {
                        t.add_child(top, NodeKind::Terminal(w.clone()));
                    }
                    WordChoice::Eop => {
                        open.pop();
                    }
                }
            }
        }
    }

    if !done {
        return Err(TreeError::MalformedDerivation(
            "derivation ended without end of sentence".into(),
        ));
    }
    tree.ok_or_else(|| TreeError::MalformedDerivation("no steps before end of sentence".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bracket::parse_tree;

    fn fig1_tree() -> Tree {
        parse_tree(
            "(ROOT (S (NP (pre _The _cat)) (VP (pre _eat s) (NP (pre _fi sh))) (PUNC (pre _.))))",
        )
        .unwrap()
    }

    #[test]
    fn fig1_derivation_matches_the_eighteen_step_timeline() {
        let tree = fig1_tree();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let d = canonical_derivation(&tree, &g).unwrap();

        let symbol = |s: &Step| -> String {
            match s {
                Step::Rule {
                    choice: RuleChoice::Apply(id),
                    ..
                } => g.rule(*id).to_string(),
                Step::Rule {
                    choice: RuleChoice::Eos,
                    ..
                } => "<eos>".into(),
                Step::Word {
                    choice: WordChoice::Subword(w),
                    ..
                } => w.clone(),
                Step::Word {
                    choice: WordChoice::Eop,
                    ..
                } => "<eop>".into(),
            }
        };

        let got: Vec<(String, usize)> =
            d.steps.iter().map(|s| (symbol(s), s.parent())).collect();
        let want: Vec<(&str, usize)> = vec![
            ("ROOT -> S", 0),
            ("S -> NP VP PUNC", 1),
            ("NP -> pre", 2),
            ("_The", 3),
            ("_cat", 3),
            ("<eop>", 3),
            ("VP -> pre NP", 2),
            ("_eat", 7),
            ("s", 7),
            ("<eop>", 7),
            ("NP -> pre", 7),
            ("_fi", 11),
            ("sh", 11),
            ("<eop>", 11),
            ("PUNC -> pre", 2),
            ("_.", 15),
            ("<eop>", 15),
            ("<eos>", 0),
        ];
        assert_eq!(d.len(), 18);
        assert_eq!(
            got,
            want.into_iter()
                .map(|(s, p)| (s.to_string(), p))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn tiny_tree_derivation() {
        let tree = parse_tree("(ROOT (X (pre w)))").unwrap();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let d = canonical_derivation(&tree, &g).unwrap();
        let kinds: Vec<bool> = d
            .steps
            .iter()
            .map(|s| matches!(s, Step::Rule { .. }))
            .collect();
        assert_eq!(kinds, vec![true, true, false, false, true]);
        assert_eq!(d.words(), vec!["w"]);
    }

    #[test]
    fn replay_reconstructs_fig1_exactly() {
        let tree = fig1_tree();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let d = canonical_derivation(&tree, &g).unwrap();
        assert_eq!(replay_derivation(&d, &g).unwrap(), tree);
    }

    #[test]
    fn lhs_mismatch_is_a_grammaticality_error() {
        let tree = fig1_tree();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let mut d = canonical_derivation(&tree, &g).unwrap();
        // Replace step 3 (NP -> pre) with S -> NP VP PUNC.
        d.steps[2] = Step::Rule {
            choice: RuleChoice::Apply(1),
            parent: 2,
        };
        assert!(matches!(
            replay_derivation(&d, &g),
            Err(TreeError::Grammaticality { .. })
        ));
    }

    #[test]
    fn early_eos_is_malformed() {
        let tree = fig1_tree();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let mut d = canonical_derivation(&tree, &g).unwrap();
        d.steps.truncate(2);
        d.steps.push(Step::Rule {
            choice: RuleChoice::Eos,
            parent: 0,
        });
        assert!(matches!(
            replay_derivation(&d, &g),
            Err(TreeError::MalformedDerivation(_))
        ));
    }

    #[test]
    fn missing_rule_is_reported_by_name() {
        let tree = fig1_tree();
        let g = Grammar::extract(&[parse_tree("(ROOT (X (pre a)))").unwrap()]).unwrap();
        let err = canonical_derivation(&tree, &g).unwrap_err();
        assert!(err.to_string().contains("ROOT -> S"), "{err}");
    }

    #[test]
    fn rule_steps_count_nonterminals_plus_one() {
        let tree = fig1_tree();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let d = canonical_derivation(&tree, &g).unwrap();
        let nonterminals = tree.count_kind(|k| matches!(k, NodeKind::Nonterminal(_)));
        assert_eq!(d.rule_step_count(), nonterminals + 1);
        let pres = tree.count_kind(NodeKind::is_preterminal);
        let leaves = tree.count_kind(NodeKind::is_terminal);
        assert_eq!(d.word_step_count(), pres + leaves);
    }

    #[test]
    fn dump_format_is_tab_separated() {
        let tree = parse_tree("(ROOT (X (pre w)))").unwrap();
        let g = Grammar::extract(std::slice::from_ref(&tree)).unwrap();
        let d = canonical_derivation(&tree, &g).unwrap();
        let dump = d.dump(&g);
        let first = dump.lines().next().unwrap();
        assert_eq!(first, "1\tRULE\tROOT -> X\t0");
        assert!(dump.lines().any(|l| l == "3\tWORD\tw\t2"));
    }
}
