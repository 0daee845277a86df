//! Context-free grammar over target trees.
//!
//! Rules rewrite a nonterminal tag into tags and/or the preterminal symbol
//! `pre`; terminal words never appear on a right-hand side. The grammar is
//! the deduplicated set of expansions observed in training trees, ids in
//! first-seen order. End-of-sentence is a distinguished decision-vocabulary
//! entry (`eos_id` = number of rules), not a production.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::tree::{NodeKind, Tree, TreeError, PRE_TAG, ROOT_TAG};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Nonterminal(String),
    Pre,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Nonterminal(t) => f.write_str(t),
            Symbol::Pre => f.write_str(PRE_TAG),
        }
    }
}

impl Symbol {
    pub fn parse(s: &str) -> Symbol {
        if s == PRE_TAG {
            Symbol::Pre
        } else {
            Symbol::Nonterminal(s.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub lhs: String,
    pub rhs: Vec<Symbol>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ->", self.lhs)?;
        for sym in &self.rhs {
            write!(f, " {sym}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("grammar line {line}: '{text}' is not 'LHS -> RHS...'")]
    BadLine { line: usize, text: String },
    #[error("grammar header '{0}' is not 'start <tag> eos <id>'")]
    BadHeader(String),
    #[error("grammar eos id {found} does not match {expected} rules")]
    BadEosId { found: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    rules: Vec<Rule>,
    by_lhs: HashMap<String, Vec<usize>>,
    ids: HashMap<Rule, usize>,
    start: String,
}

impl Grammar {
    pub fn empty() -> Grammar {
        Grammar {
            rules: Vec::new(),
            by_lhs: HashMap::new(),
            ids: HashMap::new(),
            start: ROOT_TAG.to_string(),
        }
    }

    /// Collect one rule per distinct nonterminal expansion, in first-seen
    /// pre-order across the trees.
    pub fn extract(trees: &[Tree]) -> Result<Grammar, TreeError> {
        let mut grammar = Grammar::empty();
        for tree in trees {
            for id in tree.preorder() {
                let node = tree.node(id);
                let NodeKind::Nonterminal(tag) = &node.kind else {
                    continue;
                };
                let mut rhs = Vec::with_capacity(node.children.len());
                for &c in &node.children {
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
                grammar.insert(Rule {
                    lhs: tag.clone(),
                    rhs,
                });
            }
        }
        Ok(grammar)
    }

    pub fn insert(&mut self, rule: Rule) -> usize {
        if let Some(&id) = self.ids.get(&rule) {
            return id;
        }
        let id = self.rules.len();
        self.by_lhs
            .entry(rule.lhs.clone())
            .or_default()
            .push(id);
        self.ids.insert(rule.clone(), id);
        self.rules.push(rule);
        id
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: usize) -> &Rule {
        &self.rules[id]
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn id_of(&self, rule: &Rule) -> Option<usize> {
        self.ids.get(rule).copied()
    }

    /// Rule ids whose LHS is `tag`, in id order.
    pub fn rules_with_lhs(&self, tag: &str) -> &[usize] {
        self.by_lhs.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn start_symbol(&self) -> &str {
        &self.start
    }

    /// Decision id reserved for end-of-sentence: one past the last rule.
    pub fn eos_id(&self) -> usize {
        self.rules.len()
    }

    /// Size of the rule decision vocabulary (all rules plus eos).
    pub fn decision_count(&self) -> usize {
        self.rules.len() + 1
    }

    pub fn is_superset_of(&self, other: &Grammar) -> bool {
        other.rules.iter().all(|r| self.ids.contains_key(r))
    }

    /// Header line `start <tag> eos <id>`, then one rule per line in id
    /// order.
    pub fn to_text(&self) -> String {
        let mut out = format!("start {} eos {}\n", self.start, self.eos_id());
        for rule in &self.rules {
            out.push_str(&rule.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Grammar, GrammarError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (start, eos_id) = match parts.as_slice() {
            ["start", tag, "eos", id] => (
                tag.to_string(),
                id.parse::<usize>()
                    .map_err(|_| GrammarError::BadHeader(header.to_string()))?,
            ),
            _ => return Err(GrammarError::BadHeader(header.to_string())),
        };
        let mut grammar = Grammar::empty();
        grammar.start = start;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || GrammarError::BadLine {
                line: i + 2,
                text: line.to_string(),
            };
            let (lhs, rhs_text) = line.split_once(" -> ").ok_or_else(bad)?;
            let rhs: Vec<Symbol> = rhs_text.split_whitespace().map(Symbol::parse).collect();
            if lhs.is_empty() || rhs.is_empty() {
                return Err(bad());
            }
            grammar.insert(Rule {
                lhs: lhs.to_string(),
                rhs,
            });
        }
        if grammar.eos_id() != eos_id {
            return Err(GrammarError::BadEosId {
                found: eos_id,
                expected: grammar.eos_id(),
            });
        }
        Ok(grammar)
    }
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
    fn extracts_the_example_rule_set() {
        let g = Grammar::extract(&[fig1_tree()]).unwrap();
        let want = [
            "ROOT -> S",
            "S -> NP VP PUNC",
            "NP -> pre",
            "VP -> pre NP",
            "PUNC -> pre",
        ];
        let got: Vec<String> = g.rules().iter().map(Rule::to_string).collect();
        assert_eq!(got, want);
        assert_eq!(g.eos_id(), 5);
        assert_eq!(g.rules_with_lhs("NP"), &[2]);
    }

    #[test]
    fn empty_tree_list_keeps_only_eos() {
        let g = Grammar::extract(&[]).unwrap();
        assert_eq!(g.len(), 0);
        assert_eq!(g.eos_id(), 0);
        assert_eq!(g.decision_count(), 1);
    }

    #[test]
    fn duplicate_trees_do_not_duplicate_rules() {
        let one = Grammar::extract(&[fig1_tree()]).unwrap();
        let two = Grammar::extract(&[fig1_tree(), fig1_tree()]).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn text_round_trips() {
        let g = Grammar::extract(&[fig1_tree()]).unwrap();
        let back = Grammar::from_text(&g.to_text()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(
            Grammar::from_text("rules 5\nS -> pre\n"),
            Err(GrammarError::BadHeader(_))
        ));
    }
}
