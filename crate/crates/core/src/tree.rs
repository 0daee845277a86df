//! Ordered rooted trees over subword leaves.
//!
//! Three node kinds: terminals carry subwords, preterminals dominate a run
//! of terminals (the switch point between structure and words), and
//! nonterminals carry grammar tags. Every well-formed target tree keeps
//! terminals strictly under preterminals; `validate` enforces that.

use thiserror::Error;

use crate::bpe::BpeModel;

/// Tag of the synthetic start node wrapped around every training tree.
pub const ROOT_TAG: &str = "ROOT";
/// Tag shared by all preterminal nodes in model-facing trees.
pub const PRE_TAG: &str = "pre";
/// Replacement tag used when syntactic labels are stripped.
pub const NULL_TAG: &str = "NULL";

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    /// Leaf subword.
    Terminal(String),
    /// Inner node with a grammar tag.
    Nonterminal(String),
    /// Node whose children are all terminals.
    Preterminal(String),
}

impl NodeKind {
    pub fn tag(&self) -> &str {
        match self {
            NodeKind::Terminal(w) => w,
            NodeKind::Nonterminal(t) | NodeKind::Preterminal(t) => t,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, NodeKind::Terminal(_))
    }

    pub fn is_preterminal(&self) -> bool {
        matches!(self, NodeKind::Preterminal(_))
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root: NodeId,
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node '{tag}' mixes terminal and non-terminal children")]
    MixedChildren { tag: String },
    #[error("node '{tag}' has no children")]
    EmptyNode { tag: String },
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("expansion '{rule}' is missing from the grammar")]
    MissingRule { rule: String },
    #[error("rule '{rule}' cannot expand open symbol '{open}'")]
    Grammaticality { rule: String, open: String },
    #[error("malformed derivation: {0}")]
    MalformedDerivation(String),
    #[error("bad linearization: {0}")]
    BadLinearization(String),
}

impl Tree {
    /// Start a tree from a root node; extend with [`Tree::add_child`].
    pub fn with_root(kind: NodeKind) -> Tree {
        Tree {
            nodes: vec![Node {
                kind,
                children: Vec::new(),
                parent: None,
            }],
            root: 0,
        }
    }

    pub fn add_child(&mut self, parent: NodeId, kind: NodeKind) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            kind,
            children: Vec::new(),
            parent: Some(parent),
        });
        self.nodes[parent].children.push(id);
        id
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id].kind
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in depth-first pre-order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            for &c in self.nodes[id].children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// In-order leaf tokens; equals the target subword sentence.
    pub fn leaves(&self) -> Vec<String> {
        self.preorder()
            .into_iter()
            .filter_map(|id| match &self.nodes[id].kind {
                NodeKind::Terminal(w) => Some(w.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn count_kind(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        if self.nodes[self.root].parent.is_some() {
            return Err(TreeError::Invalid("root has a parent".into()));
        }
        let order = self.preorder();
        if order.len() != self.nodes.len() {
            return Err(TreeError::Invalid(format!(
                "{} of {} nodes reachable from root",
                order.len(),
                self.nodes.len()
            )));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            for &c in &node.children {
                if self.nodes[c].parent != Some(id) {
                    return Err(TreeError::Invalid(format!(
                        "child {c} does not point back to parent {id}"
                    )));
                }
            }
            match &node.kind {
                NodeKind::Terminal(w) => {
                    if !node.children.is_empty() {
                        return Err(TreeError::Invalid(format!("terminal '{w}' has children")));
                    }
                    if id != self.root && !self.nodes[node.parent.unwrap()].kind.is_preterminal() {
                        return Err(TreeError::Invalid(format!(
                            "terminal '{w}' not under a preterminal"
                        )));
                    }
                }
                // A preterminal may be empty: decoding can close a phrase
                // immediately with end-of-phrase.
                NodeKind::Preterminal(t) => {
                    if !node.children.iter().all(|&c| self.nodes[c].kind.is_terminal()) {
                        return Err(TreeError::Invalid(format!(
                            "preterminal '{t}' has a non-terminal child"
                        )));
                    }
                }
                NodeKind::Nonterminal(t) => {
                    if node.children.is_empty() {
                        return Err(TreeError::EmptyNode { tag: t.clone() });
                    }
                    if node.children.iter().any(|&c| self.nodes[c].kind.is_terminal()) {
                        return Err(TreeError::Invalid(format!(
                            "nonterminal '{t}' has a bare terminal child"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy the subtree at `src_id` of `src` under `parent` in `self`.
    pub fn graft(&mut self, parent: NodeId, src: &Tree, src_id: NodeId) {
        let id = self.add_child(parent, src.nodes[src_id].kind.clone());
        for &c in &src.nodes[src_id].children {
            self.graft(id, src, c);
        }
    }

    /// Wrap in a synthetic `ROOT` nonterminal; idempotent.
    pub fn wrap_root(&self) -> Tree {
        if matches!(&self.nodes[self.root].kind, NodeKind::Nonterminal(t) if t == ROOT_TAG) {
            return self.clone();
        }
        let mut out = Tree::with_root(NodeKind::Nonterminal(ROOT_TAG.to_string()));
        out.graft(0, self, self.root);
        out
    }

    /// Canonical single-space bracket encoding.
    pub fn to_bracket(&self) -> String {
        fn rec(tree: &Tree, id: NodeId, out: &mut String) {
            match &tree.nodes[id].kind {
                NodeKind::Terminal(w) => out.push_str(w),
                NodeKind::Nonterminal(t) | NodeKind::Preterminal(t) => {
                    out.push('(');
                    out.push_str(t);
                    for &c in &tree.nodes[id].children {
                        out.push(' ');
                        rec(tree, c, out);
                    }
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        rec(self, self.root, &mut out);
        out
    }
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        fn eq_at(a: &Tree, ai: NodeId, b: &Tree, bi: NodeId) -> bool {
            let (na, nb) = (&a.nodes[ai], &b.nodes[bi]);
            na.kind == nb.kind
                && na.children.len() == nb.children.len()
                && na
                    .children
                    .iter()
                    .zip(&nb.children)
                    .all(|(&ca, &cb)| eq_at(a, ca, b, cb))
        }
        eq_at(self, self.root, other, other.root)
    }
}

impl Eq for Tree {}

/// Intermediate nested form shared by the bracket reader and delinearizer.
#[derive(Debug, Clone)]
pub(crate) enum Nested {
    Leaf(String),
    Node(String, Vec<Nested>),
}

impl Tree {
    /// Convert a nested parse into an arena tree, classifying node kinds:
    /// a node whose children are all leaves becomes a preterminal.
    pub(crate) fn from_nested(nested: &Nested) -> Result<Tree, TreeError> {
        fn attach(tree: &mut Tree, parent: NodeId, n: &Nested) -> Result<(), TreeError> {
            let id = tree.add_child(parent, classify(n)?);
            if let Nested::Node(_, children) = n {
                for c in children {
                    attach(tree, id, c)?;
                }
            }
            let _ = id;
            Ok(())
        }
        let mut tree = Tree::with_root(classify(nested)?);
        if let Nested::Node(_, children) = nested {
            for c in children {
                attach(&mut tree, 0, c)?;
            }
        }
        Ok(tree)
    }
}

fn classify(n: &Nested) -> Result<NodeKind, TreeError> {
    match n {
        Nested::Leaf(w) => Ok(NodeKind::Terminal(w.clone())),
        Nested::Node(tag, children) => {
            if children.is_empty() {
                return Err(TreeError::EmptyNode { tag: tag.clone() });
            }
            let leaf_children = children
                .iter()
                .filter(|c| matches!(c, Nested::Leaf(_)))
                .count();
            if leaf_children == children.len() {
                Ok(NodeKind::Preterminal(tag.clone()))
            } else if leaf_children == 0 {
                Ok(NodeKind::Nonterminal(tag.clone()))
            } else {
                Err(TreeError::MixedChildren { tag: tag.clone() })
            }
        }
    }
}

/// Collapse word spans into `pre` preterminals and split words by BPE.
///
/// Within each node's child list, every maximal run of word-only children
/// (bare terminals or preterminal nodes) becomes a single `pre` node whose
/// terminals are the BPE pieces of the run's words in order. Nonterminal
/// children are recursed into, so a phrase like `VP -> (VBZ eats) (NP ...)`
/// keeps `NP` while `VBZ` collapses.
pub fn form_preterminals(tree: &Tree, bpe: &BpeModel) -> Tree {
    fn unit_words(tree: &Tree, id: NodeId, out: &mut Vec<String>) {
        match &tree.node(id).kind {
            NodeKind::Terminal(w) => out.push(w.clone()),
            _ => {
                for &c in tree.children(id) {
                    unit_words(tree, c, out);
                }
            }
        }
    }

    fn is_word_unit(tree: &Tree, id: NodeId) -> bool {
        matches!(
            tree.node(id).kind,
            NodeKind::Terminal(_) | NodeKind::Preterminal(_)
        )
    }

    fn add_pre(out: &mut Tree, parent: NodeId, words: &[String], bpe: &BpeModel) {
        let pre = out.add_child(parent, NodeKind::Preterminal(PRE_TAG.to_string()));
        for piece in bpe.apply(words) {
            out.add_child(pre, NodeKind::Terminal(piece));
        }
    }

    fn rebuild(tree: &Tree, id: NodeId, out: &mut Tree, parent: NodeId, bpe: &BpeModel) {
        let node_id = out.add_child(parent, tree.node(id).kind.clone());
        copy_children(tree, id, out, node_id, bpe);
    }

    fn copy_children(tree: &Tree, id: NodeId, out: &mut Tree, out_id: NodeId, bpe: &BpeModel) {
        let mut run: Vec<String> = Vec::new();
        for &c in tree.children(id) {
            if is_word_unit(tree, c) {
                unit_words(tree, c, &mut run);
            } else {
                if !run.is_empty() {
                    add_pre(out, out_id, &run, bpe);
                    run.clear();
                }
                rebuild(tree, c, out, out_id, bpe);
            }
        }
        if !run.is_empty() {
            add_pre(out, out_id, &run, bpe);
        }
    }

    let root = tree.root();
    match tree.node(root).kind.clone() {
        // A preterminal root keeps its tag as a nonterminal above the new
        // pre, so `(X w)` becomes `(X (pre ...))`.
        NodeKind::Preterminal(tag) => {
            let mut words = Vec::new();
            unit_words(tree, root, &mut words);
            let mut out = Tree::with_root(NodeKind::Nonterminal(tag));
            add_pre(&mut out, 0, &words, bpe);
            out
        }
        NodeKind::Terminal(word) => {
            let mut out = Tree::with_root(NodeKind::Preterminal(PRE_TAG.to_string()));
            for piece in bpe.apply_word(&word) {
                out.add_child(0, NodeKind::Terminal(piece));
            }
            out
        }
        kind @ NodeKind::Nonterminal(_) => {
            let mut out = Tree::with_root(kind);
            copy_children(tree, root, &mut out, 0, bpe);
            out
        }
    }
}

/// Depth-first bracket token encoding: `(TAG` opens a node, `)` closes it,
/// terminals appear bare. Inverse of [`delinearize`].
pub fn linearize(tree: &Tree) -> Vec<String> {
    fn rec(tree: &Tree, id: NodeId, out: &mut Vec<String>) {
        match &tree.node(id).kind {
            NodeKind::Terminal(w) => out.push(w.clone()),
            NodeKind::Nonterminal(t) | NodeKind::Preterminal(t) => {
                out.push(format!("({t}"));
                for &c in tree.children(id) {
                    rec(tree, c, out);
                }
                out.push(")".to_string());
            }
        }
    }
    let mut out = Vec::new();
    rec(tree, tree.root(), &mut out);
    out
}

/// Rebuild a tree from [`linearize`] output.
pub fn delinearize(tokens: &[String]) -> Result<Tree, TreeError> {
    let mut stack: Vec<(String, Vec<Nested>)> = Vec::new();
    let mut iter = tokens.iter();
    let first = iter
        .next()
        .ok_or_else(|| TreeError::BadLinearization("empty token sequence".into()))?;
    match first.strip_prefix('(') {
        Some(tag) if !tag.is_empty() => stack.push((tag.to_string(), Vec::new())),
        _ => {
            return Err(TreeError::BadLinearization(format!(
                "expected opening token, found '{first}'"
            )))
        }
    }
    let mut finished: Option<Nested> = None;
    for tok in iter {
        if finished.is_some() {
            return Err(TreeError::BadLinearization(format!(
                "trailing token '{tok}' after root closed"
            )));
        }
        if tok == ")" {
            let (tag, children) = stack.pop().expect("checked non-empty");
            let node = Nested::Node(tag, children);
            match stack.last_mut() {
                Some((_, siblings)) => siblings.push(node),
                None => finished = Some(node),
            }
        } else if let Some(tag) = tok.strip_prefix('(') {
            if tag.is_empty() {
                return Err(TreeError::BadLinearization("bare '(' token".into()));
            }
            stack.push((tag.to_string(), Vec::new()));
        } else {
            stack
                .last_mut()
                .expect("checked non-empty")
                .1
                .push(Nested::Leaf(tok.clone()));
        }
    }
    match finished {
        Some(nested) => Tree::from_nested(&nested),
        None => Err(TreeError::BadLinearization(format!(
            "{} unclosed nodes",
            stack.len()
        ))),
    }
}
