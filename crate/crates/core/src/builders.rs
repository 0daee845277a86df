//! Construction of the four target-tree variants: full constituency,
//! null-tag constituency, converted dependency, and the concatenation of
//! the two balanced binary trees.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bpe::BpeModel;
use crate::conll::DependencyTree;
use crate::tree::{form_preterminals, NodeId, NodeKind, Tree, NULL_TAG, PRE_TAG};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeVariant {
    ConstituencyFull,
    ConstituencyNull,
    Dependency,
    BinaryConcat,
}

impl fmt::Display for TreeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TreeVariant::ConstituencyFull => "con",
            TreeVariant::ConstituencyNull => "con-null",
            TreeVariant::Dependency => "dep",
            TreeVariant::BinaryConcat => "binary",
        };
        f.write_str(s)
    }
}

impl FromStr for TreeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "con" => Ok(TreeVariant::ConstituencyFull),
            "con-null" => Ok(TreeVariant::ConstituencyNull),
            "dep" => Ok(TreeVariant::Dependency),
            "binary" => Ok(TreeVariant::BinaryConcat),
            other => Err(format!(
                "unknown tree variant '{other}' (expected con, con-null, dep, or binary)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("sentence {sentence}: non-projective dependency tree: arc {dep1}->{head1} crosses {dep2}->{head2}")]
    NonProjective {
        sentence: usize,
        dep1: usize,
        head1: usize,
        dep2: usize,
        head2: usize,
    },
    #[error("{found} {what} provided for {expected} target sentences")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("sentence {sentence}: {what} words do not match the target sentence")]
    LeafMismatch { sentence: usize, what: &'static str },
    #[error("variant '{0}' requires parsed constituency trees")]
    MissingTrees(TreeVariant),
    #[error("variant '{0}' requires dependency trees")]
    MissingDeps(TreeVariant),
    #[error("cannot build a tree over an empty word list")]
    EmptySentence,
    #[error("bad range l={l} r={r} over {len} words")]
    BadRange { l: usize, r: usize, len: usize },
}

/// Replace every nonterminal tag with the null tag; preterminals and
/// terminals are untouched.
pub fn strip_tags(tree: &Tree) -> Tree {
    fn rebuild(tree: &Tree, id: NodeId, out: &mut Tree, parent: Option<NodeId>) {
        let kind = match tree.kind(id) {
            NodeKind::Nonterminal(_) => NodeKind::Nonterminal(NULL_TAG.to_string()),
            other => other.clone(),
        };
        let new_id = match parent {
            Some(p) => out.add_child(p, kind),
            None => {
                *out = Tree::with_root(kind);
                0
            }
        };
        for &c in tree.children(id) {
            rebuild(tree, c, out, Some(new_id));
        }
    }
    let mut out = Tree::with_root(NodeKind::Terminal(String::new()));
    rebuild(tree, tree.root(), &mut out, None);
    out
}

/// Convert a dependency tree to a constituency tree: one null-tag node per
/// word, the word itself preterminal-wrapped in its sentence slot among
/// its node's children, and each node attached under its head's node.
/// Rejects trees whose in-order traversal would permute the words.
pub fn dep_to_constituency(dep: &DependencyTree) -> Result<Tree, BuildError> {
    dep_to_constituency_at(dep, 0)
}

/// As [`dep_to_constituency`], reporting `sentence` in errors.
pub fn dep_to_constituency_at(dep: &DependencyTree, sentence: usize) -> Result<Tree, BuildError> {
    if dep.is_empty() {
        return Err(BuildError::EmptySentence);
    }

    fn attach(dep: &DependencyTree, pos: usize, tree: &mut Tree, node: NodeId) {
        let mut slots = dep.dependents(pos);
        slots.push(pos);
        slots.sort_unstable();
        for s in slots {
            if s == pos {
                let pre = tree.add_child(node, NodeKind::Preterminal(PRE_TAG.to_string()));
                tree.add_child(pre, NodeKind::Terminal(dep.tokens[s - 1].clone()));
            } else {
                let child = tree.add_child(node, NodeKind::Nonterminal(NULL_TAG.to_string()));
                attach(dep, s, tree, child);
            }
        }
    }

    let mut tree = Tree::with_root(NodeKind::Nonterminal(NULL_TAG.to_string()));
    attach(dep, dep.root(), &mut tree, 0);

    if tree.leaves() != dep.tokens {
        let (dep1, head1, dep2, head2) = find_crossing(dep);
        return Err(BuildError::NonProjective {
            sentence,
            dep1,
            head1,
            dep2,
            head2,
        });
    }
    Ok(tree)
}

/// Locate a pair of strictly interleaving arcs for the error message; the
/// root attachment counts as an arc from virtual position 0.
fn find_crossing(dep: &DependencyTree) -> (usize, usize, usize, usize) {
    let arcs: Vec<(usize, usize)> = (1..=dep.len()).map(|i| (i, dep.heads[i - 1])).collect();
    for (i, &(d1, h1)) in arcs.iter().enumerate() {
        let (a, b) = (d1.min(h1), d1.max(h1));
        for &(d2, h2) in &arcs[i + 1..] {
            let (c, d) = (d2.min(h2), d2.max(h2));
            if (a < c && c < b && b < d) || (c < a && a < d && d < b) {
                return (d1, h1, d2, h2);
            }
        }
    }
    (0, 0, 0, 0)
}

/// Balanced binary tree by recursive halving: leaves for `l == r`, else a
/// null-tag node splitting at `floor((l + r) / 2)`.
pub fn make_tree_v1(words: &[String], l: usize, r: usize) -> Result<Tree, BuildError> {
    if words.is_empty() {
        return Err(BuildError::EmptySentence);
    }
    if l > r || r >= words.len() {
        return Err(BuildError::BadRange {
            l,
            r,
            len: words.len(),
        });
    }
    let leaves: Vec<Tree> = words[l..=r]
        .iter()
        .map(|w| Tree::with_root(NodeKind::Terminal(w.clone())))
        .collect();
    Ok(balance(&leaves, 0, leaves.len() - 1))
}

/// Balanced binary tree over pre-paired words: adjacent word pairs become
/// two-leaf null nodes (a trailing odd word stays a leaf), then the
/// version-1 construction runs over that node list.
pub fn make_tree_v2(words: &[String]) -> Result<Tree, BuildError> {
    if words.is_empty() {
        return Err(BuildError::EmptySentence);
    }
    let mut nodes = Vec::with_capacity(words.len() / 2 + 1);
    let mut i = 0;
    while i < words.len() - 1 {
        let mut pair = Tree::with_root(NodeKind::Nonterminal(NULL_TAG.to_string()));
        pair.add_child(0, NodeKind::Terminal(words[i].clone()));
        pair.add_child(0, NodeKind::Terminal(words[i + 1].clone()));
        nodes.push(pair);
        i += 2;
    }
    if i != words.len() {
        nodes.push(Tree::with_root(NodeKind::Terminal(words[i].clone())));
    }
    Ok(balance(&nodes, 0, nodes.len() - 1))
}

fn balance(nodes: &[Tree], l: usize, r: usize) -> Tree {
    if l == r {
        return nodes[l].clone();
    }
    let m = (l + r) / 2;
    let left = balance(nodes, l, m);
    let right = balance(nodes, m + 1, r);
    let mut out = Tree::with_root(NodeKind::Nonterminal(NULL_TAG.to_string()));
    out.graft(0, &left, left.root());
    out.graft(0, &right, right.root());
    out
}

/// Give every word leaf its own `pre` node over that word's BPE pieces.
/// Used for binary trees, whose topology must keep one slot per word.
pub fn wrap_word_leaves(tree: &Tree, bpe: &BpeModel) -> Tree {
    fn rebuild(tree: &Tree, id: NodeId, out: &mut Tree, parent: NodeId, bpe: &BpeModel) {
        match tree.kind(id) {
            NodeKind::Terminal(w) => {
                let pre = out.add_child(parent, NodeKind::Preterminal(PRE_TAG.to_string()));
                for piece in bpe.apply_word(w) {
                    out.add_child(pre, NodeKind::Terminal(piece));
                }
            }
            kind => {
                let new_id = out.add_child(parent, kind.clone());
                for &c in tree.children(id) {
                    rebuild(tree, c, out, new_id, bpe);
                }
            }
        }
    }

    if let NodeKind::Terminal(w) = tree.kind(tree.root()) {
        let mut out = Tree::with_root(NodeKind::Preterminal(PRE_TAG.to_string()));
        for piece in bpe.apply_word(w) {
            out.add_child(0, NodeKind::Terminal(piece));
        }
        return out;
    }
    let mut out = Tree::with_root(tree.kind(tree.root()).clone());
    for &c in tree.children(tree.root()) {
        rebuild(tree, c, &mut out, 0, bpe);
    }
    out
}

/// Build final training trees (subword leaves, `pre` preterminals, `ROOT`
/// wrapper) for one variant. `BinaryConcat` emits the version-1 and
/// version-2 trees of each sentence adjacently, doubling the example count.
pub fn build_targets(
    targets: &[Vec<String>],
    trees: Option<&[Tree]>,
    deps: Option<&[DependencyTree]>,
    variant: TreeVariant,
    bpe: &BpeModel,
) -> Result<Vec<Tree>, BuildError> {
    match variant {
        TreeVariant::ConstituencyFull | TreeVariant::ConstituencyNull => {
            let trees = trees.ok_or(BuildError::MissingTrees(variant))?;
            if trees.len() != targets.len() {
                return Err(BuildError::CountMismatch {
                    what: "parsed trees",
                    expected: targets.len(),
                    found: trees.len(),
                });
            }
            let mut out = Vec::with_capacity(targets.len());
            for (i, (tree, target)) in trees.iter().zip(targets).enumerate() {
                if &tree.leaves() != target {
                    return Err(BuildError::LeafMismatch {
                        sentence: i + 1,
                        what: "parse tree",
                    });
                }
                let mut built = form_preterminals(tree, bpe);
                if variant == TreeVariant::ConstituencyNull {
                    built = strip_tags(&built);
                }
                out.push(built.wrap_root());
            }
            Ok(out)
        }
        TreeVariant::Dependency => {
            let deps = deps.ok_or(BuildError::MissingDeps(variant))?;
            if deps.len() != targets.len() {
                return Err(BuildError::CountMismatch {
                    what: "dependency trees",
                    expected: targets.len(),
                    found: deps.len(),
                });
            }
            let mut out = Vec::with_capacity(targets.len());
            for (i, (dep, target)) in deps.iter().zip(targets).enumerate() {
                if &dep.tokens != target {
                    return Err(BuildError::LeafMismatch {
                        sentence: i + 1,
                        what: "dependency tree",
                    });
                }
                let converted = dep_to_constituency_at(dep, i + 1)?;
                out.push(form_preterminals(&converted, bpe).wrap_root());
            }
            Ok(out)
        }
        TreeVariant::BinaryConcat => {
            let mut out = Vec::with_capacity(targets.len() * 2);
            for words in targets {
                if words.is_empty() {
                    return Err(BuildError::EmptySentence);
                }
                let v1 = make_tree_v1(words, 0, words.len() - 1)?;
                let v2 = make_tree_v2(words)?;
                out.push(wrap_word_leaves(&v1, bpe).wrap_root());
                out.push(wrap_word_leaves(&v2, bpe).wrap_root());
            }
            Ok(out)
        }
    }
}
