//! Token prefix tree over mention-filled, tokenized relation templates.
//!
//! Every inserted sequence is terminated with the EOS token, so no template is a
//! strict prefix of another and each relation owns exactly one leaf. Nodes with two
//! or more children ("forky" nodes) are the only places where candidate relations
//! diverge and therefore the only places the scorer has to consult the model.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type NodeId = usize;

#[derive(Debug, Clone)]
struct Node {
    token: Option<TokenId>,
    parent: Option<NodeId>,
    depth: usize,
    children: BTreeMap<TokenId, NodeId>,
    relation: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<Node>,
    /// Leaf node per relation, in insertion order.
    leaves: IndexMap<String, NodeId>,
    eos_id: TokenId,
}

/// One branching choice on a relation's root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathDecision {
    pub node: NodeId,
    /// Tokens from the root to `node`: the common prefix of every template below it.
    pub prefix_ids: Vec<TokenId>,
    pub chosen: TokenId,
    /// Children of `node`, ascending.
    pub siblings: Vec<TokenId>,
}

pub const ROOT: NodeId = 0;

impl TokenTrie {
    fn empty(eos_id: TokenId) -> Self {
        TokenTrie {
            nodes: vec![Node {
                token: None,
                parent: None,
                depth: 0,
                children: BTreeMap::new(),
                relation: None,
            }],
            leaves: IndexMap::new(),
            eos_id,
        }
    }

    /// Builds a trie from `(relation, token ids)` pairs; EOS is appended to each sequence.
    pub fn build<I, S, T>(filled: I, eos_id: TokenId) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<[TokenId]>,
    {
        let mut trie = Self::empty(eos_id);
        for (relation, ids) in filled {
            trie.insert(relation.into(), ids.as_ref())?;
        }
        Ok(trie)
    }

    fn insert(&mut self, relation: String, ids: &[TokenId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Validation(format!(
                "empty token sequence for {relation:?}"
            )));
        }
        if ids.contains(&self.eos_id) {
            return Err(Error::Validation(format!(
                "token sequence for {relation:?} contains the EOS id {}",
                self.eos_id
            )));
        }
        if self.leaves.contains_key(&relation) {
            return Err(Error::Validation(format!(
                "relation {relation:?} inserted twice"
            )));
        }
        let mut cur = ROOT;
        for &tok in ids.iter().chain(std::iter::once(&self.eos_id)) {
            cur = match self.nodes[cur].children.get(&tok) {
                Some(&next) => next,
                None => {
                    let id = self.nodes.len();
                    let depth = self.nodes[cur].depth + 1;
                    self.nodes.push(Node {
                        token: Some(tok),
                        parent: Some(cur),
                        depth,
                        children: BTreeMap::new(),
                        relation: None,
                    });
                    self.nodes[cur].children.insert(tok, id);
                    id
                }
            };
        }
        if let Some(existing) = &self.nodes[cur].relation {
            return Err(Error::AmbiguousTemplates {
                first: existing.clone(),
                second: relation,
            });
        }
        self.nodes[cur].relation = Some(relation.clone());
        self.leaves.insert(relation, cur);
        Ok(())
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Relations in insertion order.
    pub fn relations(&self) -> impl ExactSizeIterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.leaves.contains_key(relation)
    }

    /// Child tokens of `node`, ascending.
    pub fn children(&self, node: NodeId) -> impl Iterator<Item = (TokenId, NodeId)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }

    pub fn is_forky(&self, node: NodeId) -> bool {
        self.nodes[node].children.len() >= 2
    }

    /// Forky nodes in depth-first preorder (children visited by ascending token).
    pub fn forky_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(n) = stack.pop() {
            if self.is_forky(n) {
                out.push(n);
            }
            stack.extend(self.nodes[n].children.values().rev());
        }
        out
    }

    /// Token ids on the path from the root to `node` (excluding the root itself).
    pub fn prefix(&self, node: NodeId) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(self.nodes[node].depth);
        let mut cur = node;
        while let (Some(tok), Some(parent)) = (self.nodes[cur].token, self.nodes[cur].parent) {
            ids.push(tok);
            cur = parent;
        }
        ids.reverse();
        ids
    }

    /// Full token path of a relation's template, EOS included.
    pub fn path(&self, relation: &str) -> Result<Vec<TokenId>> {
        let leaf = self.leaf(relation)?;
        Ok(self.prefix(leaf))
    }

    fn leaf(&self, relation: &str) -> Result<NodeId> {
        self.leaves
            .get(relation)
            .copied()
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    /// The forky-node choices along a relation's path, root to leaf.
    pub fn decisions_for(&self, relation: &str) -> Result<Vec<PathDecision>> {
        let leaf = self.leaf(relation)?;
        let mut chain = Vec::with_capacity(self.nodes[leaf].depth);
        let mut cur = leaf;
        while let Some(parent) = self.nodes[cur].parent {
            chain.push((
                parent,
                self.nodes[cur].token.expect("non-root nodes carry a token"),
            ));
            cur = parent;
        }
        chain.reverse();
        let mut prefix = Vec::with_capacity(chain.len());
        let mut out = Vec::new();
        for (node, chosen) in chain {
            if self.is_forky(node) {
                out.push(PathDecision {
                    node,
                    prefix_ids: prefix.clone(),
                    chosen,
                    siblings: self.nodes[node].children.keys().copied().collect(),
                });
            }
            prefix.push(chosen);
        }
        Ok(out)
    }

    /// A new trie holding only the paths of `allowed`, in this trie's relation order.
    pub fn prune<S: AsRef<str>>(&self, allowed: &[S]) -> Result<TokenTrie> {
        if allowed.is_empty() {
            return Err(Error::EmptyAllowedSet);
        }
        let mut keep = HashSet::with_capacity(allowed.len());
        for a in allowed {
            let a = a.as_ref();
            if !self.contains(a) {
                return Err(Error::UnknownRelation(a.to_string()));
            }
            keep.insert(a);
        }
        let mut out = Self::empty(self.eos_id);
        for (rel, &leaf) in &self.leaves {
            if keep.contains(rel.as_str()) {
                let mut ids = self.prefix(leaf);
                ids.pop();
                out.insert(rel.clone(), &ids)?;
            }
        }
        Ok(out)
    }

    /// Number of distinct (forky node, child) pairs, i.e. the candidate probabilities scoring reads.
    pub fn scored_edges(&self) -> usize {
        self.forky_nodes()
            .iter()
            .map(|&n| self.nodes[n].children.len())
            .sum()
    }

    /// One line per node in preorder: `depth<TAB>token<TAB>relation`, with `-` for absent fields.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![ROOT];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let tok = node
                .token
                .map_or_else(|| "-".to_string(), |t| t.to_string());
            let rel = node.relation.as_deref().unwrap_or("-");
            let _ = writeln!(out, "{}\t{}\t{}", node.depth, tok, rel);
            stack.extend(node.children.values().rev());
        }
        out
    }

    fn subtree_eq(&self, a: NodeId, other: &TokenTrie, b: NodeId) -> bool {
        let (na, nb) = (&self.nodes[a], &other.nodes[b]);
        na.relation == nb.relation
            && na.children.len() == nb.children.len()
            && na
                .children
                .iter()
                .all(|(tok, &ca)| match nb.children.get(tok) {
                    Some(&cb) => self.subtree_eq(ca, other, cb),
                    None => false,
                })
    }
}

/// Structural equality: same shape, same edge tokens, same leaf relations. Arena layout is ignored.
impl PartialEq for TokenTrie {
    fn eq(&self, other: &Self) -> bool {
        self.eos_id == other.eos_id && self.subtree_eq(ROOT, other, ROOT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 10;
    const B: TokenId = 11;
    const C: TokenId = 12;
    const D: TokenId = 13;
    const E: TokenId = 1;

    fn abc() -> TokenTrie {
        TokenTrie::build([("ab", vec![A, B]), ("ac", vec![A, C]), ("d", vec![D])], E).unwrap()
    }

    #[test]
    fn hand_enumerated_trie() {
        let t = abc();
        assert_eq!(t.node_count(), 8);
        let forky = t.forky_nodes();
        assert_eq!(forky.len(), 2);
        assert_eq!(forky[0], ROOT);
        assert_eq!(t.prefix(forky[1]), vec![A]);
        assert_eq!(
            t.children(ROOT).map(|(tok, _)| tok).collect::<Vec<_>>(),
            vec![A, D]
        );
        assert_eq!(
            t.children(forky[1]).map(|(tok, _)| tok).collect::<Vec<_>>(),
            vec![B, C]
        );
        assert_eq!(t.scored_edges(), 4);
    }

    #[test]
    fn decisions_follow_root_to_leaf_order() {
        let t = abc();
        let d = t.decisions_for("ab").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(
            (d[0].node, d[0].chosen, d[0].siblings.clone()),
            (ROOT, A, vec![A, D])
        );
        assert!(d[0].prefix_ids.is_empty());
        assert_eq!(
            (d[1].chosen, d[1].siblings.clone(), d[1].prefix_ids.clone()),
            (B, vec![B, C], vec![A])
        );
        assert_eq!(t.decisions_for("d").unwrap().len(), 1);
        assert!(matches!(
            t.decisions_for("zz"),
            Err(Error::UnknownRelation(_))
        ));
    }

    #[test]
    fn single_template_has_no_forky_nodes() {
        let t = TokenTrie::build([("r", vec![5, 6, 7])], E).unwrap();
        assert!(t.forky_nodes().is_empty());
        assert!(t.decisions_for("r").unwrap().is_empty());
        assert_eq!(t.node_count(), 5);
    }

    #[test]
    fn shared_head_diverges_at_one_node() {
        // "{subj} was born" / "{subj} was founded" / "{subj} has": the second forky node's prefix is "{subj} was".
        let (subj, was, born, founded, has) = (100, 101, 102, 103, 104);
        let t = TokenTrie::build(
            [
                ("r1", vec![subj, was, born]),
                ("r2", vec![subj, was, founded]),
                ("r3", vec![subj, has]),
            ],
            E,
        )
        .unwrap();
        let forky = t.forky_nodes();
        assert_eq!(forky.len(), 2);
        assert_eq!(t.prefix(forky[0]), vec![subj]);
        assert_eq!(t.prefix(forky[1]), vec![subj, was]);
    }

    #[test]
    fn prefix_templates_stay_distinct_thanks_to_eos() {
        let t = TokenTrie::build([("short", vec![A]), ("long", vec![A, B])], E).unwrap();
        let d = t.decisions_for("short").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].chosen, E);
    }

    #[test]
    fn build_errors() {
        let dup = TokenTrie::build([("x", vec![A]), ("y", vec![A])], E).unwrap_err();
        assert!(
            matches!(dup, Error::AmbiguousTemplates { ref first, ref second } if first == "x" && second == "y")
        );
        assert!(TokenTrie::build([("x", Vec::<TokenId>::new())], E).is_err());
        assert!(TokenTrie::build([("x", vec![A, E, B])], E).is_err());
    }

    #[test]
    fn pruning() {
        let t = abc();
        assert_eq!(t.prune(&["ab", "ac", "d"]).unwrap(), t);
        let one = t.prune(&["ac"]).unwrap();
        assert!(one.forky_nodes().is_empty());
        assert_eq!(one.relations().collect::<Vec<_>>(), vec!["ac"]);
        assert_eq!(one, TokenTrie::build([("ac", vec![A, C])], E).unwrap());
        assert_eq!(t.node_count(), 8, "original untouched");
        assert!(matches!(t.prune::<&str>(&[]), Err(Error::EmptyAllowedSet)));
        assert!(matches!(t.prune(&["nope"]), Err(Error::UnknownRelation(_))));
    }

    #[test]
    fn render_is_stable() {
        let expected =
            "0\t-\t-\n1\t10\t-\n2\t11\t-\n3\t1\tab\n2\t12\t-\n3\t1\tac\n1\t13\t-\n2\t1\td\n";
        assert_eq!(abc().render(), expected);
    }
}
