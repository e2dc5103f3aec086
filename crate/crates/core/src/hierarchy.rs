//! Rooted label trees and label-set algebra.
//!
//! A [`Hierarchy`] is immutable once built. Node ids are dense `usize`
//! values with the root always at `0`; every other node keeps the order in
//! which it first appeared in the taxonomy source. Label sets never contain
//! the root: a sample is always implicitly "under" the root, so the root
//! carries no information and is excluded from ancestor chains as well.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node identifier. The root is always `0`.
pub type NodeId = usize;

/// Errors raised while building or querying a [`Hierarchy`].
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum HierarchyError {
    /// The taxonomy contained no edge.
    #[error("taxonomy is empty")]
    EmptyInput,
    /// The same parent/child edge was listed twice.
    #[error("line {line}: duplicate edge {parent} -> {child}")]
    DuplicateEdge {
        line: usize,
        parent: String,
        child: String,
    },
    /// A label was listed as the child of two different parents.
    #[error(
        "line {line}: label {label} already has parent {first}, cannot also be a child of {second}"
    )]
    MultipleParents {
        line: usize,
        label: String,
        first: String,
        second: String,
    },
    /// The parent relation loops back on itself, or part of the graph is
    /// unreachable from the root.
    #[error("cycle or unreachable component involving label {label}")]
    Cycle { label: String },
    /// More than one label is never listed as a child.
    #[error("multiple roots: {labels:?}")]
    MultipleRoots { labels: Vec<String> },
    /// An empty label field (e.g. a doubled tab).
    #[error("line {line}: empty label field")]
    EmptyLabel { line: usize },
    /// Two nodes share a name.
    #[error("duplicate label name {0:?}")]
    DuplicateName(String),
    /// A node has an empty name.
    #[error("node {0} has an empty name")]
    EmptyName(NodeId),
    /// A node id outside the tree.
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    /// A label name absent from the tree.
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    /// The root was used where a label (non-root node) is required.
    #[error("the root has no label ancestry")]
    RootHasNoLabelAncestry,
}

/// A set of non-root node ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(BTreeSet<NodeId>);

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, y: NodeId) -> bool {
        self.0.insert(y)
    }

    pub fn contains(&self, y: NodeId) -> bool {
        self.0.contains(&y)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Members in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_set(&self) -> &BTreeSet<NodeId> {
        &self.0
    }

    pub fn intersection_len(&self, other: &LabelSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn intersection(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.intersection(&other.0).copied().collect())
    }

    pub fn difference(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.difference(&other.0).copied().collect())
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<NodeId> for LabelSet {
    fn from_iter<I: IntoIterator<Item = NodeId>>(iter: I) -> Self {
        LabelSet(iter.into_iter().collect())
    }
}

impl<const N: usize> From<[NodeId; N]> for LabelSet {
    fn from(ids: [NodeId; N]) -> Self {
        ids.into_iter().collect()
    }
}

/// An immutable rooted tree over named labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    names: Vec<String>,
    ids: HashMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    depth: Vec<usize>,
    leaf_ids: Vec<NodeId>,
    preorder: Vec<NodeId>,
}

pub const ROOT: NodeId = 0;

impl Hierarchy {
    /// Builds a tree from names and a parent vector. `parent[0]` must be
    /// `None` (the root) and every other entry `Some`; children keep the
    /// order of their ids.
    pub fn from_parents(
        names: Vec<String>,
        parent: Vec<Option<NodeId>>,
    ) -> Result<Self, HierarchyError> {
        let n = names.len();
        if n < 2 || parent.len() != n {
            return Err(HierarchyError::EmptyInput);
        }
        let mut children = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (y, p) in parent.iter().enumerate() {
            match *p {
                None => roots.push(y),
                Some(p) if p >= n => return Err(HierarchyError::UnknownNode(p)),
                Some(p) if p == y => {
                    return Err(HierarchyError::Cycle {
                        label: names[y].clone(),
                    })
                }
                Some(p) => children[p].push(y),
            }
        }
        if roots.len() > 1 || roots.first() != Some(&ROOT) {
            return Err(HierarchyError::MultipleRoots {
                labels: roots.iter().map(|&r| names[r].clone()).collect(),
            });
        }
        let mut ids = HashMap::with_capacity(n);
        for (y, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(HierarchyError::EmptyName(y));
            }
            if ids.insert(name.clone(), y).is_some() {
                return Err(HierarchyError::DuplicateName(name.clone()));
            }
        }
        Self::finish(names, ids, parent, children)
    }

    fn finish(
        names: Vec<String>,
        ids: HashMap<String, NodeId>,
        parent: Vec<Option<NodeId>>,
        children: Vec<Vec<NodeId>>,
    ) -> Result<Self, HierarchyError> {
        let n = names.len();
        let mut depth = vec![usize::MAX; n];
        let mut preorder = Vec::with_capacity(n);
        let mut stack = vec![ROOT];
        depth[ROOT] = 0;
        while let Some(y) = stack.pop() {
            preorder.push(y);
            for &c in children[y].iter().rev() {
                if depth[c] != usize::MAX {
                    return Err(HierarchyError::Cycle {
                        label: names[c].clone(),
                    });
                }
                depth[c] = depth[y] + 1;
                stack.push(c);
            }
        }
        if let Some(y) = depth.iter().position(|&d| d == usize::MAX) {
            return Err(HierarchyError::Cycle {
                label: names[y].clone(),
            });
        }
        let leaf_ids = (0..n).filter(|&y| children[y].is_empty()).collect();
        Ok(Hierarchy {
            names,
            ids,
            parent,
            children,
            depth,
            leaf_ids,
            preorder,
        })
    }

    /// Number of nodes, root included.
    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    /// Number of labels, i.e. non-root nodes. Dense per-label vectors
    /// (logits, probability tables) have this length and store node `y`
    /// at index `y - 1`.
    pub fn label_count(&self) -> usize {
        self.names.len() - 1
    }

    pub fn root(&self) -> NodeId {
        ROOT
    }

    pub fn contains(&self, y: NodeId) -> bool {
        y < self.names.len()
    }

    fn check(&self, y: NodeId) -> Result<(), HierarchyError> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(HierarchyError::UnknownNode(y))
        }
    }

    fn check_label(&self, y: NodeId) -> Result<(), HierarchyError> {
        self.check(y)?;
        if y == ROOT {
            Err(HierarchyError::RootHasNoLabelAncestry)
        } else {
            Ok(())
        }
    }

    /// Name of node `y`. Panics if `y` is out of range.
    pub fn name(&self, y: NodeId) -> &str {
        &self.names[y]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Result<NodeId, HierarchyError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| HierarchyError::UnknownLabel(name.to_owned()))
    }

    /// Parent of `y`; `None` for the root. Panics if `y` is out of range.
    pub fn parent(&self, y: NodeId) -> Option<NodeId> {
        self.parent[y]
    }

    /// Children of `y` in source order. Panics if `y` is out of range.
    pub fn children(&self, y: NodeId) -> &[NodeId] {
        &self.children[y]
    }

    pub fn depth(&self, y: NodeId) -> Result<usize, HierarchyError> {
        self.check(y)?;
        Ok(self.depth[y])
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, y: NodeId) -> bool {
        self.children[y].is_empty()
    }

    /// All leaves in ascending id order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaf_ids
    }

    /// Nodes in depth-first preorder starting from the root; every parent
    /// precedes its children.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    /// Nodes with at least one child, in preorder. Each one heads a
    /// sibling group.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder
            .iter()
            .copied()
            .filter(|&y| !self.children[y].is_empty())
    }

    /// Non-root node ids, ascending.
    pub fn labels(&self) -> std::ops::Range<NodeId> {
        1..self.names.len()
    }

    /// Inclusive ancestor chain `[y, parent(y), ...]`, stopping before the
    /// root.
    pub fn ancestors(&self, y: NodeId) -> Result<Vec<NodeId>, HierarchyError> {
        self.check_label(y)?;
        Ok(self.ancestors_unchecked(y))
    }

    pub(crate) fn ancestors_unchecked(&self, mut y: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::with_capacity(self.depth[y]);
        while y != ROOT {
            chain.push(y);
            y = self.parent[y].expect("non-root node has a parent");
        }
        chain
    }

    /// Inclusive descendant set of `y`.
    pub fn descendants(&self, y: NodeId) -> Result<BTreeSet<NodeId>, HierarchyError> {
        self.check(y)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![y];
        while let Some(z) = stack.pop() {
            out.insert(z);
            stack.extend_from_slice(&self.children[z]);
        }
        Ok(out)
    }

    /// Leaves among the inclusive descendants of `y`.
    pub fn leaves_under(&self, y: NodeId) -> Result<BTreeSet<NodeId>, HierarchyError> {
        Ok(self
            .descendants(y)?
            .into_iter()
            .filter(|&z| self.is_leaf(z))
            .collect())
    }

    /// Lowest common ancestor, possibly the root. A node is its own
    /// ancestor here, so `lca(y, y) == y`.
    pub fn lca(&self, a: NodeId, b: NodeId) -> Result<NodeId, HierarchyError> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.lca_unchecked(a, b))
    }

    pub(crate) fn lca_unchecked(&self, mut a: NodeId, mut b: NodeId) -> NodeId {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }

    /// True iff every member's ancestors are members too.
    pub fn is_coherent(&self, s: &LabelSet) -> bool {
        s.iter().all(|y| match self.parent[y] {
            Some(p) => p == ROOT || s.contains(p),
            None => false,
        })
    }

    /// True iff `s` is exactly the ancestor chain of some leaf.
    pub fn is_single_path_leaf(&self, s: &LabelSet) -> bool {
        self.single_path_leaf(s).is_some()
    }

    /// The leaf whose ancestor chain equals `s`, if any.
    pub fn single_path_leaf(&self, s: &LabelSet) -> Option<NodeId> {
        // the deepest member must be a leaf and its chain must be all of `s`
        let deepest = s.iter().max_by_key(|&y| (self.depth[y], y))?;
        if !self.is_leaf(deepest) || self.depth[deepest] != s.len() {
            return None;
        }
        let mut y = deepest;
        while y != ROOT {
            if !s.contains(y) {
                return None;
            }
            y = self.parent[y].unwrap();
        }
        Some(deepest)
    }

    /// Union of the inclusive ancestor chains of every member.
    pub fn augment(&self, s: &LabelSet) -> LabelSet {
        let mut out = s.clone();
        for y in s.iter() {
            let mut z = y;
            while let Some(p) = self.parent[z] {
                if p == ROOT || !out.insert(p) {
                    break;
                }
                z = p;
            }
        }
        out
    }

    /// Resolves label names into a set, rejecting unknown names and the
    /// root.
    pub fn label_set_from_names<S: AsRef<str>>(
        &self,
        names: &[S],
    ) -> Result<LabelSet, HierarchyError> {
        names
            .iter()
            .map(|n| {
                let y = self.id(n.as_ref())?;
                self.check_label(y)?;
                Ok(y)
            })
            .collect()
    }

    /// Complete tree where every node at depth `k` has `branching[k]`
    /// children. Nodes are numbered breadth-first; the root is `"root"` and
    /// other names are dotted child positions such as `"0.3.1"`.
    pub fn balanced(branching: &[usize]) -> Result<Self, HierarchyError> {
        if branching.is_empty() || branching.contains(&0) {
            return Err(HierarchyError::EmptyInput);
        }
        let mut names = vec!["root".to_owned()];
        let mut parent = vec![None];
        let mut frontier = vec![ROOT];
        for &b in branching {
            let mut next = Vec::with_capacity(frontier.len() * b);
            for &p in &frontier {
                for i in 0..b {
                    let name = if p == ROOT {
                        i.to_string()
                    } else {
                        format!("{}.{i}", names[p])
                    };
                    next.push(names.len());
                    names.push(name);
                    parent.push(Some(p));
                }
            }
            frontier = next;
        }
        Self::from_parents(names, parent)
    }

    /// Number of nodes at each depth `1..=max_depth`.
    pub fn nodes_per_level(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_depth()];
        for y in self.labels() {
            counts[self.depth[y] - 1] += 1;
        }
        counts
    }

    /// Undirected edge distances from a set of source nodes.
    pub fn distances_from(&self, sources: impl IntoIterator<Item = NodeId>) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        for s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(y) = queue.pop_front() {
            let next = self.parent[y]
                .into_iter()
                .chain(self.children[y].iter().copied());
            for z in next {
                if dist[z] == usize::MAX {
                    dist[z] = dist[y] + 1;
                    queue.push_back(z);
                }
            }
        }
        dist
    }

    /// Longest undirected path, in edges.
    pub fn diameter(&self) -> usize {
        let from_root = self.distances_from([ROOT]);
        let far = (0..self.node_count())
            .max_by_key(|&y| (from_root[y], std::cmp::Reverse(y)))
            .unwrap_or(ROOT);
        self.distances_from([far]).into_iter().max().unwrap_or(0)
    }

    /// Serializes back to the tab-separated adjacency format, one line per
    /// internal node in preorder.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in self.internal_nodes() {
            out.push_str(&self.names[p]);
            for &c in &self.children[p] {
                out.push('\t');
                out.push_str(&self.names[c]);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Hierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

impl std::str::FromStr for Hierarchy {
    type Err = HierarchyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_taxonomy(s)
    }
}

/// Parses a taxonomy in tab-separated adjacency form: each nonempty line is
/// `parent<TAB>child1<TAB>child2...`. The root is the only name never listed
/// as a child. A parent may appear on several lines; its children
/// accumulate in file order.
pub fn parse_taxonomy(text: &str) -> Result<Hierarchy, HierarchyError> {
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    // (parent, line) per name in first-appearance order
    let mut parent_of: Vec<Option<(usize, usize)>> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut edges = 0usize;

    let mut intern = |name: &str,
                      order: &mut Vec<String>,
                      parent_of: &mut Vec<Option<(usize, usize)>>,
                      children: &mut Vec<Vec<usize>>| {
        *index.entry(name.to_owned()).or_insert_with(|| {
            order.push(name.to_owned());
            parent_of.push(None);
            children.push(Vec::new());
            order.len() - 1
        })
    };

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parent_name = fields.next().unwrap_or_default();
        if parent_name.is_empty() {
            return Err(HierarchyError::EmptyLabel { line: line_no });
        }
        let p = intern(parent_name, &mut order, &mut parent_of, &mut children);
        for child_name in fields {
            if child_name.is_empty() {
                return Err(HierarchyError::EmptyLabel { line: line_no });
            }
            let c = intern(child_name, &mut order, &mut parent_of, &mut children);
            if c == p {
                return Err(HierarchyError::Cycle {
                    label: child_name.to_owned(),
                });
            }
            match parent_of[c] {
                Some((q, _)) if q == p => {
                    return Err(HierarchyError::DuplicateEdge {
                        line: line_no,
                        parent: parent_name.to_owned(),
                        child: child_name.to_owned(),
                    })
                }
                Some((q, _)) => {
                    return Err(HierarchyError::MultipleParents {
                        line: line_no,
                        label: child_name.to_owned(),
                        first: order[q].clone(),
                        second: parent_name.to_owned(),
                    })
                }
                None => {
                    parent_of[c] = Some((p, line_no));
                    children[p].push(c);
                    edges += 1;
                }
            }
        }
    }

    if edges == 0 {
        return Err(HierarchyError::EmptyInput);
    }
    let roots: Vec<usize> = (0..order.len())
        .filter(|&y| parent_of[y].is_none())
        .collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => {
            return Err(HierarchyError::Cycle {
                label: order[0].clone(),
            })
        }
        _ => {
            return Err(HierarchyError::MultipleRoots {
                labels: roots.iter().map(|&r| order[r].clone()).collect(),
            })
        }
    };

    // root takes id 0, everything else keeps first-appearance order
    let mut remap = vec![0; order.len()];
    let mut next = 1;
    for (old, slot) in remap.iter_mut().enumerate() {
        if old != root {
            *slot = next;
            next += 1;
        }
    }
    let n = order.len();
    let mut names = vec![String::new(); n];
    let mut parent = vec![None; n];
    let mut kids = vec![Vec::new(); n];
    for old in 0..n {
        let new = remap[old];
        names[new] = std::mem::take(&mut order[old]);
        parent[new] = parent_of[old].map(|(p, _)| remap[p]);
        kids[new] = children[old].iter().map(|&c| remap[c]).collect();
    }
    let ids = names
        .iter()
        .enumerate()
        .map(|(y, name)| (name.clone(), y))
        .collect();
    Hierarchy::finish(names, ids, parent, kids)
}


#[cfg(test)]
mod tests {
    use super::fixtures::{ids, t5};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_small_tree() {
        let h = parse_taxonomy("Root\tA\tB\nA\tC").unwrap();
        assert_eq!(h.node_count(), 4);
        assert_eq!(h.name(0), "Root");
        let leaves: Vec<&str> = h.leaves().iter().map(|&y| h.name(y)).collect();
        assert_eq!(leaves, ["B", "C"]);
        assert_eq!(h.depth(h.id("C").unwrap()).unwrap(), 2);
    }

    #[test]
    fn balanced_trees() {
        let h = Hierarchy::balanced(&[2, 4, 5]).unwrap();
        assert_eq!(h.nodes_per_level(), vec![2, 8, 40]);
        assert_eq!(h.leaves().len(), 40);
        assert_eq!(h.name(1), "0");
        assert_eq!(h.id("1.3.4").unwrap(), h.node_count() - 1);
        assert_eq!(Hierarchy::balanced(&[]), Err(HierarchyError::EmptyInput));
        assert_eq!(
            Hierarchy::balanced(&[2, 0]),
            Err(HierarchyError::EmptyInput)
        );
    }

    #[test]
    fn t5_structure() {
        let h = t5();
        assert_eq!(h.node_count(), 6);
        assert_eq!(h.leaves().len(), 4);
        let leaves: Vec<&str> = h.leaves().iter().map(|&y| h.name(y)).collect();
        assert_eq!(leaves, ["2", "3", "4", "5"]);
        assert_eq!(h.nodes_per_level(), vec![2, 3]);
        // ids coincide with names on this fixture
        for y in h.labels() {
            assert_eq!(h.name(y), y.to_string());
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_taxonomy("Root\tA\nB\tA"),
            Err(HierarchyError::MultipleParents { line: 2, ref label, .. }) if label == "A"
        ));
        assert!(matches!(
            parse_taxonomy("Root\tA\nRoot\tA"),
            Err(HierarchyError::DuplicateEdge { line: 2, .. })
        ));
        assert_eq!(parse_taxonomy(""), Err(HierarchyError::EmptyInput));
        assert_eq!(
            parse_taxonomy("\n\nRoot\n"),
            Err(HierarchyError::EmptyInput)
        );
        assert!(matches!(
            parse_taxonomy("Root\tA\nB\tC"),
            Err(HierarchyError::MultipleRoots { .. })
        ));
        assert!(matches!(
            parse_taxonomy("Root\tA\nB\tC\nC\tB"),
            Err(HierarchyError::Cycle { .. })
        ));
        assert!(matches!(
            parse_taxonomy("A\tA"),
            Err(HierarchyError::Cycle { .. })
        ));
        assert!(matches!(
            parse_taxonomy("Root\t\tA"),
            Err(HierarchyError::EmptyLabel { line: 1 })
        ));
    }

    #[test]
    fn root_gets_id_zero_even_when_listed_late() {
        let h = parse_taxonomy("A\tC\nRoot\tA\tB").unwrap();
        assert_eq!(h.name(0), "Root");
        assert_eq!(h.name(1), "A");
        assert_eq!(h.name(2), "C");
        assert_eq!(h.name(3), "B");
        assert_eq!(h.children(0), &[1, 3]);
    }

    #[test]
    fn ancestors_are_inclusive_and_root_free() {
        let h = t5();
        assert_eq!(h.ancestors(3).unwrap(), vec![3, 1]);
        assert_eq!(h.ancestors(2).unwrap(), vec![2]);
        assert_eq!(h.ancestors(0), Err(HierarchyError::RootHasNoLabelAncestry));
        assert_eq!(h.ancestors(9), Err(HierarchyError::UnknownNode(9)));

        let chain = parse_taxonomy("r\ta\na\tb\nb\tc").unwrap();
        let c = chain.id("c").unwrap();
        let names: Vec<&str> = chain
            .ancestors(c)
            .unwrap()
            .into_iter()
            .map(|y| chain.name(y))
            .collect();
        assert_eq!(names, ["c", "b", "a"]);
    }

    #[test]
    fn descendants_leaves_and_lca() {
        let h = t5();
        assert_eq!(h.descendants(1).unwrap(), BTreeSet::from([1, 3, 4, 5]));
        assert_eq!(h.leaves_under(0).unwrap(), BTreeSet::from([2, 3, 4, 5]));
        assert_eq!(h.lca(3, 4).unwrap(), 1);
        assert_eq!(h.lca(3, 2).unwrap(), 0);
        assert_eq!(h.lca(3, 1).unwrap(), 1);
        assert_eq!(h.lca(3, 17), Err(HierarchyError::UnknownNode(17)));
    }

    #[test]
    fn coherence_and_single_path() {
        let h = t5();
        assert!(h.is_coherent(&ids(&h, &["1", "5"])));
        assert!(!h.is_coherent(&ids(&h, &["5"])));
        assert!(h.is_coherent(&LabelSet::new()));

        assert!(h.is_single_path_leaf(&ids(&h, &["1", "5"])));
        assert!(!h.is_single_path_leaf(&ids(&h, &["1", "3", "5"])));
        assert!(!h.is_single_path_leaf(&ids(&h, &["1"])));
        assert!(h.is_single_path_leaf(&ids(&h, &["2"])));
        assert!(!h.is_single_path_leaf(&LabelSet::new()));
    }

    #[test]
    fn augmentation() {
        let h = t5();
        assert_eq!(h.augment(&ids(&h, &["5"])), ids(&h, &["1", "5"]));
        assert_eq!(h.augment(&ids(&h, &["1", "5"])), ids(&h, &["1", "5"]));
        assert_eq!(h.augment(&ids(&h, &["3", "5"])), ids(&h, &["1", "3", "5"]));
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let h = t5();
        assert_eq!(
            h.label_set_from_names(&["7"]),
            Err(HierarchyError::UnknownLabel("7".into()))
        );
        assert_eq!(
            h.label_set_from_names(&["r"]),
            Err(HierarchyError::RootHasNoLabelAncestry)
        );
    }

    #[test]
    fn diameter_of_t5() {
        assert_eq!(t5().diameter(), 3);
    }

    fn arb_tree() -> impl Strategy<Value = Hierarchy> {
        (2usize..30)
            .prop_flat_map(|n| (1..n).map(|i| 0..i).collect::<Vec<_>>())
            .prop_map(|ps| {
                let n = ps.len() + 1;
                let names = (0..n).map(|y| format!("n{y}")).collect();
                let parent = std::iter::once(None)
                    .chain(ps.into_iter().map(Some))
                    .collect();
                Hierarchy::from_parents(names, parent).unwrap()
            })
    }

    fn arb_tree_and_set() -> impl Strategy<Value = (Hierarchy, LabelSet)> {
        arb_tree().prop_flat_map(|h| {
            let n = h.label_count();
            (Just(h), proptest::collection::btree_set(1..=n, 0..=n))
                .prop_map(|(h, s)| (h, s.into_iter().collect()))
        })
    }

    proptest! {
        #[test]
        fn augment_is_coherent_and_idempotent((h, s) in arb_tree_and_set()) {
            let a = h.augment(&s);
            prop_assert!(h.is_coherent(&a));
            prop_assert!(s.is_subset(&a));
            prop_assert_eq!(h.augment(&a), a);
        }

        #[test]
        fn ancestor_chain_length_is_depth(h in arb_tree()) {
            for y in h.labels() {
                let chain = h.ancestors(y).unwrap();
                prop_assert_eq!(chain.len(), h.depth(y).unwrap());
                prop_assert_eq!(h.depth(*chain.last().unwrap()).unwrap(), 1);
            }
        }

        #[test]
        fn single_path_sets_have_leaf_depth(h in arb_tree()) {
            for &l in h.leaves() {
                let s: LabelSet = h.ancestors(l).unwrap().into_iter().collect();
                prop_assert!(h.is_single_path_leaf(&s));
                prop_assert_eq!(s.len(), h.depth(l).unwrap());
            }
        }

        #[test]
        fn tsv_round_trip_preserves_structure(h in arb_tree()) {
            let back = parse_taxonomy(&h.to_tsv()).unwrap();
            prop_assert_eq!(back.node_count(), h.node_count());
            for y in 0..h.node_count() {
                let z = back.id(h.name(y)).unwrap();
                let parent = |t: &Hierarchy, v: NodeId| t.parent(v).map(|p| t.name(p).to_owned());
                prop_assert_eq!(parent(&h, y), parent(&back, z));
                let kids = |t: &Hierarchy, v: NodeId| -> Vec<String> {
                    t.children(v).iter().map(|&c| t.name(c).to_owned()).collect()
                };
                prop_assert_eq!(kids(&h, y), kids(&back, z));
            }
        }

        #[test]
        fn lca_is_deepest_common_chain_element(h in arb_tree(), a in 0usize..64, b in 0usize..64) {
            let a = a % h.node_count();
            let b = b % h.node_count();
            let chain = |mut y: NodeId| {
                let mut c = vec![y];
                while let Some(p) = h.parent(y) { c.push(p); y = p; }
                c
            };
            let ca = chain(a);
            let cb = chain(b);
            let brute = ca
                .iter()
                .filter(|y| cb.contains(y))
                .max_by_key(|&&y| h.depth(y).unwrap())
                .copied()
                .unwrap();
            prop_assert_eq!(h.lca(a, b).unwrap(), brute);
        }
    }
}
