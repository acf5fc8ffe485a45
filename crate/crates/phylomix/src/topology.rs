//! Rooted and unrooted leaf-labeled binary topologies and their
//! combinatorial operations: re-rooting, splits, PSPs, subsplit
//! decomposition and exhaustive enumeration for small taxon counts.
//!
//! Unrooted trees are stored pseudo-rooted at an internal node of degree 3;
//! rooted trees are strictly binary. Edges are named by the split they
//! induce, which is stable across re-rooting. The two-taxon tree (a single
//! edge) is admitted as a degenerate unrooted shape for likelihood-level
//! operations; rooting and enumeration require at least three taxa.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::math::unrooted_count;
use crate::taxa::{canonical_subsplit, Clade, Psp, Split, Subsplit, Taxa};

/// Recursive tree shape used to construct topologies.
#[derive(Debug, Clone)]
pub enum TreeSpec {
    Leaf(usize),
    Internal(Vec<TreeSpec>),
}

impl TreeSpec {
    pub fn node(children: Vec<TreeSpec>) -> Self {
        TreeSpec::Internal(children)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) parent: Option<usize>,
    pub(crate) children: Vec<usize>,
    pub(crate) taxon: Option<usize>,
}

/// The conditioning context of an SBN conditional table: the clade being
/// partitioned together with its sister clade in the parent subsplit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParentKey {
    pub clade: Clade,
    pub sister: Clade,
}

impl ParentKey {
    pub fn encode(&self) -> String {
        format!("{}~{}", self.clade.bitstring(), self.sister.bitstring())
    }

    pub fn decode(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('~')
            .ok_or_else(|| Error::InvalidClade(format!("missing '~' in parent key {s:?}")))?;
        Ok(Self { clade: Clade::from_bitstring(a)?, sister: Clade::from_bitstring(b)? })
    }
}

impl fmt::Display for ParentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.encode())
    }
}

/// An edge of an unrooted topology together with the PSPs neighboring its
/// split, in a deterministic order.
#[derive(Debug, Clone)]
pub struct EdgeContext {
    pub split: Split,
    pub psps: Vec<Psp>,
}

/// Branch lengths keyed by edge split, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchLengths {
    map: BTreeMap<Split, f64>,
}

impl Default for BranchLengths {
    fn default() -> Self {
        Self::new()
    }
}

impl BranchLengths {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, split: Split, length: f64) -> Result<()> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Domain(format!(
                "branch length must be finite and positive, got {length}"
            )));
        }
        self.map.insert(split, length);
        Ok(())
    }

    pub fn get(&self, split: &Split) -> Option<f64> {
        self.map.get(split).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Split, f64)> {
        self.map.iter().map(|(s, &l)| (s, l))
    }

    /// Every edge of `t` must carry exactly one strictly positive entry.
    pub fn validate_for(&self, t: &Topology) -> Result<()> {
        for ctx in t.edge_contexts()? {
            match self.get(&ctx.split) {
                Some(l) if l > 0.0 => {}
                Some(l) => {
                    return Err(Error::Domain(format!(
                        "non-positive branch length {l} on {}",
                        ctx.split
                    )))
                }
                None => {
                    return Err(Error::MissingEdge(format!("no branch length for {}", ctx.split)))
                }
            }
        }
        Ok(())
    }
}

/// Canonical identity of a topology: unrooted trees compare by their sorted
/// nontrivial split set, rooted trees by their subsplit decomposition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopologyKey {
    rooted: bool,
    n_taxa: usize,
    parts: Vec<String>,
}

/// A leaf-labeled binary tree, rooted or unrooted.
#[derive(Debug, Clone)]
pub struct Topology {
    taxa: Taxa,
    nodes: Vec<Node>,
    root: usize,
    rooted: bool,
}

impl Topology {
    fn build_spec(nodes: &mut Vec<Node>, spec: &TreeSpec, parent: Option<usize>) -> usize {
        let idx = nodes.len();
        match spec {
            TreeSpec::Leaf(t) => {
                nodes.push(Node { parent, children: Vec::new(), taxon: Some(*t) });
            }
            TreeSpec::Internal(children) => {
                nodes.push(Node { parent, children: Vec::new(), taxon: None });
                for child in children {
                    let c = Self::build_spec(nodes, child, Some(idx));
                    nodes[idx].children.push(c);
                }
            }
        }
        idx
    }

    pub fn rooted_from_spec(taxa: Taxa, spec: &TreeSpec) -> Result<Self> {
        let mut nodes = Vec::new();
        let root = Self::build_spec(&mut nodes, spec, None);
        let t = Self { taxa, nodes, root, rooted: true };
        t.validate()?;
        Ok(t)
    }

    pub fn unrooted_from_spec(taxa: Taxa, spec: &TreeSpec) -> Result<Self> {
        let n = taxa.len();
        if n == 2 {
            // Degenerate single-edge tree: stored as leaf-with-child.
            if let TreeSpec::Internal(cs) = spec {
                if let [TreeSpec::Leaf(a), TreeSpec::Leaf(b)] = cs.as_slice() {
                    let nodes = vec![
                        Node { parent: None, children: vec![1], taxon: Some(*a) },
                        Node { parent: Some(0), children: Vec::new(), taxon: Some(*b) },
                    ];
                    let t = Self { taxa, nodes, root: 0, rooted: false };
                    t.validate()?;
                    return Ok(t);
                }
            }
            return Err(Error::UnsupportedSize(
                "two-taxon unrooted tree must be a pair of leaves".into(),
            ));
        }
        let mut nodes = Vec::new();
        let root = Self::build_spec(&mut nodes, spec, None);
        let t = Self { taxa, nodes, root, rooted: false };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let n = self.taxa.len();
        let mut seen = vec![false; n];
        let mut n_leaves = 0usize;
        let mut visited = 0usize;
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            visited += 1;
            let node = &self.nodes[v];
            for &c in &node.children {
                if self.nodes[c].parent != Some(v) {
                    return Err(Error::Contract("inconsistent parent pointer".into()));
                }
                stack.push(c);
            }
            match node.taxon {
                Some(t) => {
                    if t >= n {
                        return Err(Error::InvalidClade(format!("taxon index {t} out of range")));
                    }
                    if seen[t] {
                        return Err(Error::DuplicateTaxon(self.taxa.name(t).to_string()));
                    }
                    seen[t] = true;
                    n_leaves += 1;
                    let degenerate_root = !self.rooted && n == 2 && v == self.root;
                    if !node.children.is_empty() && !degenerate_root {
                        return Err(Error::Contract("leaf with children".into()));
                    }
                }
                None => {
                    let want = if v == self.root && !self.rooted { 3 } else { 2 };
                    if node.children.len() != want {
                        return Err(Error::Contract(format!(
                            "internal node of arity {} (expected {want})",
                            node.children.len()
                        )));
                    }
                }
            }
        }
        if visited != self.nodes.len() {
            return Err(Error::Contract("unreachable nodes in topology".into()));
        }
        if n_leaves != n || !seen.iter().all(|&s| s) {
            return Err(Error::TaxonSet(format!("tree has {n_leaves} leaves, taxon set has {n}")));
        }
        if self.rooted {
            if n < 1 {
                return Err(Error::UnsupportedSize("rooted tree needs >= 1 taxon".into()));
            }
        } else if n < 2 {
            return Err(Error::UnsupportedSize("unrooted tree needs >= 2 taxa".into()));
        }
        Ok(())
    }

    pub fn taxa(&self) -> &Taxa {
        &self.taxa
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn is_rooted(&self) -> bool {
        self.rooted
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent_of(&self, v: usize) -> Option<usize> {
        self.nodes[v].parent
    }

    pub fn children_of(&self, v: usize) -> &[usize] {
        &self.nodes[v].children
    }

    pub fn taxon_of(&self, v: usize) -> Option<usize> {
        self.nodes[v].taxon
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.nodes[v].taxon.is_some() && self.nodes[v].children.is_empty()
    }

    /// Number of edges: 2N-3 unrooted, 2N-2 rooted.
    pub fn n_edges(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Nodes in post-order (children before parents), root last.
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend_from_slice(&self.nodes[v].children);
        }
        order.reverse();
        order
    }

    /// The clade of leaves below each node (for the root: all taxa).
    pub fn subtree_clades(&self) -> Vec<Clade> {
        let n = self.taxa.len();
        let mut clades = vec![Clade::empty(n); self.nodes.len()];
        for v in self.post_order() {
            if let Some(t) = self.nodes[v].taxon {
                clades[v] = Clade::singleton(n, t);
            }
            let acc = self.nodes[v]
                .children
                .iter()
                .fold(clades[v].clone(), |acc, &c| acc.union(&clades[c]));
            clades[v] = acc;
        }
        clades
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (v, node) in self.nodes.iter().enumerate() {
            adj[v].extend_from_slice(&node.children);
            if let Some(p) = node.parent {
                adj[v].push(p);
            }
        }
        adj
    }

    /// The split induced by the edge above `v` (any non-root node).
    fn split_above(&self, clades: &[Clade], v: usize) -> Result<Split> {
        Split::from_clade(&clades[v])
    }

    /// One split per edge. Leaf edges give singleton-versus-rest splits.
    pub fn splits(&self) -> Result<Vec<Split>> {
        if self.rooted {
            return Err(Error::WrongRootedness("splits are defined on unrooted trees".into()));
        }
        let clades = self.subtree_clades();
        (0..self.nodes.len())
            .filter(|&v| v != self.root)
            .map(|v| self.split_above(&clades, v))
            .collect()
    }

    /// The PSPs neighboring the split of edge `e`: how each side of the
    /// split is further partitioned by its adjacent node. Internal edges
    /// yield two PSPs, leaf edges one, the single edge of a two-taxon tree
    /// none.
    pub fn psps_of(&self, e: &Split) -> Result<Vec<Psp>> {
        if self.rooted {
            return Err(Error::WrongRootedness("PSPs are defined on unrooted trees".into()));
        }
        let clades = self.subtree_clades();
        for v in 0..self.nodes.len() {
            if v == self.root {
                continue;
            }
            if self.split_above(&clades, v)? == *e {
                return self.psps_at(&clades, v);
            }
        }
        Err(Error::MissingEdge(format!("no edge with split {e}")))
    }

    fn psps_at(&self, clades: &[Clade], v: usize) -> Result<Vec<Psp>> {
        let anchor = self.split_above(clades, v)?;
        let mut out = Vec::with_capacity(2);
        // Below side: v's children partition clade(v).
        if self.nodes[v].children.len() == 2 {
            let c1 = &clades[self.nodes[v].children[0]];
            let c2 = &clades[self.nodes[v].children[1]];
            out.push(Psp::new(anchor.clone(), canonical_subsplit(c1.clone(), c2.clone())?)?);
        }
        // Above side: the parent's other two neighbors partition the rest.
        let u = self.nodes[v].parent.expect("non-root node");
        let mut sides: Vec<Clade> = Vec::with_capacity(2);
        for &c in &self.nodes[u].children {
            if c != v {
                sides.push(clades[c].clone());
            }
        }
        if self.nodes[u].parent.is_some() {
            sides.push(clades[u].complement());
        }
        if sides.len() == 2 {
            out.push(Psp::new(anchor, canonical_subsplit(sides[0].clone(), sides[1].clone())?)?);
        }
        Ok(out)
    }

    /// Split and PSPs for every edge, indexed in deterministic arena order.
    pub fn edge_contexts(&self) -> Result<Vec<EdgeContext>> {
        if self.rooted {
            return Err(Error::WrongRootedness("edge contexts need an unrooted tree".into()));
        }
        let clades = self.subtree_clades();
        (0..self.nodes.len())
            .filter(|&v| v != self.root)
            .map(|v| {
                Ok(EdgeContext {
                    split: self.split_above(&clades, v)?,
                    psps: self.psps_at(&clades, v)?,
                })
            })
            .collect()
    }

    fn copy_away(
        &self,
        adj: &[Vec<usize>],
        v: usize,
        from: usize,
        nodes: &mut Vec<Node>,
        parent: Option<usize>,
    ) -> usize {
        let idx = nodes.len();
        nodes.push(Node { parent, children: Vec::new(), taxon: self.nodes[v].taxon });
        for &z in &adj[v] {
            if z != from {
                let c = self.copy_away(adj, z, v, nodes, Some(idx));
                nodes[idx].children.push(c);
            }
        }
        idx
    }

    /// Root the tree on the edge above arena node `v`: the new root bisects
    /// that edge.
    fn rooted_at_node(&self, adj: &[Vec<usize>], v: usize) -> Topology {
        let u = self.nodes[v].parent.expect("edge above a non-root node");
        let mut nodes = vec![Node { parent: None, children: Vec::new(), taxon: None }];
        let a = self.copy_away(adj, v, u, &mut nodes, Some(0));
        nodes[0].children.push(a);
        let b = self.copy_away(adj, u, v, &mut nodes, Some(0));
        nodes[0].children.push(b);
        Topology { taxa: self.taxa.clone(), nodes, root: 0, rooted: true }
    }

    /// Root the tree on the edge with the given split.
    pub fn root_at(&self, e: &Split) -> Result<Topology> {
        if self.rooted {
            return Err(Error::WrongRootedness("tree is already rooted".into()));
        }
        let clades = self.subtree_clades();
        let adj = self.adjacency();
        for v in 0..self.nodes.len() {
            if v != self.root && self.split_above(&clades, v)? == *e {
                return Ok(self.rooted_at_node(&adj, v));
            }
        }
        Err(Error::MissingEdge(format!("no edge with split {e}")))
    }

    /// One rooted tree per edge, 2N-3 in total, in deterministic edge order.
    pub fn all_rootings(&self) -> Result<Vec<Topology>> {
        if self.rooted {
            return Err(Error::WrongRootedness("all_rootings takes an unrooted tree".into()));
        }
        if self.taxa.len() < 3 {
            return Err(Error::UnsupportedSize("rooting needs >= 3 taxa".into()));
        }
        let adj = self.adjacency();
        Ok((0..self.nodes.len())
            .filter(|&v| v != self.root)
            .map(|v| self.rooted_at_node(&adj, v))
            .collect())
    }

    /// Remove the root, merging its two child edges into one.
    pub fn unroot(&self) -> Result<Topology> {
        if !self.rooted {
            return Err(Error::WrongRootedness("tree is already unrooted".into()));
        }
        let n = self.taxa.len();
        if n < 2 {
            return Err(Error::UnsupportedSize("unrooting needs >= 2 taxa".into()));
        }
        let c1 = self.nodes[self.root].children[0];
        let c2 = self.nodes[self.root].children[1];
        if n == 2 {
            let nodes = vec![
                Node { parent: None, children: vec![1], taxon: self.nodes[c1].taxon },
                Node { parent: Some(0), children: Vec::new(), taxon: self.nodes[c2].taxon },
            ];
            return Ok(Topology { taxa: self.taxa.clone(), nodes, root: 0, rooted: false });
        }
        let adj = self.adjacency();
        // Pick an internal root child as the new degree-3 pseudo-root.
        let (hub, other) =
            if !self.is_leaf(c1) { (c1, c2) } else { (c2, c1) };
        let mut nodes = vec![Node { parent: None, children: Vec::new(), taxon: None }];
        for &z in &adj[hub] {
            if z != self.root {
                let c = self.copy_away(&adj, z, hub, &mut nodes, Some(0));
                nodes[0].children.push(c);
            }
        }
        let c = self.copy_away(&adj, other, self.root, &mut nodes, Some(0));
        nodes[0].children.push(c);
        let t = Topology { taxa: self.taxa.clone(), nodes, root: 0, rooted: false };
        debug_assert!(t.validate().is_ok());
        Ok(t)
    }

    /// Root split plus one (parent context, child subsplit) record per
    /// internal non-root node whose clade has at least three taxa. Size-two
    /// clades decompose deterministically and carry no record.
    pub fn subsplit_decomposition(&self) -> Result<(Split, Vec<(ParentKey, Subsplit)>)> {
        if !self.rooted {
            return Err(Error::WrongRootedness(
                "subsplit decomposition takes a rooted tree".into(),
            ));
        }
        if self.taxa.len() < 3 {
            return Err(Error::UnsupportedSize("decomposition needs >= 3 taxa".into()));
        }
        let clades = self.subtree_clades();
        let rc = self.nodes[self.root].children.clone();
        let root_split = Split::new(canonical_subsplit(clades[rc[0]].clone(), clades[rc[1]].clone())?)?;
        let mut records = Vec::new();
        for v in self.post_order() {
            if v == self.root || self.is_leaf(v) || clades[v].count() < 3 {
                continue;
            }
            let u = self.nodes[v].parent.expect("non-root");
            let sister = self.nodes[u]
                .children
                .iter()
                .copied()
                .find(|&c| c != v)
                .expect("binary internal node");
            let cs = self.nodes[v].children.clone();
            let sub = canonical_subsplit(clades[cs[0]].clone(), clades[cs[1]].clone())?;
            records.push((ParentKey { clade: clades[v].clone(), sister: clades[sister].clone() }, sub));
        }
        records.sort();
        Ok((root_split, records))
    }

    /// Canonical identity for hashing and frequency counting.
    pub fn key(&self) -> TopologyKey {
        let mut parts: Vec<String> = Vec::new();
        if self.rooted {
            if self.taxa.len() >= 3 {
                let (root, records) = self.subsplit_decomposition().expect("valid rooted tree");
                parts.push(root.encode());
                parts.extend(records.iter().map(|(pk, s)| format!("{} {}", pk.encode(), s.encode())));
            }
        } else {
            let clades = self.subtree_clades();
            for v in 0..self.nodes.len() {
                if v == self.root {
                    continue;
                }
                let c = clades[v].count();
                if c >= 2 && c <= self.taxa.len() - 2 {
                    parts.push(self.split_above(&clades, v).expect("proper subset").encode());
                }
            }
            parts.sort();
        }
        TopologyKey { rooted: self.rooted, n_taxa: self.taxa.len(), parts }
    }

    /// A structurally canonical copy: children ordered by clade, unrooted
    /// trees pseudo-rooted at the internal node adjacent to taxon 0.
    pub fn canonicalized(&self) -> Topology {
        if self.taxa.len() == 2 && !self.rooted {
            let a = self.nodes.iter().find(|n| n.taxon == Some(0)).is_some();
            debug_assert!(a);
            let nodes = vec![
                Node { parent: None, children: vec![1], taxon: Some(0) },
                Node { parent: Some(0), children: Vec::new(), taxon: Some(1) },
            ];
            return Topology { taxa: self.taxa.clone(), nodes, root: 0, rooted: false };
        }
        if self.rooted {
            let spec = self.canonical_spec_down(self.root, usize::MAX);
            return Topology::rooted_from_spec(self.taxa.clone(), &spec).expect("valid");
        }
        // Find the unique internal node adjacent to leaf 0.
        let leaf0 = (0..self.nodes.len())
            .find(|&v| self.nodes[v].taxon == Some(0))
            .expect("taxon 0 present");
        let hub = self.adjacency()[leaf0][0];
        let adj = self.adjacency();
        let mut children: Vec<TreeSpec> =
            adj[hub].iter().map(|&z| self.canonical_spec_away(&adj, z, hub)).collect();
        let n = self.taxa.len();
        children.sort_by(|a, b| spec_clade(n, b).cmp(&spec_clade(n, a)));
        Topology::unrooted_from_spec(self.taxa.clone(), &TreeSpec::Internal(children))
            .expect("valid")
    }

    fn canonical_spec_down(&self, v: usize, _from: usize) -> TreeSpec {
        if let Some(t) = self.nodes[v].taxon {
            return TreeSpec::Leaf(t);
        }
        let n = self.taxa.len();
        let mut children: Vec<TreeSpec> =
            self.nodes[v].children.iter().map(|&c| self.canonical_spec_down(c, v)).collect();
        children.sort_by(|a, b| spec_clade(n, b).cmp(&spec_clade(n, a)));
        TreeSpec::Internal(children)
    }

    /// The subtree on `v`'s side of the undirected edge {v, from}, as a
    /// spec with canonically ordered children.
    pub(crate) fn spec_away(&self, adj: &[Vec<usize>], v: usize, from: usize) -> TreeSpec {
        self.canonical_spec_away(adj, v, from)
    }

    fn canonical_spec_away(&self, adj: &[Vec<usize>], v: usize, from: usize) -> TreeSpec {
        if let Some(t) = self.nodes[v].taxon {
            return TreeSpec::Leaf(t);
        }
        let n = self.taxa.len();
        let mut children: Vec<TreeSpec> = adj[v]
            .iter()
            .filter(|&&z| z != from)
            .map(|&z| self.canonical_spec_away(adj, z, v))
            .collect();
        children.sort_by(|a, b| spec_clade(n, b).cmp(&spec_clade(n, a)));
        TreeSpec::Internal(children)
    }
}

fn spec_clade(n_taxa: usize, spec: &TreeSpec) -> Clade {
    match spec {
        TreeSpec::Leaf(t) => Clade::singleton(n_taxa, *t),
        TreeSpec::Internal(children) => children
            .iter()
            .map(|c| spec_clade(n_taxa, c))
            .reduce(|a, b| a.union(&b))
            .expect("non-empty internal node"),
    }
}

/// All distinct unrooted leaf-labeled topologies on the given taxa,
/// (2N-5)!! of them. Capped at 8 taxa to keep enumeration-based oracles
/// fast.
pub fn enumerate_unrooted(taxa: &Taxa) -> Result<Vec<Topology>> {
    let n = taxa.len();
    if !(3..=8).contains(&n) {
        return Err(Error::UnsupportedSize(format!(
            "enumeration supports 3..=8 taxa, got {n}"
        )));
    }
    let mut trees = vec![TreeSpec::Internal(vec![
        TreeSpec::Leaf(0),
        TreeSpec::Leaf(1),
        TreeSpec::Leaf(2),
    ])];
    for t in 3..n {
        let mut next = Vec::with_capacity(trees.len() * (2 * t - 3));
        for tree in &trees {
            let mut paths = Vec::new();
            collect_paths(tree, &mut Vec::new(), &mut paths);
            for path in &paths {
                next.push(insert_at(tree, path, t));
            }
        }
        trees = next;
    }
    debug_assert_eq!(trees.len() as u64, unrooted_count(n));
    trees
        .iter()
        .map(|spec| Topology::unrooted_from_spec(taxa.clone(), spec))
        .collect()
}

fn collect_paths(spec: &TreeSpec, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if let TreeSpec::Internal(children) = spec {
        for (i, child) in children.iter().enumerate() {
            prefix.push(i);
            out.push(prefix.clone());
            collect_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn insert_at(spec: &TreeSpec, path: &[usize], taxon: usize) -> TreeSpec {
    match spec {
        TreeSpec::Internal(children) if !path.is_empty() => {
            let mut children = children.clone();
            if path.len() == 1 {
                let old = children[path[0]].clone();
                children[path[0]] =
                    TreeSpec::Internal(vec![old, TreeSpec::Leaf(taxon)]);
            } else {
                children[path[0]] = insert_at(&children[path[0]], &path[1..], taxon);
            }
            TreeSpec::Internal(children)
        }
        _ => unreachable!("paths index internal children"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newick;
    use crate::taxa::taxa;
    use std::collections::BTreeSet;

    fn quartet() -> Topology {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        newick::parse("((A,B),C,D);", &tx).unwrap().0
    }

    #[test]
    fn quartet_has_five_rootings() {
        let t = quartet();
        let roots = t.all_rootings().unwrap();
        assert_eq!(roots.len(), 5);
    }

    #[test]
    fn three_taxon_star_has_three_rootings() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        let t = newick::parse("(A,B,C);", &tx).unwrap().0;
        assert_eq!(t.all_rootings().unwrap().len(), 3);
    }

    #[test]
    fn rooting_round_trip_preserves_identity() {
        let t = quartet();
        for r in t.all_rootings().unwrap() {
            assert_eq!(r.unroot().unwrap().key(), t.key());
        }
    }

    #[test]
    fn rooted_input_to_all_rootings_is_an_error() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let r = newick::parse("((A,B),(C,D));", &tx).unwrap().0;
        assert!(matches!(r.all_rootings(), Err(Error::WrongRootedness(_))));
    }

    #[test]
    fn splits_of_quartet() {
        let t = quartet();
        let splits: BTreeSet<Split> = t.splits().unwrap().into_iter().collect();
        assert_eq!(splits.len(), 5);
        let internal = Split::decode("1100|0011").unwrap();
        assert!(splits.contains(&internal));
        for leaf in ["1000|0111", "0100|1011", "0010|1101", "0001|1110"] {
            assert!(splits.contains(&Split::decode(leaf).unwrap()));
        }
    }

    #[test]
    fn three_taxon_star_has_only_leaf_splits() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        let t = newick::parse("(A,B,C);", &tx).unwrap().0;
        assert_eq!(t.splits().unwrap().len(), 3);
    }

    #[test]
    fn splits_invariant_under_rerooting() {
        let tx = taxa(["A", "B", "C", "D", "E"]).unwrap();
        let t = newick::parse("((A,B),(C,E),D);", &tx).unwrap().0;
        let base: BTreeSet<Split> = t.splits().unwrap().into_iter().collect();
        for r in t.all_rootings().unwrap() {
            let again: BTreeSet<Split> =
                r.unroot().unwrap().splits().unwrap().into_iter().collect();
            assert_eq!(base, again);
        }
    }

    #[test]
    fn psps_of_quartet_internal_edge() {
        let t = quartet();
        let internal = Split::decode("1100|0011").unwrap();
        let psps = t.psps_of(&internal).unwrap();
        assert_eq!(psps.len(), 2);
        let sides: BTreeSet<String> = psps.iter().map(|p| p.side().encode()).collect();
        assert!(sides.contains("1000|0100"));
        assert!(sides.contains("0010|0001"));
    }

    #[test]
    fn psps_of_quartet_leaf_edge() {
        let t = quartet();
        let leaf_a = Split::decode("1000|0111").unwrap();
        let psps = t.psps_of(&leaf_a).unwrap();
        assert_eq!(psps.len(), 1);
        assert_eq!(psps[0].side().encode(), "0100|0011");
        assert_eq!(psps[0].anchor(), &leaf_a);
    }

    #[test]
    fn psps_of_star_leaf_edge() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        let t = newick::parse("(A,B,C);", &tx).unwrap().0;
        let leaf_a = Split::decode("100|011").unwrap();
        assert_eq!(t.psps_of(&leaf_a).unwrap().len(), 1);
    }

    #[test]
    fn psps_of_unknown_edge_is_missing_edge() {
        let t = quartet();
        let absent = Split::decode("1010|0101").unwrap();
        assert!(matches!(t.psps_of(&absent), Err(Error::MissingEdge(_))));
    }

    #[test]
    fn psp_count_sums_over_edges() {
        // Sum of PSP counts over internal edges = 2 * (#internal edges).
        let tx = taxa(["A", "B", "C", "D", "E", "F"]).unwrap();
        let t = newick::parse("((A,(B,C)),(D,E),F);", &tx).unwrap().0;
        let ctxs = t.edge_contexts().unwrap();
        assert_eq!(ctxs.len(), 9);
        let n_internal = ctxs
            .iter()
            .filter(|c| c.split.first().count() >= 2 && c.split.second().count() >= 2)
            .count();
        let total: usize = ctxs
            .iter()
            .filter(|c| c.split.first().count() >= 2 && c.split.second().count() >= 2)
            .map(|c| c.psps.len())
            .sum();
        assert_eq!(total, 2 * n_internal);
    }

    #[test]
    fn decomposition_balanced_quartet() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let r = newick::parse("((A,B),(C,D));", &tx).unwrap().0;
        let (root, records) = r.subsplit_decomposition().unwrap();
        assert_eq!(root.encode(), "1100|0011");
        assert!(records.is_empty());
    }

    #[test]
    fn decomposition_caterpillar_quartet() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let r = newick::parse("(((A,B),C),D);", &tx).unwrap().0;
        let (root, records) = r.subsplit_decomposition().unwrap();
        assert_eq!(root.encode(), "1110|0001");
        assert_eq!(records.len(), 1);
        let (pk, sub) = &records[0];
        assert_eq!(pk.encode(), "1110~0001");
        assert_eq!(sub.encode(), "1100|0010");
    }

    #[test]
    fn decomposition_unrooted_input_is_an_error() {
        let t = quartet();
        assert!(matches!(t.subsplit_decomposition(), Err(Error::WrongRootedness(_))));
    }

    #[test]
    fn caterpillar_has_n_minus_2_records() {
        // N-2 nontrivial records including the root split.
        for n in 4..=7 {
            let names: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
            let tx = taxa(names).unwrap();
            let mut s = "(T0,T1)".to_string();
            for i in 2..n {
                s = format!("({s},T{i})");
            }
            let r = newick::parse(&format!("{s};"), &tx).unwrap().0;
            let (_, records) = r.subsplit_decomposition().unwrap();
            assert_eq!(records.len() + 1, n - 2, "n={n}");
        }
    }

    #[test]
    fn enumeration_counts_match_double_factorial() {
        for n in 3..=6 {
            let names: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
            let tx = taxa(names).unwrap();
            let trees = enumerate_unrooted(&tx).unwrap();
            assert_eq!(trees.len() as u64, unrooted_count(n), "n={n}");
            let keys: BTreeSet<TopologyKey> = trees.iter().map(|t| t.key()).collect();
            assert_eq!(keys.len(), trees.len(), "n={n} enumeration has duplicates");
        }
    }

    #[test]
    fn enumeration_out_of_range_is_an_error() {
        let tx = taxa(["A", "B"]).unwrap();
        assert!(matches!(enumerate_unrooted(&tx), Err(Error::UnsupportedSize(_))));
    }

    #[test]
    fn decomposition_clades_are_unions_of_children() {
        // Structural consistency: every record's parent clade equals the
        // union of its child subsplit.
        let names: Vec<String> = (0..6).map(|i| format!("T{i}")).collect();
        let tx = taxa(names).unwrap();
        for t in enumerate_unrooted(&tx).unwrap() {
            for r in t.all_rootings().unwrap() {
                let (root, records) = r.subsplit_decomposition().unwrap();
                assert!(root.subsplit().union().is_full());
                for (pk, sub) in &records {
                    assert_eq!(pk.clade, sub.union());
                    assert!(!pk.clade.intersects(&pk.sister));
                }
            }
        }
    }

    #[test]
    fn canonicalized_is_stable_across_rootings() {
        let t = quartet();
        let canon = newick::serialize(&t.canonicalized(), None).unwrap();
        for r in t.all_rootings().unwrap() {
            let u = r.unroot().unwrap().canonicalized();
            assert_eq!(newick::serialize(&u, None).unwrap(), canon);
        }
    }

    #[test]
    fn branch_lengths_validate() {
        let t = quartet();
        let mut b = BranchLengths::new();
        for ctx in t.edge_contexts().unwrap() {
            b.insert(ctx.split, 0.1).unwrap();
        }
        assert!(b.validate_for(&t).is_ok());
        assert_eq!(b.len(), 5);
        let mut missing = BranchLengths::new();
        missing.insert(Split::decode("1100|0011").unwrap(), 0.1).unwrap();
        assert!(matches!(missing.validate_for(&t), Err(Error::MissingEdge(_))));
        assert!(BranchLengths::new().insert(Split::decode("1100|0011").unwrap(), -1.0).is_err());
    }

    #[test]
    fn degenerate_two_taxon_tree() {
        let tx = taxa(["A", "B"]).unwrap();
        let t = Topology::unrooted_from_spec(
            tx,
            &TreeSpec::Internal(vec![TreeSpec::Leaf(0), TreeSpec::Leaf(1)]),
        )
        .unwrap();
        assert_eq!(t.n_edges(), 1);
        let splits = t.splits().unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].encode(), "10|01");
        assert!(t.psps_of(&splits[0]).unwrap().is_empty());
    }
}
