//! Tree region graphs.
//!
//! A region graph is a rooted bipartite tree alternating between regions
//! (variable subsets) and partitions (binary splits of a region). Node ids
//! are dense and assigned in construction (pre-)order.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sorted, duplicate-free, non-empty set of variable indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scope(Vec<usize>);

impl Scope {
    pub fn new(mut vars: Vec<usize>) -> Result<Self> {
        vars.sort_unstable();
        let before = vars.len();
        vars.dedup();
        if vars.is_empty() {
            return Err(Error::InvalidArgument("empty scope".into()));
        }
        if vars.len() != before {
            return Err(Error::InvalidArgument("scope has duplicate variables".into()));
        }
        Ok(Scope(vars))
    }

    pub fn singleton(v: usize) -> Self {
        Scope(vec![v])
    }

    pub fn full(variable_count: usize) -> Self {
        Scope((0..variable_count).collect())
    }

    /// Build without checking; used to construct invalid graphs on purpose.
    pub fn from_unchecked(vars: Vec<usize>) -> Self {
        Scope(vars)
    }

    pub fn vars(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn is_disjoint(&self, other: &Scope) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    pub fn union<'a>(scopes: impl IntoIterator<Item = &'a Scope>) -> Scope {
        let set: BTreeSet<usize> = scopes.into_iter().flat_map(|s| s.0.iter().copied()).collect();
        Scope(set.into_iter().collect())
    }

    fn is_well_formed(&self) -> bool {
        !self.0.is_empty() && self.0.windows(2).all(|w| w[0] < w[1])
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "}}")
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum RgNode {
    Region { scope: Scope, children: Vec<NodeId> },
    Partition { children: Vec<NodeId> },
}

impl RgNode {
    pub fn children(&self) -> &[NodeId] {
        match self {
            RgNode::Region { children, .. } | RgNode::Partition { children } => children,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    variable_count: usize,
    nodes: Vec<RgNode>,
    root: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MalformedScope { node: NodeId },
    NotBipartite { parent: NodeId, child: NodeId },
    DanglingChild { parent: NodeId, child: NodeId },
    MultipleParents { node: NodeId },
    Unreachable { node: NodeId },
    RootNotRegion,
    RootScope,
    MultiplePartitions { region: NodeId },
    NonBinaryPartition { partition: NodeId },
    Overlap { partition: NodeId },
    NotCovering { partition: NodeId },
    LeafOverlap { a: NodeId, b: NodeId },
    LeafCoverage { missing: Vec<usize> },
}

impl RegionGraph {
    /// Assemble a graph from raw parts without validation.
    pub fn from_parts(variable_count: usize, nodes: Vec<RgNode>, root: NodeId) -> Self {
        RegionGraph {
            variable_count,
            nodes,
            root,
        }
    }

    pub fn variable_count(&self) -> usize {
        self.variable_count
    }

    pub fn nodes(&self) -> &[RgNode] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &RgNode {
        &self.nodes[id]
    }

    pub fn scope(&self, region: NodeId) -> Option<&Scope> {
        match &self.nodes[region] {
            RgNode::Region { scope, .. } => Some(scope),
            RgNode::Partition { .. } => None,
        }
    }

    pub fn region_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, RgNode::Region { .. }))
            .count()
    }

    pub fn partition_count(&self) -> usize {
        self.nodes.len() - self.region_count()
    }

    /// Number of partition levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(rg: &RegionGraph, id: NodeId) -> usize {
            match rg.node(id) {
                RgNode::Region { children, .. } => children.iter().map(|&c| go(rg, c)).max().unwrap_or(0),
                RgNode::Partition { children } => 1 + children.iter().map(|&c| go(rg, c)).max().unwrap_or(0),
            }
        }
        go(self, self.root)
    }

    pub fn leaf_regions(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                RgNode::Region { children, .. } if children.is_empty() => Some(i),
                _ => None,
            })
            .collect()
    }

    /// Linear tree: variables are shuffled with `seed`, then split off one by one.
    pub fn linear_tree(variable_count: usize, seed: u64) -> Result<Self> {
        let order = shuffled(variable_count, seed)?;
        Self::linear_tree_with_order(&order)
    }

    /// Linear tree over an explicit variable order.
    pub fn linear_tree_with_order(order: &[usize]) -> Result<Self> {
        let d = order.len();
        if d == 0 {
            return Err(Error::InvalidArgument("variable_count must be at least 1".into()));
        }
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..d).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("order must be a permutation of 0..D".into()));
        }
        let mut nodes = Vec::with_capacity(2 * d);
        let mut pending_region = push_region(&mut nodes, order);
        for i in 0..d - 1 {
            let part = nodes.len();
            nodes.push(RgNode::Partition { children: Vec::new() });
            set_children(&mut nodes, pending_region, vec![part]);
            let head = push_region(&mut nodes, &order[i..i + 1]);
            let tail = push_region(&mut nodes, &order[i + 1..]);
            set_children(&mut nodes, part, vec![head, tail]);
            pending_region = tail;
        }
        Ok(RegionGraph {
            variable_count: d,
            nodes,
            root: 0,
        })
    }

    /// Binary tree: each region is split into halves of sizes ⌈n/2⌉ and
    /// ⌊n/2⌋ (larger first) with random membership.
    pub fn binary_tree(variable_count: usize, seed: u64) -> Result<Self> {
        if variable_count == 0 {
            return Err(Error::InvalidArgument("variable_count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::with_capacity(2 * variable_count);
        let all: Vec<usize> = (0..variable_count).collect();
        split_binary(&mut nodes, all, &mut rng);
        Ok(RegionGraph {
            variable_count,
            nodes,
            root: 0,
        })
    }

    /// All invariant violations; empty iff the graph is a valid binary tree RG.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        let mut parents = vec![0usize; n];
        for (id, node) in self.nodes.iter().enumerate() {
            if let RgNode::Region { scope, .. } = node {
                if !scope.is_well_formed() || scope.vars().iter().any(|&v| v >= self.variable_count) {
                    out.push(Violation::MalformedScope { node: id });
                }
            }
            for &c in node.children() {
                if c >= n {
                    out.push(Violation::DanglingChild { parent: id, child: c });
                    continue;
                }
                parents[c] += 1;
                let bipartite = matches!(
                    (node, &self.nodes[c]),
                    (RgNode::Region { .. }, RgNode::Partition { .. })
                        | (RgNode::Partition { .. }, RgNode::Region { .. })
                );
                if !bipartite {
                    out.push(Violation::NotBipartite { parent: id, child: c });
                }
            }
        }
        if self.root >= n {
            out.push(Violation::RootNotRegion);
            return out;
        }
        match &self.nodes[self.root] {
            RgNode::Region { scope, .. } => {
                if *scope != Scope::full(self.variable_count) {
                    out.push(Violation::RootScope);
                }
            }
            RgNode::Partition { .. } => out.push(Violation::RootNotRegion),
        }
        for (id, &p) in parents.iter().enumerate() {
            if p > 1 || (id == self.root && p > 0) {
                out.push(Violation::MultipleParents { node: id });
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if seen[id] {
                continue;
            }
            seen[id] = true;
            stack.extend(self.nodes[id].children().iter().filter(|&&c| c < n));
        }
        for (id, s) in seen.iter().enumerate() {
            if !s {
                out.push(Violation::Unreachable { node: id });
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                RgNode::Region { scope, children } => {
                    if children.len() > 1 {
                        out.push(Violation::MultiplePartitions { region: id });
                    }
                    for &p in children.iter().filter(|&&p| p < n) {
                        let RgNode::Partition { children: parts } = &self.nodes[p] else {
                            continue;
                        };
                        let child_scopes: Vec<&Scope> =
                            parts.iter().filter(|&&c| c < n).filter_map(|&c| self.scope(c)).collect();
                        let disjoint = child_scopes
                            .iter()
                            .enumerate()
                            .all(|(i, a)| child_scopes[i + 1..].iter().all(|b| a.is_disjoint(b)));
                        if !disjoint {
                            out.push(Violation::Overlap { partition: p });
                        }
                        if Scope::union(child_scopes.iter().copied()) != *scope {
                            out.push(Violation::NotCovering { partition: p });
                        }
                    }
                }
                RgNode::Partition { children } => {
                    if children.len() != 2 {
                        out.push(Violation::NonBinaryPartition { partition: id });
                    }
                }
            }
        }
        let leaves = self.leaf_regions();
        for (i, &a) in leaves.iter().enumerate() {
            for &b in &leaves[i + 1..] {
                if let (Some(sa), Some(sb)) = (self.scope(a), self.scope(b)) {
                    if !sa.is_disjoint(sb) {
                        out.push(Violation::LeafOverlap { a, b });
                    }
                }
            }
        }
        let covered = Scope::union(leaves.iter().filter_map(|&l| self.scope(l)));
        let missing: Vec<usize> = (0..self.variable_count).filter(|v| !covered.contains(*v)).collect();
        if !missing.is_empty() {
            out.push(Violation::LeafCoverage { missing });
        }
        out
    }
}

fn shuffled(variable_count: usize, seed: u64) -> Result<Vec<usize>> {
    if variable_count == 0 {
        return Err(Error::InvalidArgument("variable_count must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..variable_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order)
}

fn push_region(nodes: &mut Vec<RgNode>, vars: &[usize]) -> NodeId {
    let mut v = vars.to_vec();
    v.sort_unstable();
    nodes.push(RgNode::Region {
        scope: Scope(v),
        children: Vec::new(),
    });
    nodes.len() - 1
}

fn set_children(nodes: &mut [RgNode], id: NodeId, new: Vec<NodeId>) {
    match &mut nodes[id] {
        RgNode::Region { children, .. } | RgNode::Partition { children } => *children = new,
    }
}

fn split_binary(nodes: &mut Vec<RgNode>, mut vars: Vec<usize>, rng: &mut ChaCha8Rng) -> NodeId {
    let region = push_region(nodes, &vars);
    if vars.len() == 1 {
        return region;
    }
    vars.shuffle(rng);
    let part = nodes.len();
    nodes.push(RgNode::Partition { children: Vec::new() });
    set_children(nodes, region, vec![part]);
    let right = vars.split_off(vars.len().div_ceil(2));
    let a = split_binary(nodes, vars, rng);
    let b = split_binary(nodes, right, rng);
    set_children(nodes, part, vec![a, b]);
    region
}
