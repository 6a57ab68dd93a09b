//! R-tree over node keys with dirty-leaf tracking.
//!
//! Nodes carry no coordinates, so each node is keyed by its id and bounding
//! rectangles are closed integer intervals. Nodes are inserted in
//! connected-component order at build time. Between snapshots only the leaves
//! hosting nodes named in a [`SnapshotDelta`] are touched; all other leaves
//! keep their exact contents.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::stream::{NodeId, SnapshotDelta, TemporalGraph};

/// Closed interval `[lo, hi]` of keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mbr {
    pub lo: u64,
    pub hi: u64,
}

impl Mbr {
    pub fn point(k: u64) -> Self {
        Mbr { lo: k, hi: k }
    }

    pub fn union(self, other: Mbr) -> Mbr {
        Mbr {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn contains(&self, other: &Mbr) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn contains_key(&self, k: u64) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn length(&self) -> u64 {
        self.hi - self.lo
    }

    fn enlargement(&self, add: Mbr) -> u64 {
        self.union(add).length() - self.length()
    }

    fn overlap(&self, other: &Mbr) -> u64 {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

impl fmt::Display for Mbr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

#[inline]
fn key_of(v: NodeId) -> u64 {
    v as u64
}

/// Handle to a leaf. Stable for the lifetime of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RTreeConfig {
    /// Maximum entries per leaf.
    pub leaf_capacity: usize,
    /// Maximum children per internal node.
    pub fanout: usize,
}

impl Default for RTreeConfig {
    fn default() -> Self {
        RTreeConfig {
            leaf_capacity: 64,
            fanout: 16,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("invalid R-tree configuration: {0}")]
    Config(String),
    #[error("cannot build an index over an empty graph")]
    EmptyGraph,
    #[error("node {0} is not indexed")]
    UnknownNode(NodeId),
}

/// Outcome of one [`RTree::update`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirtyReport {
    /// Pre-existing leaves that hosted an affected node.
    pub touched_leaves: usize,
    /// Leaves created by splits during this update.
    pub split_leaves: usize,
    pub total_leaves: usize,
    /// Affected plus newly introduced nodes.
    pub affected_nodes: usize,
    /// Nodes indexed for the first time.
    pub inserted_nodes: usize,
}

#[derive(Debug, Clone)]
enum Kind {
    Leaf(Vec<NodeId>),
    Internal(Vec<usize>),
}

#[derive(Debug, Clone)]
struct TreeNode {
    mbr: Option<Mbr>,
    parent: Option<usize>,
    kind: Kind,
}

#[derive(Debug, Clone)]
pub struct RTree {
    cfg: RTreeConfig,
    arena: Vec<TreeNode>,
    root: usize,
    locator: BTreeMap<NodeId, usize>,
    dirty: BTreeSet<usize>,
    created: BTreeSet<usize>,
}

impl RTree {
    /// An empty tree: a single empty root leaf.
    pub fn new(cfg: RTreeConfig) -> Result<Self, IndexError> {
        if cfg.leaf_capacity < 2 {
            return Err(IndexError::Config(format!(
                "leaf capacity must be >= 2, got {}",
                cfg.leaf_capacity
            )));
        }
        if cfg.fanout < 2 {
            return Err(IndexError::Config(format!("fan-out must be >= 2, got {}", cfg.fanout)));
        }
        Ok(RTree {
            cfg,
            arena: vec![TreeNode {
                mbr: None,
                parent: None,
                kind: Kind::Leaf(Vec::new()),
            }],
            root: 0,
            locator: BTreeMap::new(),
            dirty: BTreeSet::new(),
            created: BTreeSet::new(),
        })
    }

    /// Indexes every node of `graph`, inserting connected components one after
    /// another (breadth-first from each component's smallest node).
    pub fn build(graph: &TemporalGraph, cfg: RTreeConfig) -> Result<Self, IndexError> {
        if graph.is_empty() {
            return Err(IndexError::EmptyGraph);
        }
        let mut tree = RTree::new(cfg)?;
        for v in component_order(graph) {
            tree.insert(v);
        }
        tree.dirty.clear();
        tree.created.clear();
        Ok(tree)
    }

    pub fn config(&self) -> RTreeConfig {
        self.cfg
    }

    pub fn len(&self) -> usize {
        self.locator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locator.is_empty()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.locator.contains_key(&v)
    }

    pub fn leaf_count(&self) -> usize {
        self.arena.iter().filter(|n| matches!(n.kind, Kind::Leaf(_))).count()
    }

    pub fn leaves(&self) -> Vec<LeafId> {
        self.arena
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, Kind::Leaf(_)))
            .map(|(i, _)| LeafId(i))
            .collect()
    }

    pub fn depth(&self) -> usize {
        let mut d = 1;
        let mut cur = self.root;
        while let Kind::Internal(ch) = &self.arena[cur].kind {
            cur = ch[0];
            d += 1;
        }
        d
    }

    pub fn locate(&self, v: NodeId) -> Result<LeafId, IndexError> {
        self.locator
            .get(&v)
            .map(|&i| LeafId(i))
            .ok_or(IndexError::UnknownNode(v))
    }

    pub fn leaf_mbr(&self, leaf: LeafId) -> Option<Mbr> {
        self.arena[leaf.0].mbr
    }

    pub fn leaf_entries(&self, leaf: LeafId) -> &[NodeId] {
        match &self.arena[leaf.0].kind {
            Kind::Leaf(keys) => keys,
            Kind::Internal(_) => &[],
        }
    }

    /// Canonical byte form of a leaf's bounding interval and entries.
    pub fn leaf_bytes(&self, leaf: LeafId) -> Vec<u8> {
        let mut out = Vec::new();
        match self.arena[leaf.0].mbr {
            Some(m) => out.extend_from_slice(format!("{m}:").as_bytes()),
            None => out.extend_from_slice(b"[]:"),
        }
        for k in self.leaf_entries(leaf) {
            out.extend_from_slice(&k.to_le_bytes());
        }
        out
    }

    /// Leaves marked dirty or created by the most recent update.
    pub fn dirty_leaves(&self) -> BTreeSet<LeafId> {
        self.dirty.iter().chain(&self.created).map(|&i| LeafId(i)).collect()
    }

    /// Indexes new nodes from `delta` and refreshes the leaves hosting its
    /// affected nodes. Parent intervals are repaired along dirty paths only.
    pub fn update(&mut self, delta: &SnapshotDelta) -> DirtyReport {
        self.dirty.clear();
        self.created.clear();
        let mut inserted = 0;
        let nodes: BTreeSet<NodeId> = delta.affected.union(&delta.new_nodes).copied().collect();
        for &v in &nodes {
            if !self.locator.contains_key(&v) {
                self.insert(v);
                inserted += 1;
            }
        }
        for &v in &delta.affected {
            let leaf = self.locator[&v];
            if !self.created.contains(&leaf) {
                self.dirty.insert(leaf);
            }
        }
        let dirty: Vec<usize> = self.dirty.iter().chain(&self.created).copied().collect();
        for leaf in dirty {
            self.refresh_upward(leaf);
        }
        DirtyReport {
            touched_leaves: self.dirty.len(),
            split_leaves: self.created.len(),
            total_leaves: self.leaf_count(),
            affected_nodes: nodes.len(),
            inserted_nodes: inserted,
        }
    }

    fn insert(&mut self, v: NodeId) {
        debug_assert!(!self.locator.contains_key(&v));
        let key = Mbr::point(key_of(v));
        let leaf = self.choose_leaf(key);
        if let Kind::Leaf(keys) = &mut self.arena[leaf].kind {
            let pos = keys.binary_search(&v).unwrap_err();
            keys.insert(pos, v);
        }
        self.locator.insert(v, leaf);
        if !self.created.contains(&leaf) {
            self.dirty.insert(leaf);
        }
        self.extend_upward(leaf, key);
        if self.entry_count(leaf) > self.cfg.leaf_capacity {
            self.split(leaf);
        }
    }

    fn entry_count(&self, idx: usize) -> usize {
        match &self.arena[idx].kind {
            Kind::Leaf(k) => k.len(),
            Kind::Internal(c) => c.len(),
        }
    }

    fn choose_leaf(&self, key: Mbr) -> usize {
        let mut cur = self.root;
        while let Kind::Internal(children) = &self.arena[cur].kind {
            cur = *children
                .iter()
                .min_by_key(|&&c| {
                    let m = self.arena[c].mbr.expect("internal children are non-empty");
                    (m.enlargement(key), m.length(), self.entry_count(c))
                })
                .expect("internal node has children");
        }
        cur
    }

    fn extend_upward(&mut self, mut idx: usize, add: Mbr) {
        loop {
            let node = &mut self.arena[idx];
            node.mbr = Some(node.mbr.map_or(add, |m| m.union(add)));
            match node.parent {
                Some(p) => idx = p,
                None => break,
            }
        }
    }

    fn compute_mbr(&self, idx: usize) -> Option<Mbr> {
        match &self.arena[idx].kind {
            Kind::Leaf(keys) => keys
                .iter()
                .map(|&k| Mbr::point(key_of(k)))
                .reduce(Mbr::union),
            Kind::Internal(ch) => ch.iter().filter_map(|&c| self.arena[c].mbr).reduce(Mbr::union),
        }
    }

    fn refresh_upward(&mut self, mut idx: usize) {
        loop {
            self.arena[idx].mbr = self.compute_mbr(idx);
            match self.arena[idx].parent {
                Some(p) => idx = p,
                None => break,
            }
        }
    }

    /// Splits an overflowing node by sorting its entries along the key axis
    /// and cutting where the two halves' intervals overlap least, preferring
    /// the most balanced cut among ties.
    fn split(&mut self, idx: usize) {
        let len = self.entry_count(idx);
        let min_fill = (len * 2 / 5).max(1);
        let mut items: Vec<(Mbr, usize)> = match &self.arena[idx].kind {
            Kind::Leaf(keys) => keys
                .iter()
                .map(|&k| (Mbr::point(key_of(k)), k as usize))
                .collect(),
            Kind::Internal(ch) => ch.iter().map(|&c| (self.arena[c].mbr.unwrap(), c)).collect(),
        };
        items.sort_by_key(|(m, id)| (m.lo, m.hi, *id));
        let bound = |s: &[(Mbr, usize)]| s.iter().map(|x| x.0).reduce(Mbr::union).unwrap();
        let cut = (min_fill..=len - min_fill)
            .min_by_key(|&c| {
                let ov = bound(&items[..c]).overlap(&bound(&items[c..]));
                (ov, c.abs_diff(len / 2))
            })
            .unwrap();
        let right: Vec<(Mbr, usize)> = items.split_off(cut);
        let left = items;
        let parent = self.arena[idx].parent;
        let sibling = self.arena.len();
        match &mut self.arena[idx].kind {
            Kind::Leaf(keys) => {
                *keys = left.iter().map(|x| x.1 as NodeId).collect();
                let moved: Vec<NodeId> = right.iter().map(|x| x.1 as NodeId).collect();
                for &k in &moved {
                    self.locator.insert(k, sibling);
                }
                self.arena.push(TreeNode {
                    mbr: None,
                    parent,
                    kind: Kind::Leaf(moved),
                });
                self.created.insert(sibling);
                self.dirty.insert(idx);
            }
            Kind::Internal(ch) => {
                *ch = left.iter().map(|x| x.1).collect();
                let moved: Vec<usize> = right.iter().map(|x| x.1).collect();
                for &c in &moved {
                    self.arena[c].parent = Some(sibling);
                }
                self.arena.push(TreeNode {
                    mbr: None,
                    parent,
                    kind: Kind::Internal(moved),
                });
            }
        }
        self.arena[idx].mbr = self.compute_mbr(idx);
        self.arena[sibling].mbr = self.compute_mbr(sibling);
        match parent {
            None => {
                let root = self.arena.len();
                self.arena.push(TreeNode {
                    mbr: None,
                    parent: None,
                    kind: Kind::Internal(vec![idx, sibling]),
                });
                self.arena[idx].parent = Some(root);
                self.arena[sibling].parent = Some(root);
                self.arena[root].mbr = self.compute_mbr(root);
                self.root = root;
            }
            Some(p) => {
                if let Kind::Internal(ch) = &mut self.arena[p].kind {
                    let pos = ch.iter().position(|&c| c == idx).unwrap();
                    ch.insert(pos + 1, sibling);
                }
                self.arena[p].mbr = self.compute_mbr(p);
                if self.entry_count(p) > self.cfg.fanout {
                    self.split(p);
                }
            }
        }
    }

    /// Full structural audit: containment, capacities, parent links, and
    /// agreement of the locator map with the leaves.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut stack = vec![(self.root, None::<usize>)];
        let mut leaf_depth = None;
        let mut depth_stack = vec![1usize];
        while let Some((idx, parent)) = stack.pop() {
            let depth = depth_stack.pop().unwrap();
            let node = &self.arena[idx];
            if node.parent != parent {
                return Err(format!("node {idx}: parent link {:?} != {:?}", node.parent, parent));
            }
            if node.mbr != self.compute_mbr(idx) && matches!(node.kind, Kind::Leaf(_)) {
                return Err(format!("leaf {idx}: stale bounding interval"));
            }
            let is_root = idx == self.root;
            match &node.kind {
                Kind::Leaf(keys) => {
                    if keys.len() > self.cfg.leaf_capacity || (!is_root && keys.is_empty()) {
                        return Err(format!("leaf {idx}: {} entries", keys.len()));
                    }
                    for &k in keys {
                        let m = node.mbr.ok_or_else(|| format!("leaf {idx} has no interval"))?;
                        if !m.contains_key(key_of(k)) {
                            return Err(format!("leaf {idx} {m} does not contain key {k}"));
                        }
                        if seen.insert(k, idx).is_some() {
                            return Err(format!("node {k} appears in more than one leaf"));
                        }
                    }
                    match leaf_depth {
                        None => leaf_depth = Some(depth),
                        Some(d) if d != depth => return Err("leaves at different depths".into()),
                        _ => {}
                    }
                }
                Kind::Internal(ch) => {
                    if ch.len() > self.cfg.fanout || ch.is_empty() {
                        return Err(format!("internal {idx}: {} children", ch.len()));
                    }
                    let m = node.mbr.ok_or_else(|| format!("internal {idx} has no interval"))?;
                    for &c in ch {
                        let cm = self.arena[c].mbr.ok_or_else(|| format!("child {c} has no interval"))?;
                        if !m.contains(&cm) {
                            return Err(format!("parent {idx} {m} does not contain child {c} {cm}"));
                        }
                        stack.push((c, Some(idx)));
                        depth_stack.push(depth + 1);
                    }
                }
            }
        }
        if seen != self.locator {
            return Err("locator map disagrees with tree contents".into());
        }
        Ok(())
    }
}

/// Nodes grouped by connected component, components ordered by smallest id,
/// breadth-first within each.
pub fn component_order(graph: &TemporalGraph) -> Vec<NodeId> {
    let mut visited = BTreeSet::new();
    let mut order = Vec::with_capacity(graph.node_count());
    for start in graph.nodes() {
        if !visited.insert(start) {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &u in graph.neighbors(v) {
                if visited.insert(u) {
                    queue.push_back(u);
                }
            }
        }
    }
    order
}
