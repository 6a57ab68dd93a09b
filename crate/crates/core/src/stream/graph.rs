use std::collections::{BTreeMap, BTreeSet};

use super::{EventKind, NodeId, Snapshot, StreamError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct NodeState {
    /// Sorted, deduplicated.
    neighbors: Vec<NodeId>,
    last_touched: Option<usize>,
}

/// The current undirected graph `G_t`.
///
/// Nodes are never removed: a node whose edges are all deleted stays as an
/// isolated node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemporalGraph {
    nodes: BTreeMap<NodeId, NodeState>,
    edges: usize,
    next_index: usize,
}

/// Net change produced by one snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapshotDelta {
    pub index: usize,
    /// Normalized `(lo, hi)` pairs, sorted.
    pub added: Vec<(NodeId, NodeId)>,
    pub removed: Vec<(NodeId, NodeId)>,
    /// Endpoints of `added` and `removed`.
    pub affected: BTreeSet<NodeId>,
    /// Nodes seen for the first time in this snapshot (may include nodes
    /// whose only edge was inserted and deleted again).
    pub new_nodes: BTreeSet<NodeId>,
}

impl SnapshotDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

impl TemporalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index the next applied snapshot must carry.
    pub fn next_index(&self) -> usize {
        self.next_index
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.nodes.contains_key(&v)
    }

    /// Sorted neighbor list; empty for unknown nodes.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        self.nodes.get(&v).map_or(&[], |s| s.neighbors.as_slice())
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes
            .get(&a)
            .is_some_and(|s| s.neighbors.binary_search(&b).is_ok())
    }

    pub fn last_touched(&self, v: NodeId) -> Option<usize> {
        self.nodes.get(&v).and_then(|s| s.last_touched)
    }

    /// All edges as normalized pairs, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.iter().flat_map(|(&a, s)| {
            s.neighbors
                .iter()
                .copied()
                .filter(move |&b| a < b)
                .map(move |b| (a, b))
        })
    }

    /// Adds a node with no edges. Returns `true` if it was new.
    pub fn add_node(&mut self, v: NodeId) -> bool {
        if self.nodes.contains_key(&v) {
            return false;
        }
        self.nodes.insert(v, NodeState::default());
        true
    }

    /// Returns `true` if the edge was not already present. Self-loops are ignored.
    pub fn insert_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return false;
        }
        let sa = self.nodes.entry(a).or_default();
        let Err(pos) = sa.neighbors.binary_search(&b) else {
            return false;
        };
        sa.neighbors.insert(pos, b);
        let sb = self.nodes.entry(b).or_default();
        let pos = sb.neighbors.binary_search(&a).unwrap_err();
        sb.neighbors.insert(pos, a);
        self.edges += 1;
        true
    }

    /// Returns `true` if the edge was present.
    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        let Some(sa) = self.nodes.get_mut(&a) else {
            return false;
        };
        let Ok(pos) = sa.neighbors.binary_search(&b) else {
            return false;
        };
        sa.neighbors.remove(pos);
        let sb = self.nodes.get_mut(&b).expect("adjacency is symmetric");
        let pos = sb.neighbors.binary_search(&a).expect("adjacency is symmetric");
        sb.neighbors.remove(pos);
        self.edges -= 1;
        true
    }

    /// Applies every event of `snap` in order and reports the net change.
    pub fn apply_snapshot(&mut self, snap: &Snapshot) -> Result<SnapshotDelta, StreamError> {
        if snap.index != self.next_index {
            return Err(StreamError::Sequence {
                expected: self.next_index,
                got: snap.index,
            });
        }
        let mut before: BTreeMap<(NodeId, NodeId), bool> = BTreeMap::new();
        let mut new_nodes = BTreeSet::new();
        for ev in &snap.events {
            let (a, b) = ev.key();
            if a == b {
                continue;
            }
            let present = self.has_edge(a, b);
            before.entry((a, b)).or_insert(present);
            match ev.kind {
                EventKind::Insert => {
                    for v in [a, b] {
                        if self.add_node(v) {
                            new_nodes.insert(v);
                        }
                    }
                    self.insert_edge(a, b);
                }
                EventKind::Delete => {
                    self.remove_edge(a, b);
                }
            }
            for v in [a, b] {
                if let Some(s) = self.nodes.get_mut(&v) {
                    s.last_touched = Some(snap.index);
                }
            }
        }
        let mut delta = SnapshotDelta {
            index: snap.index,
            new_nodes,
            ..Default::default()
        };
        for ((a, b), was) in before {
            let now = self.has_edge(a, b);
            if was == now {
                continue;
            }
            if now {
                delta.added.push((a, b));
            } else {
                delta.removed.push((a, b));
            }
            delta.affected.insert(a);
            delta.affected.insert(b);
        }
        self.next_index += 1;
        Ok(delta)
    }

    /// Checks symmetry and the edge count; used by tests and debug audits.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut half = 0usize;
        for (&a, s) in &self.nodes {
            if !s.neighbors.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("neighbors of {a} not sorted/unique"));
            }
            for &b in &s.neighbors {
                if b == a {
                    return Err(format!("self-loop at {a}"));
                }
                if !self.has_edge(b, a) {
                    return Err(format!("asymmetric edge {a}->{b}"));
                }
            }
            half += s.neighbors.len();
        }
        if half != 2 * self.edges {
            return Err(format!("edge count {} != half degree sum {}", self.edges, half / 2));
        }
        Ok(())
    }
}
