//! Random-walk corpus kept valid against an evolving graph.
//!
//! Every node owns `r` walks of up to `l` steps. When a snapshot changes the
//! graph, only walks that visit an affected node are repaired: the prefix up to
//! and including the first affected position is kept, and the rest is
//! re-simulated on the current graph. Next hops are uniform over the current
//! neighbors; a walk stops early at a node with no neighbors.
//!
//! Each walk draws from its own stream derived from `(seed, walk id)` at
//! creation and `(seed, walk id, snapshot index)` on repair, so results do not
//! depend on how walks are scheduled across workers.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::pool::pool;
use crate::rng::{self, tag, Rng};
use crate::stream::{NodeId, SnapshotDelta, TemporalGraph};

pub type WalkId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub id: WalkId,
    pub origin: NodeId,
    /// `nodes[0] == origin`; at most `length + 1` entries.
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkParams {
    pub walks_per_node: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            walks_per_node: 10,
            length: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WalkError {
    #[error("walks per node must be >= 1")]
    ZeroWalks,
    #[error("walk length must be >= 1")]
    ZeroLength,
}

/// Node -> (walk id -> first position of the node in that walk).
pub type InvertedIndex = BTreeMap<NodeId, BTreeMap<WalkId, usize>>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepairReport {
    pub index: usize,
    /// Existing walks whose suffix was re-simulated, ascending.
    pub updated: Vec<WalkId>,
    /// Walks created for nodes seen for the first time.
    pub created: Vec<WalkId>,
    /// Total length of the prefixes kept verbatim.
    pub positions_preserved: usize,
}

impl RepairReport {
    pub fn walks_updated(&self) -> usize {
        self.updated.len()
    }

    /// Updated and created walk ids.
    pub fn touched(&self) -> impl Iterator<Item = WalkId> + '_ {
        self.updated.iter().chain(&self.created).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCorpus {
    params: WalkParams,
    walks: Vec<Walk>,
    by_origin: BTreeMap<NodeId, Vec<WalkId>>,
    index: InvertedIndex,
}

/// Extends `nodes` (non-empty) by uniform next hops until it has
/// `length + 1` entries or reaches a node without neighbors.
fn extend_walk(graph: &TemporalGraph, nodes: &mut Vec<NodeId>, length: usize, rng: &mut Rng) {
    while nodes.len() <= length {
        let cur = *nodes.last().expect("walk is never empty");
        let nbrs = graph.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        nodes.push(nbrs[rng.random_range(0..nbrs.len())]);
    }
}

fn index_walk(index: &mut InvertedIndex, walk: &Walk) {
    for (pos, &v) in walk.nodes.iter().enumerate() {
        index.entry(v).or_default().entry(walk.id).or_insert(pos);
    }
}

fn unindex_walk(index: &mut InvertedIndex, walk: &Walk) {
    for &v in &walk.nodes {
        if let Some(m) = index.get_mut(&v) {
            m.remove(&walk.id);
            if m.is_empty() {
                index.remove(&v);
            }
        }
    }
}

impl WalkCorpus {
    /// Simulates `r` walks from every node of `graph`.
    pub fn init(graph: &TemporalGraph, params: WalkParams, threads: usize) -> Result<Self, WalkError> {
        if params.walks_per_node == 0 {
            return Err(WalkError::ZeroWalks);
        }
        if params.length == 0 {
            return Err(WalkError::ZeroLength);
        }
        let mut corpus = WalkCorpus {
            params,
            walks: Vec::new(),
            by_origin: BTreeMap::new(),
            index: BTreeMap::new(),
        };
        let nodes: Vec<NodeId> = graph.nodes().collect();
        corpus.create_walks(graph, &nodes, threads);
        Ok(corpus)
    }

    pub fn params(&self) -> WalkParams {
        self.params
    }

    pub fn walks(&self) -> &[Walk] {
        &self.walks
    }

    pub fn walk(&self, id: WalkId) -> &Walk {
        &self.walks[id]
    }

    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    pub fn walks_from(&self, origin: NodeId) -> &[WalkId] {
        self.by_origin.get(&origin).map_or(&[], Vec::as_slice)
    }

    pub fn inverted_index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Builds the inverted index from the walks alone.
    pub fn rebuild_index(&self) -> InvertedIndex {
        let mut index = BTreeMap::new();
        for w in &self.walks {
            index_walk(&mut index, w);
        }
        index
    }

    /// How many times each node occurs across all walks.
    pub fn node_frequencies(&self) -> BTreeMap<NodeId, u64> {
        let mut freq = BTreeMap::new();
        for w in &self.walks {
            for &v in &w.nodes {
                *freq.entry(v).or_insert(0) += 1;
            }
        }
        freq
    }

    fn create_walks(&mut self, graph: &TemporalGraph, origins: &[NodeId], threads: usize) -> Vec<WalkId> {
        let r = self.params.walks_per_node;
        let first = self.walks.len();
        let jobs: Vec<(WalkId, NodeId)> = origins
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| (0..r).map(move |j| (first + i * r + j, v)))
            .collect();
        let (seed, length) = (self.params.seed, self.params.length);
        let fresh: Vec<Walk> = pool(threads).install(|| {
            jobs.par_iter()
                .map(|&(id, origin)| {
                    let mut rng = rng::derive(seed, &[tag::WALK_INIT, id as u64]);
                    let mut nodes = vec![origin];
                    extend_walk(graph, &mut nodes, length, &mut rng);
                    Walk { id, origin, nodes }
                })
                .collect()
        });
        for w in fresh {
            index_walk(&mut self.index, &w);
            self.by_origin.entry(w.origin).or_default().push(w.id);
            self.walks.push(w);
        }
        (first..self.walks.len()).collect()
    }

    /// For every walk visiting a node of `affected`, the earliest position of
    /// any such node.
    pub fn affected_walks(&self, affected: &BTreeSet<NodeId>) -> BTreeMap<WalkId, usize> {
        let mut out: BTreeMap<WalkId, usize> = BTreeMap::new();
        for v in affected {
            if let Some(hits) = self.index.get(v) {
                for (&w, &pos) in hits {
                    out.entry(w)
                        .and_modify(|p| *p = (*p).min(pos))
                        .or_insert(pos);
                }
            }
        }
        out
    }

    /// Brings the corpus in line with `graph`, which must already reflect
    /// `delta`.
    pub fn repair(&mut self, graph: &TemporalGraph, delta: &SnapshotDelta, threads: usize) -> RepairReport {
        let targets = self.affected_walks(&delta.affected);
        let (seed, length, stamp) = (self.params.seed, self.params.length, delta.index as u64);
        let walks = &self.walks;
        let rewritten: Vec<(WalkId, usize, Vec<NodeId>)> = pool(threads).install(|| {
            targets
                .par_iter()
                .map(|(&id, &pos)| {
                    let mut rng = rng::derive(seed, &[tag::WALK_REPAIR, id as u64, stamp]);
                    let mut nodes = walks[id].nodes[..=pos].to_vec();
                    extend_walk(graph, &mut nodes, length, &mut rng);
                    (id, pos + 1, nodes)
                })
                .collect()
        });
        let mut report = RepairReport {
            index: delta.index,
            ..Default::default()
        };
        for (id, kept, nodes) in rewritten {
            unindex_walk(&mut self.index, &self.walks[id]);
            self.walks[id].nodes = nodes;
            index_walk(&mut self.index, &self.walks[id]);
            report.updated.push(id);
            report.positions_preserved += kept;
        }
        let newcomers: Vec<NodeId> = delta
            .new_nodes
            .iter()
            .copied()
            .filter(|v| graph.contains_node(*v) && !self.by_origin.contains_key(v))
            .collect();
        report.created = self.create_walks(graph, &newcomers, threads);
        report
    }

    /// One walk per line, node ids separated by spaces.
    pub fn write_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for walk in &self.walks {
            let line: Vec<String> = walk.nodes.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{EdgeEvent, Snapshot};

    fn graph_from(edges: &[(NodeId, NodeId)]) -> TemporalGraph {
        let mut g = TemporalGraph::new();
        let events = edges.iter().map(|&(a, b)| EdgeEvent::insert(a, b, 0)).collect();
        g.apply_snapshot(&Snapshot { index: 0, events }).unwrap();
        g
    }

    fn params(r: usize, l: usize) -> WalkParams {
        WalkParams {
            walks_per_node: r,
            length: l,
            seed: 5,
        }
    }

    #[test]
    fn two_node_graph_alternates() {
        let g = graph_from(&[(0, 1)]);
        let c = WalkCorpus::init(&g, params(1, 3), 1).unwrap();
        let w = &c.walks()[c.walks_from(0)[0]];
        assert_eq!(w.nodes, vec![0, 1, 0, 1]);
    }

    #[test]
    fn isolated_node_walks_are_just_origin() {
        let mut g = graph_from(&[(0, 1)]);
        g.add_node(9);
        let c = WalkCorpus::init(&g, params(3, 5), 1).unwrap();
        let from9 = c.walks_from(9);
        assert_eq!(from9.len(), 3);
        for &id in from9 {
            assert_eq!(c.walk(id).nodes, vec![9]);
        }
    }

    #[test]
    fn zero_params_rejected() {
        let g = graph_from(&[(0, 1)]);
        assert_eq!(WalkCorpus::init(&g, params(0, 3), 1).unwrap_err(), WalkError::ZeroWalks);
        assert_eq!(WalkCorpus::init(&g, params(1, 0), 1).unwrap_err(), WalkError::ZeroLength);
    }

    #[test]
    fn affected_walks_queries() {
        let g = graph_from(&[(0, 1), (1, 2)]);
        let mut c = WalkCorpus::init(&g, params(1, 2), 1).unwrap();
        assert!(c.affected_walks(&BTreeSet::new()).is_empty());
        // Force a single known walk.
        c.walks.truncate(1);
        c.walks[0].nodes = vec![0, 1, 2];
        c.index = c.rebuild_index();
        let hits = c.affected_walks(&BTreeSet::from([2]));
        assert_eq!(hits, BTreeMap::from([(0, 2)]));
        let hits = c.affected_walks(&BTreeSet::from([2, 1]));
        assert_eq!(hits, BTreeMap::from([(0, 1)]));
    }

    #[test]
    fn empty_delta_repairs_nothing() {
        let g = graph_from(&[(0, 1), (1, 2)]);
        let mut c = WalkCorpus::init(&g, params(2, 4), 1).unwrap();
        let before = c.clone();
        let r = c.repair(&g, &SnapshotDelta::default(), 1);
        assert_eq!(r.walks_updated(), 0);
        assert!(r.created.is_empty());
        assert_eq!(c, before);
    }

    #[test]
    fn removed_edge_keeps_prefix_and_resimulates_suffix() {
        let mut g = graph_from(&[(0, 1), (1, 2), (2, 3), (1, 4)]);
        let mut c = WalkCorpus::init(&g, params(1, 3), 1).unwrap();
        let id = c.walks_from(0)[0];
        c.walks[id].nodes = vec![0, 1, 2, 3];
        c.index = c.rebuild_index();
        let delta = g
            .apply_snapshot(&Snapshot {
                index: 1,
                events: vec![EdgeEvent::delete(1, 2, 1)],
            })
            .unwrap();
        let r = c.repair(&g, &delta, 1);
        assert!(r.updated.contains(&id));
        let nodes = &c.walk(id).nodes;
        assert_eq!(&nodes[..2], &[0, 1]);
        assert_eq!(nodes.len(), 4);
        for pair in nodes.windows(2) {
            assert!(g.has_edge(pair[0], pair[1]), "{nodes:?}");
        }
        assert_eq!(c.rebuild_index(), *c.inverted_index());
    }

    #[test]
    fn orphaned_prefix_truncates() {
        let mut g = graph_from(&[(0, 1)]);
        let mut c = WalkCorpus::init(&g, params(1, 4), 1).unwrap();
        let delta = g
            .apply_snapshot(&Snapshot {
                index: 1,
                events: vec![EdgeEvent::delete(0, 1, 1)],
            })
            .unwrap();
        c.repair(&g, &delta, 1);
        for w in c.walks() {
            assert_eq!(w.nodes, vec![w.origin]);
        }
    }

    #[test]
    fn new_nodes_get_walks() {
        let mut g = graph_from(&[(0, 1)]);
        let mut c = WalkCorpus::init(&g, params(2, 3), 1).unwrap();
        let delta = g
            .apply_snapshot(&Snapshot {
                index: 1,
                events: vec![EdgeEvent::insert(1, 7, 1)],
            })
            .unwrap();
        let r = c.repair(&g, &delta, 1);
        assert_eq!(r.created.len(), 2);
        assert_eq!(c.walks_from(7).len(), 2);
        assert_eq!(c.len(), 6);
    }

    #[test]
    fn repair_is_independent_of_thread_count() {
        let edges: Vec<_> = (0..30u32).flat_map(|i| [(i, (i + 1) % 30), (i, (i * 7 + 3) % 30)]).collect();
        let g0 = graph_from(&edges);
        let mut results = Vec::new();
        for threads in [1, 3] {
            let mut g = g0.clone();
            let mut c = WalkCorpus::init(&g, params(3, 8), threads).unwrap();
            let delta = g
                .apply_snapshot(&Snapshot {
                    index: 1,
                    events: vec![EdgeEvent::delete(0, 1, 1), EdgeEvent::insert(5, 40, 1)],
                })
                .unwrap();
            c.repair(&g, &delta, threads);
            results.push(c);
        }
        assert_eq!(results[0], results[1]);
    }
}
