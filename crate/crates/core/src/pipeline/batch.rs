use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::PipelineError;
use crate::fnn::LabeledBatch;
use crate::matrix::Matrix;
use crate::rng::{self, tag};
use crate::sgns::EmbeddingTable;
use crate::stream::{normalize, NodeId, SnapshotDelta, TemporalGraph};

/// Link-prediction rows and the node pair behind each row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBatch {
    pub batch: LabeledBatch,
    pub pairs: Vec<(NodeId, NodeId)>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeBatch {
    pub batch: LabeledBatch,
    pub nodes: Vec<NodeId>,
    /// Affected nodes dropped for lack of a label.
    pub skipped: usize,
    pub fallback: bool,
}

fn embedding(table: &EmbeddingTable, v: NodeId) -> Result<&[f64], PipelineError> {
    table.input(v).ok_or(PipelineError::MissingEmbedding(v))
}

/// Positives are the edges added by `delta`, at most `B / (1 + ratio)` of
/// them; each is matched by `ratio` uniformly drawn node pairs that are not
/// edges of `graph`. Rows are shuffled. `None` when nothing was added.
pub fn build_link_batch(
    delta: &SnapshotDelta,
    graph: &TemporalGraph,
    table: &EmbeddingTable,
    batch_size: usize,
    neg_ratio: usize,
    seed: u64,
) -> Result<Option<LinkBatch>, PipelineError> {
    if delta.added.is_empty() {
        return Ok(None);
    }
    let mut rng = rng::derive(seed, &[tag::BATCH, delta.index as u64]);
    let mut positives: Vec<(NodeId, NodeId)> = delta.added.iter().map(|&(a, b)| normalize(a, b)).collect();
    let cap = (batch_size / (1 + neg_ratio)).max(1);
    if positives.len() > cap {
        positives.shuffle(&mut rng);
        positives.truncate(cap);
        positives.sort_unstable();
    }

    let nodes: Vec<NodeId> = graph.nodes().collect();
    let wanted = positives.len() * neg_ratio;
    let mut negatives = Vec::with_capacity(wanted);
    let max_attempts = 100 * wanted.max(1);
    let mut attempts = 0;
    while negatives.len() < wanted && attempts < max_attempts && nodes.len() >= 2 {
        attempts += 1;
        let a = nodes[rng.random_range(0..nodes.len())];
        let b = nodes[rng.random_range(0..nodes.len())];
        if a != b && !graph.has_edge(a, b) {
            negatives.push(normalize(a, b));
        }
    }

    let mut rows: Vec<((NodeId, NodeId), f64)> = positives
        .iter()
        .map(|&p| (p, 1.0))
        .chain(negatives.iter().map(|&p| (p, 0.0)))
        .collect();
    rows.shuffle(&mut rng);

    let dim = table.dim();
    let mut x = Vec::with_capacity(rows.len() * 2 * dim);
    let mut t = Vec::with_capacity(rows.len());
    for &((a, b), label) in &rows {
        x.extend_from_slice(embedding(table, a)?);
        x.extend_from_slice(embedding(table, b)?);
        t.push(label);
    }
    let n = rows.len();
    Ok(Some(LinkBatch {
        batch: LabeledBatch {
            x: Matrix::from_vec(n, 2 * dim, x).expect("row width is 2d"),
            targets: Matrix::from_vec(n, 1, t).expect("one target per row"),
        },
        pairs: rows.into_iter().map(|(p, _)| p).collect(),
        positives: positives.len(),
        negatives: negatives.len(),
    }))
}

/// Up to `B` labeled nodes from `affected`, or random labeled nodes known to
/// `table` when none of the affected nodes carries a label.
pub fn build_node_batch(
    labels: &BTreeMap<NodeId, usize>,
    affected: &BTreeSet<NodeId>,
    table: &EmbeddingTable,
    batch_size: usize,
    classes: usize,
    index: usize,
    seed: u64,
) -> Result<Option<NodeBatch>, PipelineError> {
    let mut rng = rng::derive(seed, &[tag::BATCH, index as u64]);
    let mut skipped = 0;
    let mut nodes: Vec<NodeId> = Vec::new();
    for &v in affected {
        if labels.contains_key(&v) {
            nodes.push(v);
        } else {
            skipped += 1;
        }
    }
    let fallback = nodes.is_empty();
    if fallback {
        nodes = labels.keys().copied().filter(|&v| table.contains(v)).collect();
    }
    if nodes.is_empty() {
        return Ok(None);
    }
    nodes.shuffle(&mut rng);
    nodes.truncate(batch_size);

    let dim = table.dim();
    let mut x = Vec::with_capacity(nodes.len() * dim);
    let mut t = vec![0.0; nodes.len() * classes];
    for (r, &v) in nodes.iter().enumerate() {
        x.extend_from_slice(embedding(table, v)?);
        let label = labels[&v];
        if label >= classes {
            return Err(PipelineError::Label(format!(
                "node {v} has label {label} but the network has {classes} outputs"
            )));
        }
        t[r * classes + label] = 1.0;
    }
    let n = nodes.len();
    Ok(Some(NodeBatch {
        batch: LabeledBatch {
            x: Matrix::from_vec(n, dim, x).expect("row width is d"),
            targets: Matrix::from_vec(n, classes, t).expect("one-hot rows"),
        },
        nodes,
        skipped,
        fallback,
    }))
}

/// Splits already-shuffled rows into (train, held-out). The held-out slice is
/// the first `round(n * fraction)` rows, kept to at least one row when
/// `n >= 2` and to at most `n - 1` rows so training always sees data.
pub fn split_holdout(batch: &LabeledBatch, fraction: f64) -> (LabeledBatch, Option<LabeledBatch>) {
    let n = batch.len();
    let mut k = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    } else {
        k = 0;
    }
    let eval: Vec<usize> = (0..k).collect();
    let train: Vec<usize> = (k..n).collect();
    let held = (k > 0).then(|| batch.select(&eval));
    (batch.select(&train), held)
}

/// Reads `node_id label` lines. `#` and `%` start comments.
pub fn read_labels<R: BufRead>(reader: R) -> Result<BTreeMap<NodeId, usize>, PipelineError> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Label(e.to_string()))?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with('%') {
            continue;
        }
        let mut it = s.split_whitespace();
        let parsed = (|| Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?)))();
        match parsed {
            Some((v, l)) if it.next().is_none() => {
                out.insert(v, l);
            }
            _ => return Err(PipelineError::Label(format!("line {}: expected `node_id label`, got {s:?}", i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{EdgeEvent, Snapshot};

    fn setup(edges: &[(NodeId, NodeId)], extra_nodes: &[NodeId]) -> (TemporalGraph, SnapshotDelta, EmbeddingTable) {
        let mut g = TemporalGraph::new();
        for &v in extra_nodes {
            g.add_node(v);
        }
        let snap = Snapshot {
            index: 0,
            events: edges.iter().map(|&(a, b)| EdgeEvent::insert(a, b, 0)).collect(),
        };
        let delta = g.apply_snapshot(&snap).unwrap();
        let table = EmbeddingTable::new(g.nodes(), 8, 3).unwrap();
        (g, delta, table)
    }

    #[test]
    fn link_rows_are_concatenated_embeddings() {
        let (g, delta, table) = setup(&[(1, 2)], &[3, 4, 5]);
        let lb = build_link_batch(&delta, &g, &table, 1024, 1, 7).unwrap().unwrap();
        assert_eq!(lb.batch.x.shape(), (2, 16));
        assert_eq!((lb.positives, lb.negatives), (1, 1));
        for (r, &(a, b)) in lb.pairs.iter().enumerate() {
            assert!(a < b);
            let row = lb.batch.x.row(r);
            assert_eq!(&row[..8], table.input(a).unwrap());
            assert_eq!(&row[8..], table.input(b).unwrap());
            assert_eq!(lb.batch.targets.get(r, 0) == 1.0, g.has_edge(a, b));
        }
    }

    #[test]
    fn link_batch_respects_cap_and_is_deterministic() {
        let edges: Vec<(NodeId, NodeId)> = (0..100).map(|i| (i, i + 100)).collect();
        let (g, delta, table) = setup(&edges, &[]);
        let lb = build_link_batch(&delta, &g, &table, 1000, 1, 1).unwrap().unwrap();
        assert_eq!(lb.batch.len(), 200);
        let small = build_link_batch(&delta, &g, &table, 64, 3, 1).unwrap().unwrap();
        assert_eq!((small.positives, small.negatives), (16, 48));
        assert_eq!(build_link_batch(&delta, &g, &table, 64, 3, 1).unwrap().unwrap(), small);
        assert_ne!(build_link_batch(&delta, &g, &table, 64, 3, 2).unwrap().unwrap().pairs, small.pairs);
    }

    #[test]
    fn empty_delta_signals_no_batch() {
        let (g, _, table) = setup(&[(1, 2)], &[]);
        let delta = SnapshotDelta {
            index: 1,
            ..Default::default()
        };
        assert!(build_link_batch(&delta, &g, &table, 8, 1, 0).unwrap().is_none());
    }

    #[test]
    fn complete_graph_yields_no_negatives() {
        let (g, delta, table) = setup(&[(1, 2), (1, 3), (2, 3)], &[]);
        let lb = build_link_batch(&delta, &g, &table, 64, 1, 0).unwrap().unwrap();
        assert_eq!((lb.positives, lb.negatives), (3, 0));
    }

    #[test]
    fn node_batch_one_hot_and_skips() {
        let (_, _, table) = setup(&[(1, 2), (3, 4)], &[]);
        let labels = BTreeMap::from([(1, 0), (2, 2), (4, 1)]);
        let affected = BTreeSet::from([1, 2, 3, 4]);
        let nb = build_node_batch(&labels, &affected, &table, 512, 3, 0, 9).unwrap().unwrap();
        assert_eq!(nb.skipped, 1);
        assert!(!nb.fallback);
        assert_eq!(nb.batch.x.shape(), (3, 8));
        for (r, v) in nb.nodes.iter().enumerate() {
            let row = nb.batch.targets.row(r);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row[labels[v]], 1.0);
            assert_eq!(nb.batch.x.row(r), table.input(*v).unwrap());
        }
        let nb = build_node_batch(&labels, &BTreeSet::from([3]), &table, 2, 3, 0, 9).unwrap().unwrap();
        assert!(nb.fallback);
        assert_eq!(nb.batch.len(), 2);
        assert!(build_node_batch(&labels, &affected, &table, 8, 2, 0, 9).is_err());
    }

    #[test]
    fn holdout_split_sizes() {
        let b = LabeledBatch {
            x: Matrix::zeros(10, 2),
            targets: Matrix::zeros(10, 1),
        };
        let (tr, ev) = split_holdout(&b, 0.2);
        assert_eq!((tr.len(), ev.unwrap().len()), (8, 2));
        let one = b.select(&[0]);
        assert!(split_holdout(&one, 0.2).1.is_none());
        let (tr, ev) = split_holdout(&b.select(&[0, 1]), 0.2);
        assert_eq!((tr.len(), ev.unwrap().len()), (1, 1));
        assert!(split_holdout(&b, 0.0).1.is_none());
    }

    #[test]
    fn labels_parse() {
        let l = read_labels("# c\n1 0\n2 3\n\n".as_bytes()).unwrap();
        assert_eq!(l, BTreeMap::from([(1, 0), (2, 3)]));
        assert!(read_labels("1 x\n".as_bytes()).is_err());
        assert!(read_labels("1 2 3\n".as_bytes()).is_err());
    }
}
