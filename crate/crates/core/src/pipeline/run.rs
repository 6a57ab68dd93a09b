use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batch::{build_link_batch, build_node_batch, read_labels, split_holdout};
use super::{PipelineConfig, PipelineError};
use crate::fnn::{Engine, FnnModel, LabeledBatch, Task, OTHERS_LABEL};
use crate::rtree::RTree;
use crate::sgns::{refresh_embeddings, EmbeddingTable};
use crate::stream::{bin_into_snapshots, parse_edge_stream, BinPolicy, NodeId, ParseStats, Snapshot, TemporalGraph};
use crate::walk::WalkCorpus;

/// One row of `stage_metrics.csv`. Columns ending in `_ns` are wall times;
/// everything else is deterministic for a fixed config and seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub t: usize,
    pub events: usize,
    pub edges_added: usize,
    pub edges_removed: usize,
    pub affected_nodes: usize,
    pub new_nodes: usize,
    pub nodes: usize,
    pub edges: usize,
    pub touched_leaves: usize,
    pub split_leaves: usize,
    pub total_leaves: usize,
    pub walks_updated: usize,
    pub walks_created: usize,
    pub positions_preserved: usize,
    pub sgns_pairs: u64,
    pub sgns_loss: f64,
    pub batch_rows: usize,
    pub train_rows: usize,
    pub eval_rows: usize,
    pub skipped_labels: usize,
    pub train_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub accuracy_so_far: Option<f64>,
    pub construct_ns: u64,
    pub index_ns: u64,
    pub walk_ns: u64,
    pub embed_ns: u64,
    pub batch_ns: u64,
    pub train_ns: u64,
    pub eval_ns: u64,
}

/// One row of `kernel_timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub t: usize,
    pub label: String,
    pub strategy: String,
    pub threads: usize,
    pub nanos: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTotals {
    pub construct_ns: u64,
    pub index_ns: u64,
    pub walk_ns: u64,
    pub embed_ns: u64,
    pub batch_ns: u64,
    pub train_ns: u64,
    pub eval_ns: u64,
}

impl StageTotals {
    fn add(&mut self, m: &StageMetrics) {
        self.construct_ns += m.construct_ns;
        self.index_ns += m.index_ns;
        self.walk_ns += m.walk_ns;
        self.embed_ns += m.embed_ns;
        self.batch_ns += m.batch_ns;
        self.train_ns += m.train_ns;
        self.eval_ns += m.eval_ns;
    }

    pub fn entries(&self) -> [(&'static str, u64); 7] {
        [
            ("construct_ns", self.construct_ns),
            ("index_ns", self.index_ns),
            ("walk_ns", self.walk_ns),
            ("embed_ns", self.embed_ns),
            ("batch_ns", self.batch_ns),
            ("train_ns", self.train_ns),
            ("eval_ns", self.eval_ns),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub timestamps: usize,
    pub trained_steps: usize,
    pub evaluated_steps: usize,
    /// Running mean of held-out accuracy after the last timestamp.
    pub final_accuracy: Option<f64>,
    pub last_accuracy: Option<f64>,
    pub last_loss: Option<f64>,
    pub nodes: usize,
    pub edges: usize,
    pub walks: usize,
    pub skipped_labels: usize,
    pub totals: StageTotals,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "timestamps = {}", self.timestamps);
        let _ = writeln!(s, "trained_steps = {}", self.trained_steps);
        let _ = writeln!(s, "evaluated_steps = {}", self.evaluated_steps);
        let _ = writeln!(s, "final_accuracy = {}", opt(self.final_accuracy));
        let _ = writeln!(s, "last_accuracy = {}", opt(self.last_accuracy));
        let _ = writeln!(s, "last_loss = {}", opt(self.last_loss));
        let _ = writeln!(s, "nodes = {}", self.nodes);
        let _ = writeln!(s, "edges = {}", self.edges);
        let _ = writeln!(s, "walks = {}", self.walks);
        let _ = writeln!(s, "skipped_labels = {}", self.skipped_labels);
        for (k, v) in self.totals.entries() {
            let _ = writeln!(s, "total_{k} = {v}");
        }
        s
    }
}

/// Everything a run produced, before anything is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub metrics: Vec<StageMetrics>,
    pub kernels: Vec<KernelRecord>,
    pub graph: TemporalGraph,
    pub corpus: WalkCorpus,
    pub table: EmbeddingTable,
    pub model: FnnModel,
}

pub fn load_snapshots(
    path: &Path,
    policy: BinPolicy,
    malformed_limit: usize,
) -> Result<(Vec<Snapshot>, ParseStats), PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut stream = parse_edge_stream(BufReader::new(file)).with_malformed_limit(malformed_limit);
    let events = stream.by_ref().collect::<Result<Vec<_>, _>>()?;
    let stats = stream.stats();
    Ok((bin_into_snapshots(events, policy)?, stats))
}

fn elapsed(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

/// Runs the full per-timestamp loop in memory.
///
/// For each snapshot: apply it, update the index, repair walks, refresh
/// embeddings, build a batch, hold out a slice, train `K` iterations on the
/// rest and score the held-out slice.
pub fn execute(
    cfg: &PipelineConfig,
    snapshots: &[Snapshot],
    labels: Option<&BTreeMap<NodeId, usize>>,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let classes = match cfg.task {
        Task::LinkPrediction => 1,
        Task::NodeClassification => {
            let labels = labels.ok_or_else(|| PipelineError::Config("node classification needs labels".into()))?;
            cfg.classes.unwrap_or_else(|| labels.values().max().map_or(1, |m| m + 1))
        }
    };
    let threads = cfg.threads;
    let sgns = cfg.sgns_params();
    let hogwild = cfg.hogwild.then_some(threads);

    let mut graph = TemporalGraph::new();
    let mut tree = RTree::new(cfg.rtree_config())?;
    let mut corpus = WalkCorpus::init(&graph, cfg.walk_params(), threads)?;
    let mut table = EmbeddingTable::new(std::iter::empty(), cfg.embedding_dim, cfg.seed)?;
    let mut model = FnnModel::init(&cfg.layer_sizes(classes), cfg.learning_rate, cfg.seed)?;
    let mut eng = Engine::new(cfg.kernel_config(), cfg.strategy_map()).recording();
    let mut eval_eng = Engine::new(cfg.kernel_config(), cfg.strategy_map());

    let mut metrics = Vec::with_capacity(snapshots.len());
    let mut kernels = Vec::new();
    let mut summary = Summary::default();
    let mut acc_sum = 0.0;

    for snap in snapshots {
        let t = snap.index;
        let step = |e: PipelineError| e.at(t);
        let mut m = StageMetrics {
            t,
            events: snap.events.len(),
            ..Default::default()
        };

        let start = Instant::now();
        let delta = graph.apply_snapshot(snap).map_err(|e| step(e.into()))?;
        m.construct_ns = elapsed(start);
        m.edges_added = delta.added.len();
        m.edges_removed = delta.removed.len();
        m.affected_nodes = delta.affected.len();
        m.new_nodes = delta.new_nodes.len();
        m.nodes = graph.node_count();
        m.edges = graph.edge_count();

        let start = Instant::now();
        let dirty = tree.update(&delta);
        m.index_ns = elapsed(start);
        m.touched_leaves = dirty.touched_leaves;
        m.split_leaves = dirty.split_leaves;
        m.total_leaves = dirty.total_leaves;

        let start = Instant::now();
        let repair = corpus.repair(&graph, &delta, threads);
        m.walk_ns = elapsed(start);
        m.walks_updated = repair.walks_updated();
        m.walks_created = repair.created.len();
        m.positions_preserved = repair.positions_preserved;

        let start = Instant::now();
        let stats = refresh_embeddings(&mut table, &corpus, &repair, &sgns, cfg.seed, hogwild).map_err(|e| step(e.into()))?;
        m.embed_ns = elapsed(start);
        m.sgns_pairs = stats.pairs;
        m.sgns_loss = stats.mean_loss;
        table.check_causal(t).map_err(|e| step(e.into()))?;

        let start = Instant::now();
        let batch: Option<LabeledBatch> = match cfg.task {
            Task::LinkPrediction => build_link_batch(&delta, &graph, &table, cfg.batch_size, cfg.neg_ratio, cfg.seed)
                .map_err(step)?
                .map(|b| b.batch),
            Task::NodeClassification => {
                let affected: BTreeSet<NodeId> = delta.affected.union(&delta.new_nodes).copied().collect();
                let labels = labels.expect("checked above");
                build_node_batch(labels, &affected, &table, cfg.batch_size, classes, t, cfg.seed)
                    .map_err(step)?
                    .map(|b| {
                        m.skipped_labels = b.skipped;
                        b.batch
                    })
            }
        };
        let split = batch.as_ref().map(|b| split_holdout(b, cfg.holdout));
        m.batch_ns = elapsed(start);
        m.batch_rows = batch.as_ref().map_or(0, LabeledBatch::len);

        if let Some((train, held)) = split {
            m.train_rows = train.len();
            if !train.is_empty() {
                let start = Instant::now();
                let it = model
                    .train_batch_online(&train, cfg.iterations, cfg.task, &mut eng)
                    .map_err(|e| step(e.into()))?;
                m.train_ns = elapsed(start);
                m.train_loss = it.losses.last().copied();
                summary.trained_steps += 1;
                summary.last_loss = m.train_loss;
            }
            if let Some(held) = held {
                m.eval_rows = held.len();
                let start = Instant::now();
                let acc = model.evaluate(&held, &mut eval_eng).map_err(|e| step(e.into()))?;
                m.eval_ns = elapsed(start);
                m.eval_accuracy = Some(acc);
                summary.evaluated_steps += 1;
                summary.last_accuracy = Some(acc);
                acc_sum += acc;
            }
        }
        if summary.evaluated_steps > 0 {
            m.accuracy_so_far = Some(acc_sum / summary.evaluated_steps as f64);
        }

        let (timings, others) = eng.take_timings();
        kernels.extend(timings.into_iter().map(|k| KernelRecord {
            t,
            label: k.label,
            strategy: k.strategy.to_string(),
            threads: k.threads,
            nanos: k.nanos,
        }));
        if others > 0 {
            kernels.push(KernelRecord {
                t,
                label: OTHERS_LABEL.into(),
                strategy: "-".into(),
                threads,
                nanos: others,
            });
        }
        summary.totals.add(&m);
        summary.skipped_labels += m.skipped_labels;
        metrics.push(m);
    }

    summary.timestamps = metrics.len();
    summary.final_accuracy = metrics.last().and_then(|m| m.accuracy_so_far);
    summary.nodes = graph.node_count();
    summary.edges = graph.edge_count();
    summary.walks = corpus.len();
    Ok(RunOutput {
        summary,
        metrics,
        kernels,
        graph,
        corpus,
        table,
        model,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, PipelineError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| PipelineError::io(dir.join(name), e))
}

/// Loads the dataset, runs [`execute`] and writes `stage_metrics.csv`,
/// `kernel_timings.csv`, `summary.txt` and any requested dumps into the
/// output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Summary, PipelineError> {
    cfg.validate()?;
    let (snapshots, _) = load_snapshots(&cfg.dataset, cfg.bin_policy(), cfg.malformed_limit)?;
    let labels = match (&cfg.task, &cfg.labels) {
        (Task::NodeClassification, Some(p)) => {
            let f = File::open(p).map_err(|e| PipelineError::io(p, e))?;
            Some(read_labels(BufReader::new(f))?)
        }
        _ => None,
    };
    let out = execute(cfg, &snapshots, labels.as_ref())?;

    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    write_csv(dir, "stage_metrics.csv", &out.metrics)?;
    write_csv(dir, "kernel_timings.csv", &out.kernels)?;
    let io = |name: &str, e| PipelineError::io(dir.join(name), e);
    fs::write(dir.join("summary.txt"), out.summary.to_text()).map_err(|e| io("summary.txt", e))?;
    if cfg.dump_walks {
        let mut w = create(dir, "walks.txt")?;
        out.corpus.write_text(&mut w).and_then(|_| w.flush()).map_err(|e| io("walks.txt", e))?;
    }
    if cfg.dump_embeddings {
        let mut w = create(dir, "embeddings.txt")?;
        out.table.write_text(&mut w).and_then(|_| w.flush()).map_err(|e| io("embeddings.txt", e))?;
    }
    if cfg.dump_checkpoint {
        let mut w = create(dir, "model.txt")?;
        out.model.write_text(&mut w).and_then(|_| w.flush()).map_err(|e| io("model.txt", e))?;
    }
    Ok(out.summary)
}

/// Human-readable digest of an output directory.
pub fn report(dir: &Path) -> Result<String, PipelineError> {
    let path = dir.join("stage_metrics.csv");
    let mut rdr = csv::Reader::from_path(&path)?;
    let metrics: Vec<StageMetrics> = rdr.deserialize().collect::<Result<_, _>>()?;
    let mut totals = StageTotals::default();
    for m in &metrics {
        totals.add(m);
    }
    let all: u64 = totals.entries().iter().map(|e| e.1).sum();
    let mut s = String::new();
    let _ = writeln!(s, "timestamps: {}", metrics.len());
    if let Some(last) = metrics.last() {
        let _ = writeln!(s, "final graph: {} nodes, {} edges", last.nodes, last.edges);
        match last.accuracy_so_far {
            Some(a) => {
                let _ = writeln!(s, "accuracy so far: {a:.4}");
            }
            None => {
                let _ = writeln!(s, "accuracy so far: n/a");
            }
        }
    }
    let _ = writeln!(s, "stage totals:");
    for (k, v) in totals.entries() {
        let pct = 100.0 * v as f64 / all.max(1) as f64;
        let _ = writeln!(s, "  {:<10} {:>14} ns  {pct:5.1}%", k.trim_end_matches("_ns"), v);
    }

    let kpath = dir.join("kernel_timings.csv");
    if kpath.exists() {
        let mut rdr = csv::Reader::from_path(&kpath)?;
        let mut per: BTreeMap<String, (usize, u64)> = BTreeMap::new();
        for r in rdr.deserialize::<KernelRecord>() {
            let r = r?;
            let e = per.entry(r.label).or_default();
            e.0 += 1;
            e.1 += r.nanos;
        }
        let _ = writeln!(s, "kernel totals:");
        for (label, (count, ns)) in per {
            let _ = writeln!(s, "  {label:<8} {count:>6} calls {ns:>14} ns");
        }
    }
    Ok(s)
}

/// Drops every `_ns` column so that two runs can be compared byte for byte.
pub fn strip_timing_columns(csv_text: &str) -> Result<String, PipelineError> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| !headers[i].ends_with("_ns")).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &headers[i]))?;
    for rec in rdr.records() {
        let rec = rec?;
        w.write_record(keep.iter().map(|&i| &rec[i]))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
