//! Skip-gram with negative sampling over walk corpora.
//!
//! The table holds an input and a context vector per node. For a center node
//! `c` with context node `o` and negatives `n_1..n_k` the per-pair loss is
//!
//! ```text
//! L = -ln s(u_c . v_o) - sum_k ln s(-u_c . v_nk)
//! ```
//!
//! with `s` the logistic function evaluated on inputs clamped to `[-30, 30]`.
//! Training walks a fixed window around every position and applies plain SGD
//! with a learning rate decaying linearly over the call.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::pool::{blocks, pool};
use crate::rng::{self, tag, Rng};
use crate::stream::NodeId;
use crate::walk::{RepairReport, WalkCorpus};

pub const SIGMOID_CLAMP: f64 = 30.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// `-ln s(x)` on the clamped input, computed without cancellation.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one (center, context, negatives) example.
pub fn sgns_pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(center, context))
        + negatives
            .iter()
            .map(|n| neg_log_sigmoid(-dot(center, n)))
            .sum::<f64>()
}

/// Analytic gradients of [`sgns_pair_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `dL/du = sum_t (s(u.v_t) - y_t) v_t` and `dL/dv_t = (s(u.v_t) - y_t) u`.
pub fn sgns_pair_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let d = center.len();
    let mut gc = vec![0.0; d];
    let g = sigmoid(dot(center, context)) - 1.0;
    for i in 0..d {
        gc[i] += g * context[i];
    }
    let gctx = center.iter().map(|u| g * u).collect();
    let mut gneg = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(center, n));
        for i in 0..d {
            gc[i] += g * n[i];
        }
        gneg.push(center.iter().map(|u| g * u).collect());
    }
    PairGradients {
        center: gc,
        context: gctx,
        negatives: gneg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgnsParams {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Exponent applied to node frequencies for the negative-sampling table.
    pub unigram_power: f64,
}

impl Default for SgnsParams {
    fn default() -> Self {
        SgnsParams {
            window: 5,
            negatives: 5,
            epochs: 1,
            learning_rate: 0.025,
            unigram_power: 0.75,
        }
    }
}

/// Floor for the decayed learning rate, as a fraction of the starting rate.
const MIN_LR_FRACTION: f64 = 1e-4;

/// Bound on every vector component, so that runaway learning rates saturate
/// instead of overflowing. Far outside anything reached in normal training.
pub const COMPONENT_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub walks: usize,
    /// Positive (center, context) pairs trained.
    pub pairs: u64,
    /// Mean per-pair loss, measured before each update.
    pub mean_loss: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("embedding dimension must be >= 1")]
    ZeroDimension,
    #[error("node {0} has no embedding")]
    UnknownNode(NodeId),
    #[error("embeddings at version {have} are newer than requested snapshot {want}")]
    FutureVersion { have: usize, want: usize },
    #[error("learning rate must be finite and >= 0, got {0}")]
    BadLearningRate(f64),
}

#[derive(Debug, Clone)]
struct Sampler {
    rows: Vec<usize>,
    dist: WeightedIndex<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    rows: BTreeMap<NodeId, usize>,
    ids: Vec<NodeId>,
    input: Vec<f64>,
    context: Vec<f64>,
    sampler: Option<Sampler>,
    version: Option<usize>,
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.rows == other.rows
            && self.input == other.input
            && self.context == other.context
    }
}

impl EmbeddingTable {
    /// Input vectors uniform in `(-0.5/d, 0.5/d)`, context vectors zero.
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, dim: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::ZeroDimension);
        }
        let mut t = EmbeddingTable {
            dim,
            seed,
            rows: BTreeMap::new(),
            ids: Vec::new(),
            input: Vec::new(),
            context: Vec::new(),
            sampler: None,
            version: None,
        };
        for v in nodes {
            t.insert_node(v);
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.rows.contains_key(&v)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.rows.keys().copied()
    }

    /// Last snapshot index folded into the table, if any.
    pub fn version(&self) -> Option<usize> {
        self.version
    }

    pub fn set_version(&mut self, v: usize) {
        self.version = Some(v);
    }

    /// Fails if the table has absorbed snapshots after `t`.
    pub fn check_causal(&self, t: usize) -> Result<(), EmbedError> {
        match self.version {
            Some(have) if have > t => Err(EmbedError::FutureVersion { have, want: t }),
            _ => Ok(()),
        }
    }

    /// Adds a node with a fresh input vector drawn from a stream keyed by
    /// the node id. Returns `false` if already present.
    pub fn insert_node(&mut self, v: NodeId) -> bool {
        if self.rows.contains_key(&v) {
            return false;
        }
        let row = self.ids.len();
        self.rows.insert(v, row);
        self.ids.push(v);
        let half = 0.5 / self.dim as f64;
        let mut r = rng::derive(self.seed, &[tag::EMBED_INIT, v as u64]);
        for _ in 0..self.dim {
            // Open interval: redraw the (measure-zero) lower endpoint.
            let mut x = r.random_range(-half..half);
            while x == -half {
                x = r.random_range(-half..half);
            }
            self.input.push(x);
        }
        self.context.extend(std::iter::repeat_n(0.0, self.dim));
        true
    }

    pub fn input(&self, v: NodeId) -> Option<&[f64]> {
        self.rows
            .get(&v)
            .map(|&r| &self.input[r * self.dim..(r + 1) * self.dim])
    }

    pub fn context(&self, v: NodeId) -> Option<&[f64]> {
        self.rows
            .get(&v)
            .map(|&r| &self.context[r * self.dim..(r + 1) * self.dim])
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.context).all(|x| x.is_finite())
    }

    /// Negative-sampling distribution proportional to `freq^power`. Nodes
    /// absent from the table are ignored.
    pub fn rebuild_sampler(&mut self, freq: &BTreeMap<NodeId, u64>, power: f64) {
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (&v, &f) in freq {
            if let (Some(&r), true) = (self.rows.get(&v), f > 0) {
                rows.push(r);
                weights.push((f as f64).powf(power));
            }
        }
        self.sampler = WeightedIndex::new(&weights).ok().map(|dist| Sampler { rows, dist });
    }

    fn rows_of(&self, walks: &[&[NodeId]], params: &SgnsParams) -> Result<Vec<Vec<usize>>, EmbedError> {
        if !(params.learning_rate.is_finite() && params.learning_rate >= 0.0) {
            return Err(EmbedError::BadLearningRate(params.learning_rate));
        }
        walks
            .iter()
            .map(|w| {
                w.iter()
                    .map(|v| self.rows.get(v).copied().ok_or(EmbedError::UnknownNode(*v)))
                    .collect()
            })
            .collect()
    }

    fn ensure_sampler(&mut self, walks: &[&[NodeId]], power: f64) {
        if self.sampler.is_none() {
            let mut freq = BTreeMap::new();
            for w in walks {
                for &v in *w {
                    *freq.entry(v).or_insert(0) += 1;
                }
            }
            self.rebuild_sampler(&freq, power);
        }
    }

    /// Single-threaded SGNS over `walks`. Deterministic for a fixed seed.
    pub fn train_on_walks(
        &mut self,
        walks: &[&[NodeId]],
        params: &SgnsParams,
        seed: u64,
    ) -> Result<TrainStats, EmbedError> {
        let rows = self.rows_of(walks, params)?;
        if rows.is_empty() {
            return Ok(TrainStats::default());
        }
        self.ensure_sampler(walks, params.unigram_power);
        let total = total_positions(&rows, params.epochs);
        let progress = AtomicU64::new(0);
        let mut r = rng::derive(seed, &[tag::EMBED_TRAIN, 0]);
        let dim = self.dim;
        let sampler = self.sampler.clone();
        let input = Cell::from_mut(self.input.as_mut_slice()).as_slice_of_cells();
        let context = Cell::from_mut(self.context.as_mut_slice()).as_slice_of_cells();
        let shard = Shard {
            dim,
            params,
            sampler: sampler.as_ref(),
            total,
            progress: &progress,
        };
        let (pairs, loss) = shard.run(input, context, &rows, &mut r);
        Ok(TrainStats {
            walks: rows.len(),
            pairs,
            mean_loss: if pairs > 0 { loss / pairs as f64 } else { 0.0 },
        })
    }

    /// Lock-free parallel training: walks are split into contiguous shards and
    /// workers update the shared table without synchronization. Results depend
    /// on scheduling.
    pub fn train_on_walks_hogwild(
        &mut self,
        walks: &[&[NodeId]],
        params: &SgnsParams,
        seed: u64,
        threads: usize,
    ) -> Result<TrainStats, EmbedError> {
        let rows = self.rows_of(walks, params)?;
        if rows.is_empty() {
            return Ok(TrainStats::default());
        }
        self.ensure_sampler(walks, params.unigram_power);
        let total = total_positions(&rows, params.epochs);
        let progress = AtomicU64::new(0);
        let to_atomic = |v: &[f64]| v.iter().map(|x| AtomicU64::new(x.to_bits())).collect::<Vec<_>>();
        let input = to_atomic(&self.input);
        let context = to_atomic(&self.context);
        let shard = Shard {
            dim: self.dim,
            params,
            sampler: self.sampler.as_ref(),
            total,
            progress: &progress,
        };
        let parts = blocks(rows.len(), threads);
        let results: Vec<(u64, f64)> = pool(threads).install(|| {
            parts
                .par_iter()
                .enumerate()
                .map(|(i, range)| {
                    let mut r = rng::derive(seed, &[tag::EMBED_TRAIN, i as u64]);
                    shard.run(input.as_slice(), context.as_slice(), &rows[range.clone()], &mut r)
                })
                .collect()
        });
        for (dst, src) in self.input.iter_mut().zip(&input) {
            *dst = f64::from_bits(src.load(Ordering::Relaxed));
        }
        for (dst, src) in self.context.iter_mut().zip(&context) {
            *dst = f64::from_bits(src.load(Ordering::Relaxed));
        }
        let pairs: u64 = results.iter().map(|r| r.0).sum();
        let loss: f64 = results.iter().map(|r| r.1).sum();
        Ok(TrainStats {
            walks: rows.len(),
            pairs,
            mean_loss: if pairs > 0 { loss / pairs as f64 } else { 0.0 },
        })
    }

    /// `node v_1 ... v_d` per line, input vectors only.
    pub fn write_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (&v, &r) in &self.rows {
            let vals: Vec<String> = self.input[r * self.dim..(r + 1) * self.dim]
                .iter()
                .map(|x| format!("{x:e}"))
                .collect();
            writeln!(w, "{v} {}", vals.join(" "))?;
        }
        Ok(())
    }
}

fn total_positions(rows: &[Vec<usize>], epochs: usize) -> u64 {
    (rows.iter().map(|w| w.len() as u64).sum::<u64>() * epochs as u64).max(1)
}

struct Shard<'a> {
    dim: usize,
    params: &'a SgnsParams,
    sampler: Option<&'a Sampler>,
    total: u64,
    progress: &'a AtomicU64,
}

impl Shard<'_> {
    fn run<C: CellsLike + ?Sized>(&self, input: &C, context: &C, walks: &[Vec<usize>], rng: &mut Rng) -> (u64, f64) {
        let d = self.dim;
        let p = self.params;
        let mut pairs = 0u64;
        let mut loss = 0.0;
        let mut u = vec![0.0; d];
        let mut grad = vec![0.0; d];
        let mut targets: Vec<(usize, f64)> = Vec::with_capacity(p.negatives + 1);
        for _ in 0..p.epochs {
            for walk in walks {
                for (i, &center) in walk.iter().enumerate() {
                    let done = self.progress.fetch_add(1, Ordering::Relaxed);
                    let lr = p.learning_rate * (1.0 - done as f64 / self.total as f64).max(MIN_LR_FRACTION);
                    let lo = i.saturating_sub(p.window);
                    let hi = (i + p.window).min(walk.len() - 1);
                    for (j, &ctx) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                        if j == i {
                            continue;
                        }
                        targets.clear();
                        targets.push((ctx, 1.0));
                        if let Some(s) = self.sampler {
                            for _ in 0..p.negatives {
                                let neg = s.rows[s.dist.sample(rng)];
                                if neg != ctx {
                                    targets.push((neg, 0.0));
                                }
                            }
                        }
                        for (k, uk) in u.iter_mut().enumerate() {
                            *uk = input.get(center * d + k);
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        for &(t, label) in &targets {
                            let base = t * d;
                            let mut f = 0.0;
                            for (k, &uk) in u.iter().enumerate() {
                                f += uk * context.get(base + k);
                            }
                            loss += if label > 0.5 {
                                neg_log_sigmoid(f)
                            } else {
                                neg_log_sigmoid(-f)
                            };
                            let g = (label - sigmoid(f)) * lr;
                            for k in 0..d {
                                let v = context.get(base + k);
                                grad[k] += g * v;
                                context.set(base + k, (v + g * u[k]).clamp(-COMPONENT_LIMIT, COMPONENT_LIMIT));
                            }
                        }
                        for k in 0..d {
                            input.set(center * d + k, (u[k] + grad[k]).clamp(-COMPONENT_LIMIT, COMPONENT_LIMIT));
                        }
                        pairs += 1;
                    }
                }
            }
        }
        (pairs, loss)
    }
}

/// Element access shared by `Cell` slices and atomic slices.
trait CellsLike {
    fn get(&self, i: usize) -> f64;
    fn set(&self, i: usize, v: f64);
}

impl CellsLike for [Cell<f64>] {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        self[i].get()
    }
    #[inline]
    fn set(&self, i: usize, v: f64) {
        self[i].set(v)
    }
}

impl CellsLike for [AtomicU64] {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self[i].load(Ordering::Relaxed))
    }
    #[inline]
    fn set(&self, i: usize, v: f64) {
        self[i].store(v.to_bits(), Ordering::Relaxed)
    }
}

/// Retrains on the walks repaired or created at one snapshot.
///
/// Nodes first seen in those walks get fresh vectors; the negative-sampling
/// table is rebuilt from the whole corpus; the table's version becomes the
/// report's snapshot index.
pub fn refresh_embeddings(
    table: &mut EmbeddingTable,
    corpus: &WalkCorpus,
    report: &RepairReport,
    params: &SgnsParams,
    seed: u64,
    hogwild_threads: Option<usize>,
) -> Result<TrainStats, EmbedError> {
    let ids: BTreeSet<_> = report.touched().collect();
    let walks: Vec<&[NodeId]> = ids.iter().map(|&id| corpus.walk(id).nodes.as_slice()).collect();
    for w in &walks {
        for &v in *w {
            table.insert_node(v);
        }
    }
    table.check_causal(report.index)?;
    let stats = if walks.is_empty() {
        TrainStats::default()
    } else {
        table.rebuild_sampler(&corpus.node_frequencies(), params.unigram_power);
        let seed = rng::mix64(seed ^ report.index as u64);
        match hogwild_threads {
            Some(t) if t > 1 => table.train_on_walks_hogwild(&walks, params, seed, t)?,
            _ => table.train_on_walks(&walks, params, seed)?,
        }
    };
    table.set_version(report.index);
    Ok(stats)
}
