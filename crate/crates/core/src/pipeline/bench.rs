use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use super::PipelineError;
use crate::fnn::{self, Engine, FnnModel, LabeledBatch, LayerSizes, StrategyMap, Task, OTHERS_LABEL};
use crate::kernels::{matmul_timed_with, KernelConfig, MmStrategy};
use crate::matrix::Matrix;
use crate::rng::{self, tag};

/// One product `(m x k) x (k x n)` named after the network symbol it computes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KernelShape {
    pub label: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl KernelShape {
    fn new(label: impl Into<String>, m: usize, k: usize, n: usize) -> Self {
        KernelShape {
            label: label.into(),
            m,
            k,
            n,
        }
    }
}

/// Every product in one training iteration of a network, in execution order.
pub fn kernel_shapes(sizes: &LayerSizes, batch: usize) -> Vec<KernelShape> {
    let mut widths = vec![sizes.input];
    widths.extend(&sizes.hidden);
    let n = sizes.hidden.len();
    let last = widths[n];
    let mut out: Vec<KernelShape> = (1..=n)
        .map(|i| KernelShape::new(fnn::forward_label(i), batch, widths[i - 1], widths[i]))
        .collect();
    out.push(KernelShape::new(fnn::READOUT_LABEL, batch, last, sizes.output));
    out.push(KernelShape::new(fnn::READOUT_GRAD_LABEL, last, batch, sizes.output));
    for i in (1..=n).rev() {
        let upstream = if i == n { sizes.output } else { widths[i + 1] };
        out.push(KernelShape::new(fnn::error_label(i), batch, upstream, widths[i]));
        out.push(KernelShape::new(fnn::grad_label(i), widths[i - 1], batch, widths[i]));
    }
    out
}

/// Named shape sets for `bench-mm`.
pub fn suite(name: &str, batch: Option<usize>) -> Result<Vec<KernelShape>, PipelineError> {
    match name {
        "link" => Ok(kernel_shapes(&LayerSizes::link(8), batch.unwrap_or(1024))),
        "node" => Ok(kernel_shapes(&LayerSizes::node(64, 10), batch.unwrap_or(512))),
        "square" => Ok([64, 257, 1024]
            .into_iter()
            .map(|s| KernelShape::new(format!("sq{s}"), s, s, s))
            .collect()),
        other => Err(PipelineError::Config(format!(
            "unknown shape suite {other:?} (expected link, node or square)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub label: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub strategy: MmStrategy,
    pub threads: usize,
    pub reps: usize,
    pub median_ns: u64,
    /// RowWise at one thread divided by this row's median.
    pub speedup: f64,
}

pub fn median(v: &mut [u64]) -> u64 {
    assert!(!v.is_empty(), "median of nothing");
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        v[m - 1] + (v[m] - v[m - 1]) / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchMmParams {
    pub strategies: Vec<MmStrategy>,
    pub threads: Vec<usize>,
    pub reps: usize,
    pub kernel: KernelConfig,
    pub seed: u64,
}

impl Default for BenchMmParams {
    fn default() -> Self {
        BenchMmParams {
            strategies: MmStrategy::ALL.to_vec(),
            threads: vec![1, 2, 4, 8],
            reps: 5,
            kernel: KernelConfig::default(),
            seed: 0,
        }
    }
}

fn time_once(x: &Matrix, y: &Matrix, s: MmStrategy, cfg: &KernelConfig) -> u64 {
    matmul_timed_with(x, y, s, cfg, "").expect("suite shapes agree").1.nanos
}

/// Median-of-`reps` timing for every (shape, strategy, threads) cell.
pub fn bench_mm(shapes: &[KernelShape], p: &BenchMmParams) -> Result<Vec<BenchRow>, PipelineError> {
    if p.reps == 0 || p.threads.contains(&0) {
        return Err(PipelineError::Config("reps and thread counts must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for (i, sh) in shapes.iter().enumerate() {
        let mut r = rng::derive(p.seed, &[tag::BENCH, i as u64]);
        let x = Matrix::random_uniform(sh.m, sh.k, -1.0, 1.0, &mut r);
        let y = Matrix::random_uniform(sh.k, sh.n, -1.0, 1.0, &mut r);
        let measure = |s: MmStrategy, t: usize| {
            let cfg = KernelConfig { threads: t, ..p.kernel };
            time_once(&x, &y, s, &cfg);
            let mut samples: Vec<u64> = (0..p.reps).map(|_| time_once(&x, &y, s, &cfg)).collect();
            median(&mut samples)
        };
        let mut cells = Vec::new();
        for &s in &p.strategies {
            for &t in &p.threads {
                cells.push((s, t, measure(s, t)));
            }
        }
        let base = cells
            .iter()
            .find(|c| c.0 == MmStrategy::RowWise && c.1 == 1)
            .map(|c| c.2)
            .unwrap_or_else(|| measure(MmStrategy::RowWise, 1));
        rows.extend(cells.into_iter().map(|(strategy, threads, ns)| BenchRow {
            label: sh.label.clone(),
            m: sh.m,
            k: sh.k,
            n: sh.n,
            strategy,
            threads,
            reps: p.reps,
            median_ns: ns,
            speedup: base as f64 / ns.max(1) as f64,
        }));
    }
    Ok(rows)
}

/// Best-strategy suite speedup per thread count: for each thread count the
/// strategy with the lowest summed median over all shapes, compared to the
/// same measure at the smallest thread count.
pub fn suite_speedups(rows: &[BenchRow]) -> BTreeMap<usize, f64> {
    let mut totals: BTreeMap<(usize, MmStrategy), u64> = BTreeMap::new();
    for r in rows {
        *totals.entry((r.threads, r.strategy)).or_default() += r.median_ns;
    }
    let mut best: BTreeMap<usize, u64> = BTreeMap::new();
    for (&(t, _), &ns) in &totals {
        best.entry(t).and_modify(|b| *b = (*b).min(ns)).or_insert(ns);
    }
    let Some((_, &base)) = best.iter().next() else {
        return BTreeMap::new();
    };
    best.into_iter().map(|(t, ns)| (t, base as f64 / ns.max(1) as f64)).collect()
}

pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| PipelineError::io("bench csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FnnBenchRow {
    pub label: String,
    pub strategy: String,
    pub threads: usize,
    pub median_ns: u64,
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct BenchFnnParams {
    pub sizes: LayerSizes,
    pub batch: usize,
    pub kernel: KernelConfig,
    pub strategies: StrategyMap,
    pub reps: usize,
    pub seed: u64,
}

impl BenchFnnParams {
    pub fn link() -> Self {
        BenchFnnParams {
            sizes: LayerSizes::link(8),
            batch: 1024,
            kernel: KernelConfig::default(),
            strategies: StrategyMap::default(),
            reps: 5,
            seed: 0,
        }
    }

    pub fn node() -> Self {
        BenchFnnParams {
            sizes: LayerSizes::node(64, 10),
            batch: 512,
            ..Self::link()
        }
    }
}

/// Random batch shaped for `sizes`: inputs in `[-1, 1)`, balanced binary or
/// uniformly drawn one-hot targets.
pub fn random_batch(sizes: &LayerSizes, batch: usize, seed: u64) -> LabeledBatch {
    let mut r = rng::derive(seed, &[tag::BENCH, u64::MAX]);
    let x = Matrix::random_uniform(batch, sizes.input, -1.0, 1.0, &mut r);
    let u = Matrix::random_uniform(batch, 1, 0.0, 1.0, &mut r);
    let mut t = Matrix::zeros(batch, sizes.output);
    for row in 0..batch {
        if sizes.output == 1 {
            t.set(row, 0, (row % 2) as f64);
        } else {
            let c = ((u.get(row, 0) * sizes.output as f64) as usize).min(sizes.output - 1);
            t.set(row, c, 1.0);
        }
    }
    LabeledBatch { x, targets: t }
}

/// Per-kernel breakdown of one training iteration: median over `reps`
/// iterations (after one warm-up) for every product plus the "Others" bucket.
pub fn bench_fnn(p: &BenchFnnParams) -> Result<Vec<FnnBenchRow>, PipelineError> {
    if p.reps == 0 {
        return Err(PipelineError::Config("reps must be >= 1".into()));
    }
    let task = if p.sizes.output == 1 {
        Task::LinkPrediction
    } else {
        Task::NodeClassification
    };
    let mut model = FnnModel::init(&p.sizes, 0.01, p.seed)?;
    let batch = random_batch(&p.sizes, p.batch, p.seed);
    let mut eng = Engine::new(p.kernel, p.strategies.clone()).recording();
    model.train_batch_online(&batch, 1, task, &mut eng)?;
    eng.take_timings();

    let mut samples: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for _ in 0..p.reps {
        model.train_batch_online(&batch, 1, task, &mut eng)?;
        let (timings, others) = eng.take_timings();
        for t in timings {
            samples.entry(t.label).or_default().push(t.nanos);
        }
        samples.entry(OTHERS_LABEL.into()).or_default().push(others);
    }
    let order = fnn::kernel_labels(p.sizes.hidden.len());
    let mut rows: Vec<FnnBenchRow> = order
        .iter()
        .map(String::as_str)
        .chain([OTHERS_LABEL])
        .map(|label| {
            let ns = median(samples.get_mut(label).expect("every label is timed"));
            let strategy = if label == OTHERS_LABEL {
                "-".to_string()
            } else {
                p.strategies.get(label).to_string()
            };
            FnnBenchRow {
                label: label.to_string(),
                strategy,
                threads: p.kernel.threads,
                median_ns: ns,
                share: 0.0,
            }
        })
        .collect();
    let total: u64 = rows.iter().map(|r| r.median_ns).sum();
    for r in &mut rows {
        r.share = r.median_ns as f64 / total.max(1) as f64;
    }
    Ok(rows)
}

pub fn write_fnn_csv<W: Write>(w: W, rows: &[FnnBenchRow]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| PipelineError::io("bench csv", e))?;
    Ok(())
}

pub fn print_table<W: Write>(mut w: W, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(w, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(w, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}
