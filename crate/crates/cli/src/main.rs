use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rtgl_core::fnn::{StrategyMap, Task};
use rtgl_core::kernels::{KernelConfig, MmStrategy, OuterReduction};
use rtgl_core::pipeline::bench::{self, BenchFnnParams, BenchMmParams};
use rtgl_core::pipeline::synth::{write_edges, write_labels};
use rtgl_core::pipeline::{gen_synthetic, load_snapshots, report, run_pipeline, PipelineConfig, SynthParams};
use rtgl_core::stream::{BinPolicy, DEFAULT_MALFORMED_LIMIT};

#[derive(Parser)]
#[command(name = "rtgl", version, about = "Run-time temporal graph learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and bin an edge stream, then print statistics.
    Ingest(IngestArgs),
    /// Run the full per-timestamp pipeline.
    Run(RunArgs),
    /// Time matrix products across strategies and thread counts.
    BenchMm(BenchMmArgs),
    /// Per-kernel breakdown of one training iteration.
    BenchFnn(BenchFnnArgs),
    /// Write a stochastic-block-model edge stream.
    GenSynth(GenSynthArgs),
    /// Summarize the CSVs in an output directory.
    Report {
        /// Directory holding stage_metrics.csv and kernel_timings.csv.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    /// Number of snapshots.
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Fixed bin width in dataset time units; overrides --bins.
    #[arg(long)]
    window: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MALFORMED_LIMIT)]
    malformed_limit: usize,
    /// Print one line per snapshot.
    #[arg(long)]
    per_snapshot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Link,
    Node,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Link => Task::LinkPrediction,
            TaskArg::Node => Task::NodeClassification,
        }
    }
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// Worker threads for kernels and walk repair.
    #[arg(long)]
    threads: Option<usize>,
    /// Per-kernel strategy, `label=name` (e.g. `Y1=inner`) or a bare name
    /// for the default. Repeatable.
    #[arg(long = "strategy", value_name = "KERNEL=NAME")]
    strategies: Vec<String>,
    /// Reduce Outer partial sums with atomic adds instead of private buffers.
    #[arg(long)]
    outer_atomic: bool,
}

impl KernelArgs {
    fn apply(&self, map: &mut StrategyMap) -> Result<()> {
        for s in &self.strategies {
            match s.split_once('=') {
                Some((label, name)) => {
                    map.set(label.trim(), name.trim().parse::<MmStrategy>()?);
                }
                None => map.default = s.trim().parse()?,
            }
        }
        Ok(())
    }

    fn kernel_config(&self, default_threads: usize) -> KernelConfig {
        let outer = if self.outer_atomic {
            OuterReduction::Atomic
        } else {
            OuterReduction::Private
        };
        KernelConfig::new(self.threads.unwrap_or(default_threads)).with_outer(outer)
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    walks_per_node: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    neg_ratio: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    hogwild: bool,
    #[arg(long)]
    dump_walks: bool,
    #[arg(long)]
    dump_embeddings: bool,
    #[arg(long)]
    dump_checkpoint: bool,
    #[command(flatten)]
    kernel: KernelArgs,
}

impl RunArgs {
    fn into_config(self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $val:expr),* $(,)?) => {$(if let Some(v) = $val { c.$field = v.into(); })*};
        }
        set!(
            dataset <- self.dataset,
            task <- self.task.map(Task::from),
            bins <- self.bins,
            batch_size <- self.batch_size,
            embedding_dim <- self.dim,
            walks_per_node <- self.walks_per_node,
            walk_length <- self.walk_length,
            iterations <- self.iterations,
            learning_rate <- self.learning_rate,
            neg_ratio <- self.neg_ratio,
            seed <- self.seed,
            output <- self.output,
            threads <- self.kernel.threads,
        );
        if let Some(l) = self.labels {
            c.labels = Some(l);
        }
        if let Some(h) = self.hidden {
            c.hidden = Some(h);
        }
        c.hogwild |= self.hogwild;
        c.dump_walks |= self.dump_walks;
        c.dump_embeddings |= self.dump_embeddings;
        c.dump_checkpoint |= self.dump_checkpoint;
        c.outer_atomic |= self.kernel.outer_atomic;
        let mut map = c.strategy_map();
        self.kernel.apply(&mut map)?;
        c.strategy = map.default;
        c.strategies = map.overrides;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BenchMmArgs {
    /// Shape suite: link, node or square.
    #[arg(long, default_value = "node")]
    suite: String,
    /// Batch size substituted into the link/node suites.
    #[arg(long)]
    batch: Option<usize>,
    /// Thread counts to sweep, comma separated.
    #[arg(long = "thread-list", value_delimiter = ',', default_value = "1,2,4,8")]
    thread_list: Vec<usize>,
    /// Strategies to sweep, comma separated (default: all four).
    #[arg(long = "strategies", value_delimiter = ',')]
    strategies: Option<Vec<MmStrategy>>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    outer_atomic: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchFnnArgs {
    #[arg(long, value_enum, default_value = "link")]
    task: TaskArg,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
    /// CSV destination; a table on stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    communities: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 50)]
    snapshots: u64,
    #[arg(long, default_value_t = 0.0)]
    p_delete: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge stream destination.
    #[arg(long)]
    output: PathBuf,
    /// Optional `node_id community` label file.
    #[arg(long)]
    labels: Option<PathBuf>,
}

fn writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let policy = match a.window {
        Some(w) => BinPolicy::FixedWindow(w),
        None => BinPolicy::FixedCount(a.bins),
    };
    let (snaps, stats) = load_snapshots(&a.input, policy, a.malformed_limit)?;
    let mut graph = rtgl_core::TemporalGraph::new();
    let mut out = io::stdout().lock();
    writeln!(out, "lines {}  events {}  comments {}  self-loops {}  malformed {}", stats.lines, stats.events, stats.comments, stats.self_loops, stats.malformed)?;
    for s in &snaps {
        let d = graph.apply_snapshot(s)?;
        if a.per_snapshot {
            writeln!(
                out,
                "t={:<5} events {:<6} +{:<6} -{:<6} nodes {:<8} edges {}",
                s.index,
                s.events.len(),
                d.added.len(),
                d.removed.len(),
                graph.node_count(),
                graph.edge_count()
            )?;
        }
    }
    writeln!(out, "snapshots {}  nodes {}  edges {}", snaps.len(), graph.node_count(), graph.edge_count())?;
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = a.into_config()?;
    let summary = run_pipeline(&cfg)?;
    print!("{}", summary.to_text());
    eprintln!("wrote {}", cfg.output.display());
    Ok(())
}

fn bench_mm(a: BenchMmArgs) -> Result<()> {
    let shapes = bench::suite(&a.suite, a.batch)?;
    let outer = if a.outer_atomic {
        OuterReduction::Atomic
    } else {
        OuterReduction::Private
    };
    let p = BenchMmParams {
        strategies: a.strategies.unwrap_or_else(|| MmStrategy::ALL.to_vec()),
        threads: a.thread_list,
        reps: a.reps,
        kernel: KernelConfig::new(1).with_outer(outer),
        seed: a.seed,
    };
    let rows = bench::bench_mm(&shapes, &p)?;
    bench::write_bench_csv(writer(&a.output)?, &rows)?;
    for (t, s) in bench::suite_speedups(&rows) {
        eprintln!("best-strategy suite speedup at {t} threads: {s:.2}x");
    }
    Ok(())
}

fn bench_fnn(a: BenchFnnArgs) -> Result<()> {
    let mut p = match a.task {
        TaskArg::Link => BenchFnnParams::link(),
        TaskArg::Node => BenchFnnParams::node(),
    };
    if let Some(d) = a.dim {
        p.sizes = match a.task {
            TaskArg::Link => rtgl_core::fnn::LayerSizes::link(d),
            TaskArg::Node => rtgl_core::fnn::LayerSizes::node(d, 10),
        };
    }
    if let Some(b) = a.batch {
        p.batch = b;
    }
    p.reps = a.reps;
    p.seed = a.seed;
    p.kernel = a.kernel.kernel_config(1);
    a.kernel.apply(&mut p.strategies)?;
    let rows = bench::bench_fnn(&p)?;
    if a.output.is_some() {
        bench::write_fnn_csv(writer(&a.output)?, &rows)?;
    } else {
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    r.strategy.clone(),
                    r.threads.to_string(),
                    r.median_ns.to_string(),
                    format!("{:.1}%", 100.0 * r.share),
                ]
            })
            .collect();
        bench::print_table(io::stdout().lock(), &["kernel", "strategy", "threads", "median_ns", "share"], &table)?;
    }
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let g = gen_synthetic(&SynthParams {
        nodes: a.nodes,
        communities: a.communities,
        p_in: a.p_in,
        p_out: a.p_out,
        snapshots: a.snapshots,
        p_delete: a.p_delete,
        seed: a.seed,
    })?;
    let mut w = writer(&Some(a.output.clone()))?;
    write_edges(&mut w, &g.events)?;
    w.flush()?;
    if let Some(l) = &a.labels {
        let mut w = writer(&Some(l.clone()))?;
        write_labels(&mut w, &g.labels)?;
        w.flush()?;
    }
    eprintln!("{} events written to {}", g.events.len(), a.output.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Run(a) => run(a),
        Command::BenchMm(a) => bench_mm(a),
        Command::BenchFnn(a) => bench_fnn(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(())
        }
    }
    .or_else(|e| match e.downcast_ref::<io::Error>() {
        Some(io) if io.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        _ => Err(e),
    })
}
