//! Parallel dense-dense matrix multiplication.
//!
//! Four dataflows for `Z = X * Y` with `X: m x k`, `Y: k x n`:
//!
//! * [`MmStrategy::Inner`]: each output cell is a dot product of a row of `X`
//!   and a column of `Y`. Rows of `X` are split across workers.
//! * [`MmStrategy::RowWise`]: a row of `X` scales rows of `Y`, accumulating a
//!   full row of `Z`. Rows of `X` are split across workers.
//! * [`MmStrategy::ColumnWise`]: a column of `Y` scales columns of `X`,
//!   accumulating a full column of `Z`. Columns of `Y` are split across workers.
//! * [`MmStrategy::Outer`]: a column of `X` times a row of `Y` gives a partial
//!   sum for every cell of `Z`. The shared `k` dimension is split across
//!   workers, each accumulating into a private buffer; buffers are reduced in
//!   ascending worker order. [`OuterReduction::Atomic`] instead adds into one
//!   shared output with compare-and-swap.
//!
//! Summation order: for every strategy except `Outer`, each output cell is
//! `((0 + x0*y0) + x1*y1) + ...` in ascending `k`, so those three are bitwise
//! equal to a sequential triple loop at any thread count. `Outer` with one
//! worker matches too; with `t` workers each cell is the left fold of the `t`
//! block partials, so it is reproducible for a fixed `t` and within rounding
//! of the others.
//!
//! Partitioning is static: `ceil(dim / threads)` contiguous indices per
//! worker, with `threads` clamped to the partitioned dimension.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::matrix::{Matrix, ShapeError};
use crate::pool::{blocks, pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MmStrategy {
    Inner,
    Outer,
    RowWise,
    ColumnWise,
}

impl MmStrategy {
    pub const ALL: [MmStrategy; 4] = [
        MmStrategy::Inner,
        MmStrategy::Outer,
        MmStrategy::RowWise,
        MmStrategy::ColumnWise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MmStrategy::Inner => "inner",
            MmStrategy::Outer => "outer",
            MmStrategy::RowWise => "row-wise",
            MmStrategy::ColumnWise => "column-wise",
        }
    }
}

impl fmt::Display for MmStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown matmul strategy `{0}` (expected inner, outer, row-wise or column-wise)")]
pub struct UnknownStrategy(pub String);

impl FromStr for MmStrategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "inner" => Ok(MmStrategy::Inner),
            "outer" => Ok(MmStrategy::Outer),
            "rowwise" | "row" => Ok(MmStrategy::RowWise),
            "columnwise" | "colwise" | "column" | "col" => Ok(MmStrategy::ColumnWise),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

/// How `Outer` combines per-worker partial sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterReduction {
    /// Private accumulators, reduced in ascending worker order.
    #[default]
    Private,
    /// One shared output updated with atomic adds. Bit patterns vary run to run.
    Atomic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub threads: usize,
    pub outer: OuterReduction,
}

impl KernelConfig {
    pub fn new(threads: usize) -> Self {
        KernelConfig {
            threads: threads.max(1),
            outer: OuterReduction::Private,
        }
    }

    pub fn with_outer(mut self, outer: OuterReduction) -> Self {
        self.outer = outer;
        self
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::new(1)
    }
}

/// Wall time of one kernel call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelTiming {
    pub label: String,
    pub strategy: MmStrategy,
    pub threads: usize,
    pub nanos: u64,
}

impl KernelTiming {
    pub const CSV_HEADER: &'static str = "label,strategy,threads,nanos";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.label, self.strategy, self.threads, self.nanos
        )
    }
}

pub fn matmul(x: &Matrix, y: &Matrix, strategy: MmStrategy, threads: usize) -> Result<Matrix, ShapeError> {
    matmul_with(x, y, strategy, &KernelConfig::new(threads))
}

pub fn matmul_with(
    x: &Matrix,
    y: &Matrix,
    strategy: MmStrategy,
    cfg: &KernelConfig,
) -> Result<Matrix, ShapeError> {
    check(x, y)?;
    let mut z = Matrix::zeros(x.rows(), y.cols());
    matmul_into(x, y, &mut z, strategy, cfg)?;
    Ok(z)
}

/// Like [`matmul`], also reporting the compute time (output allocation excluded).
pub fn matmul_timed(
    x: &Matrix,
    y: &Matrix,
    strategy: MmStrategy,
    threads: usize,
    label: &str,
) -> Result<(Matrix, KernelTiming), ShapeError> {
    matmul_timed_with(x, y, strategy, &KernelConfig::new(threads), label)
}

pub fn matmul_timed_with(
    x: &Matrix,
    y: &Matrix,
    strategy: MmStrategy,
    cfg: &KernelConfig,
    label: &str,
) -> Result<(Matrix, KernelTiming), ShapeError> {
    check(x, y)?;
    let mut z = Matrix::zeros(x.rows(), y.cols());
    // Fault the output pages in before the clock starts.
    z.as_mut_slice().fill(0.0);
    let start = Instant::now();
    matmul_into(x, y, &mut z, strategy, cfg)?;
    let nanos = start.elapsed().as_nanos() as u64;
    Ok((
        z,
        KernelTiming {
            label: label.to_string(),
            strategy,
            threads: cfg.threads,
            nanos,
        },
    ))
}

fn check(x: &Matrix, y: &Matrix) -> Result<(), ShapeError> {
    if x.cols() != y.rows() {
        return Err(ShapeError::new("matmul", x.shape(), y.shape()));
    }
    Ok(())
}

/// Writes `x * y` into `z`, overwriting its contents.
pub fn matmul_into(
    x: &Matrix,
    y: &Matrix,
    z: &mut Matrix,
    strategy: MmStrategy,
    cfg: &KernelConfig,
) -> Result<(), ShapeError> {
    check(x, y)?;
    if z.shape() != (x.rows(), y.cols()) {
        return Err(ShapeError::new(
            "matmul output",
            z.shape(),
            (x.rows(), y.cols()),
        ));
    }
    let (m, k, n) = (x.rows(), x.cols(), y.cols());
    let out = z.as_mut_slice();
    out.fill(0.0);
    if m == 0 || n == 0 || k == 0 {
        return Ok(());
    }
    let (xs, ys) = (x.as_slice(), y.as_slice());
    match strategy {
        MmStrategy::Inner => by_rows(xs, ys, out, m, k, n, cfg.threads, inner_rows),
        MmStrategy::RowWise => by_rows(xs, ys, out, m, k, n, cfg.threads, rowwise_rows),
        MmStrategy::ColumnWise => columnwise(xs, ys, out, m, k, n, cfg.threads),
        MmStrategy::Outer => match cfg.outer {
            OuterReduction::Private => outer_private(xs, ys, out, m, k, n, cfg.threads),
            OuterReduction::Atomic => outer_atomic(xs, ys, out, m, k, n, cfg.threads),
        },
    }
    Ok(())
}

type RowKernel = fn(&[f64], &[f64], &mut [f64], std::ops::Range<usize>, usize, usize);

#[allow(clippy::too_many_arguments)]
fn by_rows(
    x: &[f64],
    y: &[f64],
    z: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    threads: usize,
    kernel: RowKernel,
) {
    let parts = blocks(m, threads);
    if parts.len() == 1 {
        kernel(x, y, z, 0..m, k, n);
        return;
    }
    let rows_per = parts[0].len();
    pool(threads).scope(|s| {
        for (range, chunk) in parts.into_iter().zip(z.chunks_mut(rows_per * n)) {
            s.spawn(move |_| kernel(x, y, chunk, range, k, n));
        }
    });
}

/// `z` holds exactly the output rows in `rows`.
fn inner_rows(x: &[f64], y: &[f64], z: &mut [f64], rows: std::ops::Range<usize>, k: usize, n: usize) {
    for (local, i) in rows.enumerate() {
        let xrow = &x[i * k..(i + 1) * k];
        let zrow = &mut z[local * n..(local + 1) * n];
        for (j, cell) in zrow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (p, &a) in xrow.iter().enumerate() {
                acc += a * y[p * n + j];
            }
            *cell = acc;
        }
    }
}

fn rowwise_rows(x: &[f64], y: &[f64], z: &mut [f64], rows: std::ops::Range<usize>, k: usize, n: usize) {
    for (local, i) in rows.enumerate() {
        let xrow = &x[i * k..(i + 1) * k];
        let zrow = &mut z[local * n..(local + 1) * n];
        for (p, &a) in xrow.iter().enumerate() {
            let yrow = &y[p * n..(p + 1) * n];
            for (c, &b) in zrow.iter_mut().zip(yrow) {
                *c += a * b;
            }
        }
    }
}

#[derive(Clone, Copy)]
struct SharedOut(*mut f64);
// SAFETY: workers write disjoint column sets of the output; see `columnwise`.
unsafe impl Send for SharedOut {}
unsafe impl Sync for SharedOut {}

fn columnwise(x: &[f64], y: &[f64], z: &mut [f64], m: usize, k: usize, n: usize, threads: usize) {
    let parts = blocks(n, threads);
    if parts.len() == 1 {
        columnwise_panel(x, y, z, 0..n, m, k, n);
        return;
    }
    let out = SharedOut(z.as_mut_ptr());
    let len = z.len();
    pool(threads).scope(|s| {
        for cols in parts {
            s.spawn(move |_| {
                let out = out;
                let w = cols.len();
                let mut panel = vec![0.0; m * w];
                columnwise_panel(x, y, &mut panel, cols.clone(), m, k, n);
                for i in 0..m {
                    for (c, j) in cols.clone().enumerate() {
                        let idx = i * n + j;
                        debug_assert!(idx < len);
                        // SAFETY: `idx < m * n`, and column `j` belongs to this
                        // worker's range only; the scope joins before `z` is read.
                        unsafe { *out.0.add(idx) = panel[i * w + c] };
                    }
                }
            });
        }
    });
}

/// Computes output columns `cols` into `panel` (`m x cols.len()`, row-major),
/// one column of `X` at a time against the matching row segment of `Y`.
fn columnwise_panel(
    x: &[f64],
    y: &[f64],
    panel: &mut [f64],
    cols: std::ops::Range<usize>,
    m: usize,
    k: usize,
    n: usize,
) {
    let w = cols.len();
    for p in 0..k {
        let yseg = &y[p * n + cols.start..p * n + cols.end];
        for i in 0..m {
            let a = x[i * k + p];
            let prow = &mut panel[i * w..(i + 1) * w];
            for (c, &b) in prow.iter_mut().zip(yseg) {
                *c += a * b;
            }
        }
    }
}

fn outer_block(x: &[f64], y: &[f64], acc: &mut [f64], ks: std::ops::Range<usize>, m: usize, k: usize, n: usize) {
    for p in ks {
        let yrow = &y[p * n..(p + 1) * n];
        for i in 0..m {
            let a = x[i * k + p];
            let arow = &mut acc[i * n..(i + 1) * n];
            for (c, &b) in arow.iter_mut().zip(yrow) {
                *c += a * b;
            }
        }
    }
}

fn outer_private(x: &[f64], y: &[f64], z: &mut [f64], m: usize, k: usize, n: usize, threads: usize) {
    let parts = blocks(k, threads);
    if parts.len() == 1 {
        outer_block(x, y, z, 0..k, m, k, n);
        return;
    }
    let workers = parts.len();
    let mut partials: Vec<Vec<f64>> = vec![Vec::new(); workers];
    let pool = pool(threads);
    pool.scope(|s| {
        for (ks, buf) in parts.into_iter().zip(partials.iter_mut()) {
            s.spawn(move |_| {
                *buf = vec![0.0; m * n];
                outer_block(x, y, buf, ks, m, k, n);
            });
        }
    });
    // Reduce in ascending worker order; rows of Z are split for the reduction.
    let rows = blocks(m, workers);
    let rows_per = rows[0].len();
    let partials = &partials;
    pool.scope(|s| {
        for (range, chunk) in rows.into_iter().zip(z.chunks_mut(rows_per * n)) {
            s.spawn(move |_| {
                let off = range.start * n;
                let len = chunk.len();
                for part in partials {
                    for (c, &v) in chunk.iter_mut().zip(&part[off..off + len]) {
                        *c += v;
                    }
                }
            });
        }
    });
}

fn atomic_add(cell: &AtomicU64, v: f64) {
    let mut cur = cell.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(cur) + v).to_bits();
        match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

fn outer_atomic(x: &[f64], y: &[f64], z: &mut [f64], m: usize, k: usize, n: usize, threads: usize) {
    let shared: Vec<AtomicU64> = (0..m * n).map(|_| AtomicU64::new(0f64.to_bits())).collect();
    let parts = blocks(k, threads);
    let shared_ref = &shared;
    let work = move |ks: std::ops::Range<usize>| {
        for p in ks {
            let yrow = &y[p * n..(p + 1) * n];
            for i in 0..m {
                let a = x[i * k + p];
                for (j, &b) in yrow.iter().enumerate() {
                    atomic_add(&shared_ref[i * n + j], a * b);
                }
            }
        }
    };
    if parts.len() == 1 {
        work(0..k);
    } else {
        pool(threads).scope(|s| {
            for ks in parts {
                s.spawn(move |_| work(ks));
            }
        });
    }
    for (c, a) in z.iter_mut().zip(&shared) {
        *c = f64::from_bits(a.load(Ordering::Relaxed));
    }
}
