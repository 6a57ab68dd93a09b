//! Feed-forward network trained one batch at a time.
//!
//! Forward pass, for hidden layers `i = 1..n` with `Y_0 = X`:
//!
//! ```text
//! Y_i = relu(Y_{i-1} x W_i)
//! R_1 = Y_n x W_r
//! R_2 = sigmoid(R_1)            (one output, link prediction)
//!     = row_softmax(R_1)        (L outputs, node classification)
//! ```
//!
//! Backward pass, with `M_{n+1}^(1) = M_r^(1)` and `W_{n+1} = W_r`:
//!
//! ```text
//! M_r^(1) = (R_2 - T) / B                                element-wise
//! M_r^(2) = Y_n^T x M_r^(1)
//! M_i^(1) = (M_{i+1}^(1) x W_{i+1}^T) * relu'(Y_i)
//! M_i^(2) = Y_{i-1}^T x M_i^(1)
//! ```
//!
//! Every product runs through [`crate::kernels`] under the strategy assigned
//! to its label (`Y1`, `R1`, `Mr(2)`, `M1(1)`, `M1(2)`, ...), and is timed.
//! Everything else (activations, transposes, residuals, updates) is timed
//! under [`OTHERS_LABEL`].

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{matmul_timed_with, KernelConfig, KernelTiming, MmStrategy};
use crate::matrix::{Matrix, ShapeError};
use crate::rng::{self, tag};

pub const OTHERS_LABEL: &str = "Others";
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LinkPrediction,
    NodeClassification,
}

#[derive(Debug, Error)]
pub enum FnnError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("trace does not match model: {0}")]
    StaleTrace(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSizes {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl LayerSizes {
    /// Two-layer link-prediction network over concatenated pair embeddings.
    pub fn link(embedding_dim: usize) -> Self {
        LayerSizes {
            input: 2 * embedding_dim,
            hidden: vec![128],
            output: 1,
        }
    }

    /// Three-layer node-classification network.
    pub fn node(embedding_dim: usize, labels: usize) -> Self {
        LayerSizes {
            input: embedding_dim,
            hidden: vec![256, 128],
            output: labels,
        }
    }
}

pub fn forward_label(layer: usize) -> String {
    format!("Y{layer}")
}

pub fn error_label(layer: usize) -> String {
    format!("M{layer}(1)")
}

pub fn grad_label(layer: usize) -> String {
    format!("M{layer}(2)")
}

pub const READOUT_LABEL: &str = "R1";
pub const READOUT_GRAD_LABEL: &str = "Mr(2)";

/// Kernel labels in execution order for a network with `hidden` layers.
pub fn kernel_labels(hidden: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=hidden).map(forward_label).collect();
    v.push(READOUT_LABEL.into());
    v.push(READOUT_GRAD_LABEL.into());
    for i in (1..=hidden).rev() {
        v.push(error_label(i));
        v.push(grad_label(i));
    }
    v
}

/// Strategy per kernel label, with a fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyMap {
    pub default: MmStrategy,
    #[serde(default)]
    pub overrides: BTreeMap<String, MmStrategy>,
}

impl Default for StrategyMap {
    fn default() -> Self {
        StrategyMap::uniform(MmStrategy::RowWise)
    }
}

impl StrategyMap {
    pub fn uniform(s: MmStrategy) -> Self {
        StrategyMap {
            default: s,
            overrides: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, label: impl Into<String>, s: MmStrategy) -> &mut Self {
        self.overrides.insert(label.into(), s);
        self
    }

    pub fn get(&self, label: &str) -> MmStrategy {
        self.overrides.get(label).copied().unwrap_or(self.default)
    }
}

/// Kernel dispatch plus timing for one training context.
#[derive(Debug, Clone, Default)]
pub struct Engine {
    pub kernel: KernelConfig,
    pub strategies: StrategyMap,
    pub record: bool,
    timings: Vec<KernelTiming>,
    others_nanos: u64,
}

impl Engine {
    pub fn new(kernel: KernelConfig, strategies: StrategyMap) -> Self {
        Engine {
            kernel,
            strategies,
            record: false,
            timings: Vec::new(),
            others_nanos: 0,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    fn mm(&mut self, x: &Matrix, y: &Matrix, label: &str) -> Result<Matrix, FnnError> {
        let (z, t) = matmul_timed_with(x, y, self.strategies.get(label), &self.kernel, label)?;
        if self.record {
            self.timings.push(t);
        }
        Ok(z)
    }

    fn others<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.others_nanos += start.elapsed().as_nanos() as u64;
        out
    }

    pub fn timings(&self) -> &[KernelTiming] {
        &self.timings
    }

    pub fn others_nanos(&self) -> u64 {
        self.others_nanos
    }

    /// Drains recorded kernel timings and resets the "Others" counter.
    pub fn take_timings(&mut self) -> (Vec<KernelTiming>, u64) {
        let others = std::mem::take(&mut self.others_nanos);
        (std::mem::take(&mut self.timings), others)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnnModel {
    /// `W_1..W_n`.
    pub hidden: Vec<Matrix>,
    /// `W_r`.
    pub readout: Matrix,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub targets: Matrix,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> LabeledBatch {
        LabeledBatch {
            x: self.x.select_rows(rows),
            targets: self.targets.select_rows(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Matrix,
    /// `Y_1..Y_n`, post-activation.
    pub hidden: Vec<Matrix>,
    /// `R_1`.
    pub logits: Matrix,
    /// `R_2`.
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// `M_i^(1)` for `i = 1..n`.
    pub hidden_error: Vec<Matrix>,
    /// `M_i^(2)`, shaped like `W_i`.
    pub hidden_grad: Vec<Matrix>,
    /// `M_r^(1)`.
    pub readout_error: Matrix,
    /// `M_r^(2)`, shaped like `W_r`.
    pub readout_grad: Matrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterStats {
    pub losses: Vec<f64>,
}

impl FnnModel {
    /// Glorot-uniform weights, one derived stream per layer.
    pub fn init(sizes: &LayerSizes, learning_rate: f64, seed: u64) -> Result<Self, FnnError> {
        if sizes.input == 0 || sizes.output == 0 || sizes.hidden.contains(&0) {
            return Err(FnnError::Config(format!("all layer sizes must be >= 1: {sizes:?}")));
        }
        let mut dims = vec![sizes.input];
        dims.extend(&sizes.hidden);
        dims.push(sizes.output);
        let mut layers: Vec<Matrix> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let mut r = rng::derive(seed, &[tag::FNN_INIT, i as u64]);
                Matrix::random_uniform(w[0], w[1], -bound, bound, &mut r)
            })
            .collect();
        let readout = layers.pop().expect("at least one layer");
        Ok(FnnModel {
            hidden: layers,
            readout,
            learning_rate,
        })
    }

    pub fn sizes(&self) -> LayerSizes {
        LayerSizes {
            input: self.hidden.first().unwrap_or(&self.readout).rows(),
            hidden: self.hidden.iter().map(|w| w.cols()).collect(),
            output: self.readout.cols(),
        }
    }

    pub fn task(&self) -> Task {
        if self.readout.cols() == 1 {
            Task::LinkPrediction
        } else {
            Task::NodeClassification
        }
    }

    pub fn forward(&self, x: &Matrix, eng: &mut Engine) -> Result<ForwardTrace, FnnError> {
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (i, w) in self.hidden.iter().enumerate() {
            let prev = hidden.last().unwrap_or(x);
            let mut y = eng.mm(prev, w, &forward_label(i + 1))?;
            eng.others(|| y.map_inplace(|v| v.max(0.0)));
            hidden.push(y);
        }
        let last = hidden.last().unwrap_or(x);
        let logits = eng.mm(last, &self.readout, READOUT_LABEL)?;
        let output = eng.others(|| activate(&logits));
        Ok(ForwardTrace {
            input: x.clone(),
            hidden,
            logits,
            output,
        })
    }

    pub fn backward(&self, trace: &ForwardTrace, targets: &Matrix, eng: &mut Engine) -> Result<GradientSet, FnnError> {
        self.check_trace(trace)?;
        if targets.shape() != trace.output.shape() {
            return Err(ShapeError::new("targets", targets.shape(), trace.output.shape()).into());
        }
        let b = trace.output.rows().max(1) as f64;
        let readout_error = eng.others(|| {
            let data = trace
                .output
                .as_slice()
                .iter()
                .zip(targets.as_slice())
                .map(|(p, t)| (p - t) / b)
                .collect();
            Matrix::from_vec(targets.rows(), targets.cols(), data).expect("same shape")
        });
        let n = self.hidden.len();
        let last = trace.hidden.last().unwrap_or(&trace.input);
        let last_t = eng.others(|| last.transpose());
        let readout_grad = eng.mm(&last_t, &readout_error, READOUT_GRAD_LABEL)?;

        let mut hidden_error = vec![Matrix::zeros(0, 0); n];
        let mut hidden_grad = vec![Matrix::zeros(0, 0); n];
        for i in (0..n).rev() {
            let (upstream, w_next) = if i + 1 == n {
                (&readout_error, &self.readout)
            } else {
                (&hidden_error[i + 1], &self.hidden[i + 1])
            };
            let w_t = eng.others(|| w_next.transpose());
            let mut err = eng.mm(upstream, &w_t, &error_label(i + 1))?;
            let act = &trace.hidden[i];
            eng.others(|| {
                for (e, &y) in err.as_mut_slice().iter_mut().zip(act.as_slice()) {
                    if y <= 0.0 {
                        *e = 0.0;
                    }
                }
            });
            let prev = if i == 0 { &trace.input } else { &trace.hidden[i - 1] };
            let prev_t = eng.others(|| prev.transpose());
            hidden_grad[i] = eng.mm(&prev_t, &err, &grad_label(i + 1))?;
            hidden_error[i] = err;
        }
        Ok(GradientSet {
            hidden_error,
            hidden_grad,
            readout_error,
            readout_grad,
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<(), FnnError> {
        if trace.hidden.len() != self.hidden.len() {
            return Err(FnnError::StaleTrace(format!(
                "{} hidden activations for {} layers",
                trace.hidden.len(),
                self.hidden.len()
            )));
        }
        let mut prev = &trace.input;
        for (i, (w, y)) in self.hidden.iter().zip(&trace.hidden).enumerate() {
            if prev.cols() != w.rows() || y.cols() != w.cols() || y.rows() != prev.rows() {
                return Err(FnnError::StaleTrace(format!("layer {} shape drift", i + 1)));
            }
            prev = y;
        }
        if prev.cols() != self.readout.rows() || trace.output.cols() != self.readout.cols() {
            return Err(FnnError::StaleTrace("readout shape drift".into()));
        }
        Ok(())
    }

    /// `W <- W - lr * grad` for every layer.
    pub fn sgd_step(&mut self, grads: &GradientSet) -> Result<(), FnnError> {
        if grads.hidden_grad.len() != self.hidden.len() {
            return Err(FnnError::StaleTrace("gradient count does not match layers".into()));
        }
        let lr = self.learning_rate;
        for (w, g) in self.hidden.iter_mut().zip(&grads.hidden_grad) {
            w.sub_scaled(g, lr)?;
        }
        self.readout.sub_scaled(&grads.readout_grad, lr)?;
        Ok(())
    }

    /// `iterations` consecutive forward/loss/backward/update passes over one batch.
    pub fn train_batch_online(
        &mut self,
        batch: &LabeledBatch,
        iterations: usize,
        task: Task,
        eng: &mut Engine,
    ) -> Result<IterStats, FnnError> {
        if iterations == 0 {
            return Err(FnnError::Config("iterations per batch must be >= 1".into()));
        }
        let mut stats = IterStats::default();
        for _ in 0..iterations {
            let trace = self.forward(&batch.x, eng)?;
            let l = eng.others(|| loss(&trace, &batch.targets, task))?;
            let grads = self.backward(&trace, &batch.targets, eng)?;
            eng.others(|| self.sgd_step(&grads))?;
            stats.losses.push(l);
        }
        Ok(stats)
    }

    /// Fraction of rows predicted correctly: `R_2 >= 0.5` for one output,
    /// lowest-index argmax otherwise.
    pub fn evaluate(&self, batch: &LabeledBatch, eng: &mut Engine) -> Result<f64, FnnError> {
        let trace = self.forward(&batch.x, eng)?;
        accuracy(&trace.output, &batch.targets)
    }

    /// Plain-text checkpoint: a layer count, then each weight matrix with a
    /// `rows cols` header, readout last.
    pub fn write_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "fnn {} {:e}", self.hidden.len() + 1, self.learning_rate)?;
        for m in self.hidden.iter().chain(std::iter::once(&self.readout)) {
            m.write_text(w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, FnnError> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint"))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "fnn" {
            return Err(bad("bad checkpoint header").into());
        }
        let count: usize = parts[1].parse().map_err(|_| bad("bad layer count"))?;
        let learning_rate: f64 = parts[2].parse().map_err(|_| bad("bad learning rate"))?;
        let mut mats = Vec::with_capacity(count);
        for _ in 0..count {
            mats.push(Matrix::read_text(&mut lines)?);
        }
        let readout = mats.pop().ok_or_else(|| bad("no layers"))?;
        Ok(FnnModel {
            hidden: mats,
            readout,
            learning_rate,
        })
    }
}

/// Sigmoid for one column, row softmax otherwise.
pub fn activate(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    if logits.cols() == 1 {
        out.map_inplace(crate::sgns::sigmoid);
        return out;
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn validate_targets(targets: &Matrix, task: Task) -> Result<(), FnnError> {
    match task {
        Task::LinkPrediction => {
            if targets.cols() != 1 {
                return Err(FnnError::InvalidTargets(format!(
                    "link prediction needs one target column, got {}",
                    targets.cols()
                )));
            }
            if let Some(v) = targets.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(FnnError::InvalidTargets(format!("binary target expected, got {v}")));
            }
        }
        Task::NodeClassification => {
            for r in 0..targets.rows() {
                let row = targets.row(r);
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(FnnError::InvalidTargets(format!("row {r} is not one-hot")));
                }
            }
        }
    }
    Ok(())
}

/// Mean binary or categorical cross-entropy over the batch, with
/// probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss(trace: &ForwardTrace, targets: &Matrix, task: Task) -> Result<f64, FnnError> {
    if targets.shape() != trace.output.shape() {
        return Err(ShapeError::new("loss", trace.output.shape(), targets.shape()).into());
    }
    validate_targets(targets, task)?;
    let b = targets.rows();
    if b == 0 {
        return Ok(0.0);
    }
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let total: f64 = match task {
        Task::LinkPrediction => trace
            .output
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(&p, &t)| {
                let p = clamp(p);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum(),
        Task::NodeClassification => trace
            .output
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .filter(|(_, &t)| t == 1.0)
            .map(|(&p, _)| -clamp(p).ln())
            .sum(),
    };
    Ok(total / b as f64)
}

/// Lowest index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(output: &Matrix, targets: &Matrix) -> Result<f64, FnnError> {
    if output.shape() != targets.shape() {
        return Err(ShapeError::new("accuracy", output.shape(), targets.shape()).into());
    }
    if output.rows() == 0 {
        return Err(FnnError::InvalidTargets("cannot evaluate an empty batch".into()));
    }
    let correct = (0..output.rows())
        .filter(|&r| {
            if output.cols() == 1 {
                (output.get(r, 0) >= 0.5) == (targets.get(r, 0) >= 0.5)
            } else {
                argmax(output.row(r)) == argmax(targets.row(r))
            }
        })
        .count();
    Ok(correct as f64 / output.rows() as f64)
}
