use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fnn::{LayerSizes, StrategyMap, Task};
use crate::kernels::{KernelConfig, MmStrategy, OuterReduction};
use crate::rtree::RTreeConfig;
use crate::sgns::SgnsParams;
use crate::stream::BinPolicy;
use crate::walk::WalkParams;

/// Everything one `run` needs. Loaded from a flat TOML file; every field has
/// a default so a file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub task: Task,
    pub labels: Option<PathBuf>,
    /// Number of snapshots. Ignored when `bin_window` is set.
    pub bins: usize,
    pub bin_window: Option<u64>,
    pub malformed_limit: usize,

    pub batch_size: usize,
    pub embedding_dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub sgns_window: usize,
    pub sgns_negatives: usize,
    pub sgns_epochs: usize,
    pub sgns_learning_rate: f64,
    pub unigram_power: f64,
    pub hogwild: bool,

    /// Hidden layer widths; defaults to `[128]` for links, `[256, 128]` for nodes.
    pub hidden: Option<Vec<usize>>,
    /// Output width for node classification; defaults to `max label + 1`.
    pub classes: Option<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub neg_ratio: usize,
    pub holdout: f64,

    pub strategy: MmStrategy,
    pub strategies: BTreeMap<String, MmStrategy>,
    pub outer_atomic: bool,
    pub threads: usize,
    pub leaf_capacity: usize,
    pub fanout: usize,

    pub seed: u64,
    pub output: PathBuf,
    pub dump_walks: bool,
    pub dump_embeddings: bool,
    pub dump_checkpoint: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sgns = SgnsParams::default();
        let walk = WalkParams::default();
        let tree = RTreeConfig::default();
        PipelineConfig {
            dataset: PathBuf::new(),
            task: Task::LinkPrediction,
            labels: None,
            bins: 50,
            bin_window: None,
            malformed_limit: crate::stream::DEFAULT_MALFORMED_LIMIT,
            batch_size: 1024,
            embedding_dim: 8,
            walks_per_node: walk.walks_per_node,
            walk_length: walk.length,
            sgns_window: sgns.window,
            sgns_negatives: sgns.negatives,
            sgns_epochs: sgns.epochs,
            sgns_learning_rate: sgns.learning_rate,
            unigram_power: sgns.unigram_power,
            hogwild: false,
            hidden: None,
            classes: None,
            iterations: 10,
            learning_rate: 0.3,
            neg_ratio: 1,
            holdout: 0.2,
            strategy: MmStrategy::RowWise,
            strategies: BTreeMap::new(),
            outer_atomic: false,
            threads: 1,
            leaf_capacity: tree.leaf_capacity,
            fanout: tree.fanout,
            seed: 0,
            output: PathBuf::from("out"),
            dump_walks: false,
            dump_embeddings: false,
            dump_checkpoint: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file. Relative `dataset`, `labels` and `output` paths
    /// are taken relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.dataset.is_relative() && !cfg.dataset.as_os_str().is_empty() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if let Some(l) = cfg.labels.as_mut() {
            if l.is_relative() {
                *l = base.join(&*l);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.dataset.as_os_str().is_empty() {
            return bad("dataset path is required".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("embedding_dim", self.embedding_dim),
            ("iterations", self.iterations),
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("threads", self.threads),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.bin_window == Some(0) || (self.bin_window.is_none() && self.bins == 0) {
            return bad("bins / bin_window must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must be in [0, 1), got {}", self.holdout));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if self.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return bad("hidden layer widths must be >= 1".into());
        }
        match self.task {
            Task::LinkPrediction => {
                if self.neg_ratio == 0 {
                    return bad("neg_ratio must be >= 1 for link prediction".into());
                }
            }
            Task::NodeClassification => {
                if self.labels.is_none() {
                    return bad("node classification needs a labels file".into());
                }
                if self.classes == Some(0) {
                    return bad("classes must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn bin_policy(&self) -> BinPolicy {
        match self.bin_window {
            Some(w) => BinPolicy::FixedWindow(w),
            None => BinPolicy::FixedCount(self.bins),
        }
    }

    pub fn walk_params(&self) -> WalkParams {
        WalkParams {
            walks_per_node: self.walks_per_node,
            length: self.walk_length,
            seed: self.seed,
        }
    }

    pub fn sgns_params(&self) -> SgnsParams {
        SgnsParams {
            window: self.sgns_window,
            negatives: self.sgns_negatives,
            epochs: self.sgns_epochs,
            learning_rate: self.sgns_learning_rate,
            unigram_power: self.unigram_power,
        }
    }

    pub fn rtree_config(&self) -> RTreeConfig {
        RTreeConfig {
            leaf_capacity: self.leaf_capacity,
            fanout: self.fanout,
        }
    }

    pub fn kernel_config(&self) -> KernelConfig {
        let outer = if self.outer_atomic {
            OuterReduction::Atomic
        } else {
            OuterReduction::Private
        };
        KernelConfig::new(self.threads).with_outer(outer)
    }

    pub fn strategy_map(&self) -> StrategyMap {
        StrategyMap {
            default: self.strategy,
            overrides: self.strategies.clone(),
        }
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match self.task {
            Task::LinkPrediction => vec![128],
            Task::NodeClassification => vec![256, 128],
        })
    }

    pub fn layer_sizes(&self, classes: usize) -> LayerSizes {
        let (input, output) = match self.task {
            Task::LinkPrediction => (2 * self.embedding_dim, 1),
            Task::NodeClassification => (self.embedding_dim, classes),
        };
        LayerSizes {
            input,
            hidden: self.hidden_layers(),
            output,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = PipelineConfig::from_toml_str("dataset = \"x.txt\"\nbatch_size = 64\n[strategies]\nY1 = \"inner\"\n").unwrap();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.iterations, 10);
        assert_eq!(c.neg_ratio, 1);
        assert_eq!(c.holdout, 0.2);
        assert_eq!(c.strategy_map().get("Y1"), MmStrategy::Inner);
        assert_eq!(c.strategy_map().get("R1"), MmStrategy::RowWise);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig {
            dataset: "d.txt".into(),
            ..Default::default()
        };
        c.strategies.insert("M1(2)".into(), MmStrategy::Outer);
        c.hidden = Some(vec![4, 3]);
        assert_eq!(PipelineConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
        let ok = PipelineConfig {
            dataset: "d.txt".into(),
            ..Default::default()
        };
        for c in [
            PipelineConfig { batch_size: 0, ..ok.clone() },
            PipelineConfig { embedding_dim: 0, ..ok.clone() },
            PipelineConfig { iterations: 0, ..ok.clone() },
            PipelineConfig { bins: 0, ..ok.clone() },
            PipelineConfig { holdout: 1.0, ..ok.clone() },
            PipelineConfig { neg_ratio: 0, ..ok.clone() },
            PipelineConfig { task: Task::NodeClassification, ..ok.clone() },
            PipelineConfig { dataset: PathBuf::new(), ..ok.clone() },
        ] {
            assert!(matches!(c.validate(), Err(PipelineError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn task_dependent_sizes() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.layer_sizes(0), LayerSizes::link(8));
        c.task = Task::NodeClassification;
        c.embedding_dim = 64;
        assert_eq!(c.layer_sizes(10), LayerSizes::node(64, 10));
    }
}
