mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use rtgl_core::fnn::{Engine, FnnModel, LabeledBatch, LayerSizes};
use rtgl_core::pipeline::run::strip_timing_columns;
use rtgl_core::pipeline::synth::{community_of, write_edges, write_labels};
use rtgl_core::pipeline::{
    build_link_batch, gen_synthetic, report, run_pipeline, PipelineConfig, PipelineError, SynthParams,
};
use rtgl_core::sgns::EmbeddingTable;
use rtgl_core::stream::{bin_into_snapshots, BinPolicy, SnapshotDelta, TemporalGraph};
use rtgl_core::Matrix;

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn negatives_are_never_live_edges(seed in any::<u64>()) {
        let snaps = common::random_stream(seed, 30, 40, 25, 0.3);
        let mut g = TemporalGraph::new();
        let mut table = EmbeddingTable::new(std::iter::empty(), 4, seed).unwrap();
        let mut checked = 0;
        for s in &snaps {
            let d = g.apply_snapshot(s).unwrap();
            for v in g.nodes() {
                table.insert_node(v);
            }
            if let Some(lb) = build_link_batch(&d, &g, &table, 256, 3, seed).unwrap() {
                for (r, &(a, b)) in lb.pairs.iter().enumerate() {
                    let positive = lb.batch.targets.get(r, 0) == 1.0;
                    prop_assert_eq!(g.has_edge(a, b), positive);
                    prop_assert!(a < b);
                    if positive {
                        prop_assert!(d.added.contains(&(a, b)));
                    } else {
                        checked += 1;
                    }
                }
            }
        }
        prop_assert!(checked > 0);
    }
}

#[test]
fn ten_thousand_negatives_are_sound() {
    let p = SynthParams {
        nodes: 200,
        p_in: 0.3,
        p_out: 0.02,
        snapshots: 1,
        seed: 5,
        ..Default::default()
    };
    let synth = gen_synthetic(&p).unwrap();
    let snap = bin_into_snapshots(synth.events, BinPolicy::FixedCount(1)).unwrap();
    let mut g = TemporalGraph::new();
    let delta = g.apply_snapshot(&snap[0]).unwrap();
    let table = EmbeddingTable::new(g.nodes(), 2, 0).unwrap();
    let mut negatives = 0;
    let mut violations = 0;
    for round in 0..20u64 {
        let d = SnapshotDelta {
            index: round as usize,
            ..delta.clone()
        };
        let lb = build_link_batch(&d, &g, &table, 1 << 20, 1, round).unwrap().unwrap();
        for (r, &(a, b)) in lb.pairs.iter().enumerate() {
            if lb.batch.targets.get(r, 0) == 0.0 {
                negatives += 1;
                violations += g.has_edge(a, b) as usize;
            }
        }
    }
    assert!(negatives >= 10_000, "{negatives}");
    assert_eq!(violations, 0);
}

#[test]
fn block_model_edge_counts_within_three_sigma() {
    for seed in 0..5 {
        let p = SynthParams {
            nodes: 150,
            communities: 3,
            p_in: 0.2,
            p_out: 0.03,
            seed,
            ..Default::default()
        };
        let g = gen_synthetic(&p).unwrap();
        let (mut mean, mut var) = (0.0, 0.0);
        for a in 0..p.nodes {
            for b in a + 1..p.nodes {
                let q = if community_of(a, p.nodes, 3) == community_of(b, p.nodes, 3) {
                    p.p_in
                } else {
                    p.p_out
                };
                mean += q;
                var += q * (1.0 - q);
            }
        }
        let m = g.events.len() as f64;
        assert!((m - mean).abs() <= 3.0 * var.sqrt(), "seed {seed}: {m} vs {mean:.1} +- {:.1}", var.sqrt());
        let distinct: BTreeSet<_> = g.events.iter().map(|e| e.key()).collect();
        assert_eq!(distinct.len(), g.events.len());
    }
}

#[test]
fn untrained_model_is_a_coin_flip_on_balanced_rows() {
    let sizes = LayerSizes::link(8);
    let mut hits = 0.0;
    let seeds = 10;
    for seed in 0..seeds {
        let model = FnnModel::init(&sizes, 0.3, seed).unwrap();
        let x = Matrix::random_uniform(1000, 16, -0.0625, 0.0625, &mut rtgl_core::rng::derive(seed, &[3]));
        let t = Matrix::from_vec(1000, 1, (0..1000).map(|i| (i % 2) as f64).collect()).unwrap();
        let acc = model.evaluate(&LabeledBatch { x, targets: t }, &mut Engine::default()).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "seed {seed}: {acc}");
        hits += acc;
    }
    assert!((hits / seeds as f64 - 0.5).abs() <= 0.05);
}

#[test]
fn shipped_configs_load_and_validate() {
    for name in ["link.toml", "node.toml"] {
        let c = PipelineConfig::from_file(&repo_root().join("configs").join(name)).unwrap();
        c.validate().unwrap();
        assert!(c.dataset.exists(), "{}", c.dataset.display());
        if let Some(l) = &c.labels {
            assert!(l.exists());
        }
    }
    let link = PipelineConfig::from_file(&repo_root().join("configs/link.toml")).unwrap();
    assert_eq!((link.batch_size, link.embedding_dim, link.hidden_layers()), (1024, 8, vec![128]));
    let node = PipelineConfig::from_file(&repo_root().join("configs/node.toml")).unwrap();
    assert_eq!(node.layer_sizes(10), LayerSizes::node(64, 10));
    assert_eq!(node.batch_size, 512);
}

#[test]
fn run_writes_outputs_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("edges.txt");
    let labels = dir.path().join("labels.txt");
    let synth = gen_synthetic(&SynthParams {
        nodes: 40,
        snapshots: 6,
        p_in: 0.3,
        p_out: 0.02,
        p_delete: 0.2,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    write_edges(&mut std::fs::File::create(&data).unwrap(), &synth.events).unwrap();
    write_labels(&mut std::fs::File::create(&labels).unwrap(), &synth.labels).unwrap();

    let base = PipelineConfig {
        dataset: data,
        bins: 6,
        embedding_dim: 4,
        walks_per_node: 2,
        walk_length: 6,
        hidden: Some(vec![8]),
        iterations: 3,
        dump_walks: true,
        dump_embeddings: true,
        dump_checkpoint: true,
        ..Default::default()
    };
    let out = |name: &str| dir.path().join(name);
    let a = PipelineConfig { output: out("a"), ..base.clone() };
    let b = PipelineConfig { output: out("b"), ..base.clone() };
    let sa = run_pipeline(&a).unwrap();
    run_pipeline(&b).unwrap();
    assert_eq!(sa.timestamps, 6);
    for f in ["stage_metrics.csv", "kernel_timings.csv", "summary.txt", "walks.txt", "embeddings.txt", "model.txt"] {
        assert!(out("a").join(f).exists(), "{f}");
    }
    let read = |d: &str| std::fs::read_to_string(out(d).join("stage_metrics.csv")).unwrap();
    assert_eq!(read("a").lines().count(), 7);
    assert_eq!(strip_timing_columns(&read("a")).unwrap(), strip_timing_columns(&read("b")).unwrap());
    let model = FnnModel::read_text(std::io::BufReader::new(std::fs::File::open(out("a").join("model.txt")).unwrap())).unwrap();
    assert_eq!(model.sizes(), LayerSizes { input: 8, hidden: vec![8], output: 1 });
    assert!(report(&out("a")).unwrap().contains("timestamps: 6"));

    let node = PipelineConfig {
        task: rtgl_core::fnn::Task::NodeClassification,
        labels: Some(labels),
        output: out("n"),
        ..base.clone()
    };
    assert!(run_pipeline(&node).unwrap().final_accuracy.is_some());

    let missing = PipelineConfig {
        dataset: out("nope.txt"),
        ..base
    };
    assert!(matches!(run_pipeline(&missing), Err(PipelineError::Io { .. })));
}
