mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rtgl_core::rtree::{LeafId, RTree, RTreeConfig};
use rtgl_core::stream::{NodeId, TemporalGraph};

fn snapshot_leaves(tree: &RTree) -> BTreeMap<LeafId, Vec<u8>> {
    tree.leaves().into_iter().map(|l| (l, tree.leaf_bytes(l))).collect()
}

/// Every node appears in exactly one leaf, and the locator agrees with a scan.
fn check_locator(tree: &RTree, graph: &TemporalGraph) -> Result<(), TestCaseError> {
    let mut scanned: BTreeMap<NodeId, LeafId> = BTreeMap::new();
    for leaf in tree.leaves() {
        let mbr = tree.leaf_mbr(leaf).expect("leaf has an interval");
        for &v in tree.leaf_entries(leaf) {
            prop_assert!(mbr.contains_key(v as u64));
            prop_assert!(scanned.insert(v, leaf).is_none(), "node {} in two leaves", v);
        }
    }
    let nodes: BTreeSet<NodeId> = graph.nodes().collect();
    prop_assert_eq!(scanned.keys().copied().collect::<BTreeSet<_>>(), nodes);
    for (v, leaf) in scanned {
        prop_assert_eq!(tree.locate(v).unwrap(), leaf);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn incremental_updates_keep_untouched_leaves(
        seed in any::<u64>(),
        leaf_capacity in 2usize..12,
        fanout in 2usize..6,
    ) {
        let cfg = RTreeConfig { leaf_capacity, fanout };
        let snaps = common::random_stream(seed, 120, 25, 8, 0.3);
        let mut g = TemporalGraph::new();
        let mut tree = RTree::new(cfg).unwrap();
        for s in &snaps {
            let before = snapshot_leaves(&tree);
            let d = g.apply_snapshot(s).unwrap();
            let report = tree.update(&d);
            let dirty = tree.dirty_leaves();
            for (leaf, bytes) in &before {
                if !dirty.contains(leaf) {
                    prop_assert_eq!(&tree.leaf_bytes(*leaf), bytes);
                }
            }
            prop_assert!(report.touched_leaves <= report.affected_nodes);
            prop_assert_eq!(report.total_leaves, tree.leaf_count());
            prop_assert!(tree.check_invariants().is_ok(), "{:?}", tree.check_invariants());
            check_locator(&tree, &g)?;
        }
    }

    #[test]
    fn bulk_build_indexes_every_node(seed in any::<u64>(), leaf_capacity in 2usize..10) {
        let mut g = TemporalGraph::new();
        for s in common::random_stream(seed, 80, 5, 20, 0.2) {
            g.apply_snapshot(&s).unwrap();
        }
        prop_assume!(!g.is_empty());
        let tree = RTree::build(&g, RTreeConfig { leaf_capacity, fanout: 4 }).unwrap();
        prop_assert_eq!(tree.len(), g.node_count());
        prop_assert!(tree.check_invariants().is_ok());
        check_locator(&tree, &g)?;
    }
}

#[test]
fn rejects_degenerate_configs() {
    assert!(RTree::new(RTreeConfig { leaf_capacity: 0, fanout: 4 }).is_err());
    assert!(RTree::new(RTreeConfig { leaf_capacity: 4, fanout: 1 }).is_err());
    assert!(RTree::build(&TemporalGraph::new(), RTreeConfig::default()).is_err());
}
