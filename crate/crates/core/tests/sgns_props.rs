mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rtgl_core::rng;
use rtgl_core::sgns::{sgns_pair_gradients, sgns_pair_loss, EmbeddingTable, SgnsParams};
use rtgl_core::stream::NodeId;
use rtgl_core::Matrix;

const H: f64 = 1e-5;

fn random_vec(seed: u64, d: usize, scale: f64) -> Vec<f64> {
    Matrix::random_uniform(1, d, -scale, scale, &mut rng::derive(seed, &[])).into_vec()
}

/// Central difference of the pair loss along every coordinate of one operand.
fn numeric(f: &dyn Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut p = at.to_vec();
            let mut m = at.to_vec();
            p[i] += H;
            m[i] -= H;
            (f(&p) - f(&m)) / (2.0 * H)
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| common::relative_error(*x, *y)).fold(0.0, f64::max)
}

#[test]
fn pair_gradients_match_finite_differences() {
    let d = 8;
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let u = random_vec(case * 4, d, 1.0);
        let v = random_vec(case * 4 + 1, d, 1.0);
        let n1 = random_vec(case * 4 + 2, d, 1.0);
        let n2 = random_vec(case * 4 + 3, d, 1.0);
        let g = sgns_pair_gradients(&u, &v, &[&n1, &n2]);

        let gu = numeric(&|x| sgns_pair_loss(x, &v, &[&n1, &n2]), &u);
        let gv = numeric(&|x| sgns_pair_loss(&u, x, &[&n1, &n2]), &v);
        let gn1 = numeric(&|x| sgns_pair_loss(&u, &v, &[x, &n2]), &n1);
        let gn2 = numeric(&|x| sgns_pair_loss(&u, &v, &[&n1, x]), &n2);
        for (a, n) in [(&g.center, &gu), (&g.context, &gv), (&g.negatives[0], &gn1), (&g.negatives[1], &gn2)] {
            worst = worst.max(max_rel(a, n));
        }
    }
    assert!(worst <= 1e-6, "max relative error {worst:e}");
}

fn walks_from(seed: u64, nodes: u32, count: usize, len: usize) -> Vec<Vec<NodeId>> {
    let m = Matrix::random_uniform(count, len, 0.0, nodes as f64, &mut rng::derive(seed, &[7]));
    (0..count)
        .map(|r| m.row(r).iter().map(|&x| (x as NodeId).min(nodes - 1)).collect())
        .collect()
}

fn snapshot(t: &EmbeddingTable) -> BTreeMap<NodeId, (Vec<f64>, Vec<f64>)> {
    t.nodes()
        .map(|v| (v, (t.input(v).unwrap().to_vec(), t.context(v).unwrap().to_vec())))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn training_only_touches_walk_nodes_and_negatives(seed in any::<u64>(), negatives in 0usize..4) {
        let all: Vec<NodeId> = (0..40).collect();
        let mut t = EmbeddingTable::new(all.iter().copied(), 6, seed).unwrap();
        // Warm the context vectors so that "unchanged" is a meaningful check.
        let warm = walks_from(seed ^ 1, 40, 20, 6);
        let warm_refs: Vec<&[NodeId]> = warm.iter().map(Vec::as_slice).collect();
        t.train_on_walks(&warm_refs, &SgnsParams::default(), 1).unwrap();

        let pool: BTreeSet<NodeId> = (30..40).collect();
        let freq: BTreeMap<NodeId, u64> = pool.iter().map(|&v| (v, 1 + v as u64)).collect();
        t.rebuild_sampler(&freq, 0.75);
        let walks = walks_from(seed, 15, 4, 5);
        let refs: Vec<&[NodeId]> = walks.iter().map(Vec::as_slice).collect();
        let in_walks: BTreeSet<NodeId> = walks.iter().flatten().copied().collect();

        let before = snapshot(&t);
        let params = SgnsParams { negatives, window: 2, ..Default::default() };
        t.train_on_walks(&refs, &params, seed).unwrap();
        prop_assert!(t.is_finite());
        for (v, (inp, ctx)) in before {
            if !in_walks.contains(&v) {
                prop_assert_eq!(t.input(v).unwrap(), &inp[..]);
            }
            if !in_walks.contains(&v) && !pool.contains(&v) {
                prop_assert_eq!(t.context(v).unwrap(), &ctx[..]);
            }
        }
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let walks = walks_from(seed, 20, 10, 8);
        let refs: Vec<&[NodeId]> = walks.iter().map(Vec::as_slice).collect();
        let run = || {
            let mut t = EmbeddingTable::new(0..20, 5, seed).unwrap();
            t.train_on_walks(&refs, &SgnsParams::default(), seed).unwrap();
            t
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn extreme_learning_rate_stays_finite() {
    let walks = walks_from(3, 10, 50, 20);
    let refs: Vec<&[NodeId]> = walks.iter().map(Vec::as_slice).collect();
    let mut t = EmbeddingTable::new(0..10, 4, 3).unwrap();
    let params = SgnsParams {
        learning_rate: 50.0,
        epochs: 5,
        ..Default::default()
    };
    t.train_on_walks(&refs, &params, 3).unwrap();
    assert!(t.is_finite());
}
