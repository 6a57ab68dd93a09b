#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng as _;
use rtgl_core::rng;
use rtgl_core::stream::{normalize, EdgeEvent, NodeId, Snapshot};
use rtgl_core::Matrix;

/// Ascending-k triple loop.
pub fn naive_matmul(x: &Matrix, y: &Matrix) -> Matrix {
    let (m, k, n) = (x.rows(), x.cols(), y.cols());
    let mut z = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += x.get(i, p) * y.get(p, j);
            }
            z.set(i, j, acc);
        }
    }
    z
}

/// Random insert/delete snapshots over `nodes` ids. Deletions only target
/// edges that a set-based shadow graph currently holds, so roughly
/// `delete_share` of each snapshot's events remove live edges.
pub fn random_stream(seed: u64, nodes: u32, snapshots: usize, per_snapshot: usize, delete_share: f64) -> Vec<Snapshot> {
    let mut r = rng::derive(seed, &[0xfeed]);
    let mut live: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut out = Vec::with_capacity(snapshots);
    for index in 0..snapshots {
        let mut events = Vec::with_capacity(per_snapshot);
        for _ in 0..per_snapshot {
            if !live.is_empty() && r.random_bool(delete_share) {
                let k = r.random_range(0..live.len());
                let e = *live.iter().nth(k).unwrap();
                live.remove(&e);
                events.push(EdgeEvent::delete(e.0, e.1, index as u64));
            } else {
                let a = r.random_range(0..nodes);
                let b = r.random_range(0..nodes);
                if a == b {
                    continue;
                }
                live.insert(normalize(a, b));
                events.push(EdgeEvent::insert(a, b, index as u64));
            }
        }
        out.push(Snapshot { index, events });
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}
