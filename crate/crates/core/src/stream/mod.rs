//! Temporal edge streams: parsing, snapshot binning and the evolving graph.

mod graph;
mod parse;

pub use graph::{SnapshotDelta, TemporalGraph};
pub use parse::{parse_edge_stream, EdgeStream, ParseStats, DEFAULT_MALFORMED_LIMIT};

use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub time: u64,
    pub kind: EventKind,
}

impl EdgeEvent {
    pub fn insert(src: NodeId, dst: NodeId, time: u64) -> Self {
        EdgeEvent { src, dst, time, kind: EventKind::Insert }
    }

    pub fn delete(src: NodeId, dst: NodeId, time: u64) -> Self {
        EdgeEvent { src, dst, time, kind: EventKind::Delete }
    }

    /// Undirected key with the smaller endpoint first.
    pub fn key(&self) -> (NodeId, NodeId) {
        normalize(self.src, self.dst)
    }
}

#[inline]
pub fn normalize(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub index: usize,
    pub events: Vec<EdgeEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinPolicy {
    /// Split `[t_min, t_max]` into this many equal-width bins.
    FixedCount(usize),
    /// Bins of this width starting at `t_min`.
    FixedWindow(u64),
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error reading edge stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("{count} malformed lines exceed the limit of {limit}; first bad line {line}: {text:?}")]
    Format {
        count: usize,
        limit: usize,
        line: usize,
        text: String,
    },
    #[error("invalid binning policy: {0}")]
    Config(String),
    #[error("snapshot out of order: expected index {expected}, got {got}")]
    Sequence { expected: usize, got: usize },
}

/// Bins time-ordered events into contiguous snapshots `0..T`.
///
/// Unsorted input is sorted (stably) first. Empty bins are still emitted.
pub fn bin_into_snapshots(mut events: Vec<EdgeEvent>, policy: BinPolicy) -> Result<Vec<Snapshot>, StreamError> {
    match policy {
        BinPolicy::FixedCount(0) => return Err(StreamError::Config("snapshot count must be >= 1".into())),
        BinPolicy::FixedWindow(0) => return Err(StreamError::Config("window width must be >= 1".into())),
        _ => {}
    }
    if events.is_empty() {
        return Ok(Vec::new());
    }
    if !events.windows(2).all(|w| w[0].time <= w[1].time) {
        events.sort_by_key(|e| e.time);
    }
    let t_min = events[0].time;
    let t_max = events[events.len() - 1].time;
    let (count, bin): (usize, Box<dyn Fn(u64) -> usize>) = match policy {
        BinPolicy::FixedCount(t) => {
            let span = (t_max - t_min) as u128;
            let f = move |time: u64| {
                ((time - t_min) as u128 * t as u128)
                    .checked_div(span)
                    .map_or(0, |b| (b as usize).min(t - 1))
            };
            (t, Box::new(f))
        }
        BinPolicy::FixedWindow(w) => {
            let f = move |time: u64| ((time - t_min) / w) as usize;
            (((t_max - t_min) / w) as usize + 1, Box::new(f))
        }
    };
    let mut snaps: Vec<Snapshot> = (0..count).map(|index| Snapshot { index, events: Vec::new() }).collect();
    for e in events {
        snaps[bin(e.time)].events.push(e);
    }
    Ok(snaps)
}
