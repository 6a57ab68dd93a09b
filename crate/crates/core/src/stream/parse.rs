use std::io::BufRead;

use super::{EdgeEvent, NodeId, StreamError};

pub const DEFAULT_MALFORMED_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub lines: usize,
    pub comments: usize,
    pub events: usize,
    pub self_loops: usize,
    pub malformed: usize,
    /// Field count detected from the first data line (3 or 4).
    pub columns: Option<usize>,
}

/// Lazy parser over `src dst [weight] time` lines.
///
/// A negative weight marks a deletion; any other weight is ignored.
/// Blank lines and lines starting with `#` or `%` are skipped. Self-loops are
/// dropped and counted. Malformed lines are skipped until more than `limit`
/// have been seen, at which point a single [`StreamError::Format`] is yielded
/// and iteration ends.
pub struct EdgeStream<R> {
    reader: R,
    buf: String,
    limit: usize,
    stats: ParseStats,
    first_bad: Option<(usize, String)>,
    done: bool,
}

pub fn parse_edge_stream<R: BufRead>(reader: R) -> EdgeStream<R> {
    EdgeStream {
        reader,
        buf: String::new(),
        limit: DEFAULT_MALFORMED_LIMIT,
        stats: ParseStats::default(),
        first_bad: None,
        done: false,
    }
}

impl<R: BufRead> EdgeStream<R> {
    pub fn with_malformed_limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    fn parse_line(&mut self, line: &str) -> Option<Result<EdgeEvent, ()>> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let cols = match self.stats.columns {
            Some(c) => c,
            None if fields.len() == 3 || fields.len() == 4 => {
                self.stats.columns = Some(fields.len());
                fields.len()
            }
            None => return Some(Err(())),
        };
        if fields.len() != cols {
            return Some(Err(()));
        }
        let src = fields[0].parse::<NodeId>();
        let dst = fields[1].parse::<NodeId>();
        let time = parse_time(fields[cols - 1]);
        match (src, dst, time) {
            (Ok(s), Ok(d), Some(t)) => {
                if s == d {
                    self.stats.self_loops += 1;
                    None
                } else if cols == 4 && fields[2].parse::<f64>().is_ok_and(|w| w < 0.0) {
                    Some(Ok(EdgeEvent::delete(s, d, t)))
                } else {
                    Some(Ok(EdgeEvent::insert(s, d, t)))
                }
            }
            _ => Some(Err(())),
        }
    }
}

fn parse_time(tok: &str) -> Option<u64> {
    if let Ok(t) = tok.parse::<u64>() {
        return Some(t);
    }
    match tok.parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 && t < u64::MAX as f64 => Some(t.floor() as u64),
        _ => None,
    }
}

impl<R: BufRead> Iterator for EdgeStream<R> {
    type Item = Result<EdgeEvent, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(StreamError::Io(e)));
                }
            }
            self.stats.lines += 1;
            let line = std::mem::take(&mut self.buf);
            let trimmed = line.trim();
            let result = if trimmed.is_empty() {
                None
            } else if trimmed.starts_with('#') || trimmed.starts_with('%') {
                self.stats.comments += 1;
                None
            } else {
                self.parse_line(trimmed)
            };
            match result {
                None => {}
                Some(Ok(ev)) => {
                    self.buf = line;
                    self.stats.events += 1;
                    return Some(Ok(ev));
                }
                Some(Err(())) => {
                    self.stats.malformed += 1;
                    if self.first_bad.is_none() {
                        self.first_bad = Some((self.stats.lines, trimmed.to_string()));
                    }
                    if self.stats.malformed > self.limit {
                        self.done = true;
                        let (line, text) = self.first_bad.clone().unwrap_or_default();
                        return Some(Err(StreamError::Format {
                            count: self.stats.malformed,
                            limit: self.limit,
                            line,
                            text,
                        }));
                    }
                }
            }
            self.buf = line;
        }
    }
}
