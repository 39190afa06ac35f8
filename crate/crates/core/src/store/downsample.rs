use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Kind, Result, Sample, StoreError, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Min,
    Max,
    Last,
    Count,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
            Aggregator::Last => "last",
            Aggregator::Count => "count",
        })
    }
}

impl FromStr for Aggregator {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "min" => Ok(Aggregator::Min),
            "max" => Ok(Aggregator::Max),
            "last" => Ok(Aggregator::Last),
            "count" => Ok(Aggregator::Count),
            other => Err(StoreError::InvalidRetention(format!(
                "unknown aggregator `{other}`"
            ))),
        }
    }
}

/// Mergeable per-window accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: u64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
    pub last_ts: i64,
    pub last: f64,
}

impl Bucket {
    pub fn new(ts: i64, v: f64) -> Self {
        Bucket {
            count: 1,
            sum: v,
            min: v,
            max: v,
            last_ts: ts,
            last: v,
        }
    }

    pub fn push(&mut self, ts: i64, v: f64) {
        self.merge(&Bucket::new(ts, v));
    }

    pub fn merge(&mut self, other: &Bucket) {
        self.count += other.count;
        self.sum += other.sum;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        if other.last_ts >= self.last_ts {
            self.last_ts = other.last_ts;
            self.last = other.last;
        }
    }

    pub fn value(&self, agg: Aggregator) -> f64 {
        match agg {
            Aggregator::Mean if self.min == self.max => self.min,
            Aggregator::Mean => (self.sum / self.count as f64).clamp(self.min, self.max),
            Aggregator::Min => self.min,
            Aggregator::Max => self.max,
            Aggregator::Last => self.last,
            Aggregator::Count => self.count as f64,
        }
    }
}

pub(crate) fn window_start(ts: i64, window_ms: i64) -> i64 {
    ts.div_euclid(window_ms) * window_ms
}

/// One output sample per non-empty window `[n*w, (n+1)*w)`, stamped at the
/// window start.
pub fn downsample(points: &[Sample], window_ms: i64, agg: Aggregator) -> Result<Vec<Sample>> {
    if window_ms <= 0 {
        return Err(StoreError::InvalidWindow(window_ms));
    }
    let mut buckets: BTreeMap<i64, Bucket> = BTreeMap::new();
    for p in points {
        let Value::Number(v) = p.value else {
            return Err(StoreError::KindMismatch {
                expected: Kind::Numeric,
                found: Kind::Symbolic,
            });
        };
        buckets
            .entry(window_start(p.timestamp, window_ms))
            .and_modify(|b| b.push(p.timestamp, v))
            .or_insert_with(|| Bucket::new(p.timestamp, v));
    }
    Ok(buckets
        .into_iter()
        .map(|(start, b)| Sample::number(start, b.value(agg)))
        .collect())
}
