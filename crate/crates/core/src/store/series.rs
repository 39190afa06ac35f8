use std::collections::BTreeMap;

use super::downsample::window_start;
use super::persist::TierState;
use super::{Aggregator, Bucket, Kind, RetentionPolicy, Sample, Value};

#[derive(Debug, Clone)]
pub(crate) struct Tier {
    window_ms: i64,
    aggregator: Aggregator,
    buckets: BTreeMap<i64, Bucket>,
    floor: Option<i64>,
}

impl Tier {
    fn fold(&mut self, start: i64, bucket: &Bucket) {
        self.buckets
            .entry(window_start(start, self.window_ms))
            .and_modify(|b| b.merge(bucket))
            .or_insert(*bucket);
    }
}

/// One stream: a raw tier plus rollup tiers, finest first.
#[derive(Debug, Clone)]
pub(crate) struct Series {
    kind: Kind,
    raw: BTreeMap<i64, Value>,
    raw_floor: Option<i64>,
    tiers: Vec<Tier>,
}

impl Series {
    pub fn new(kind: Kind, policy: Option<&RetentionPolicy>) -> Self {
        let tiers = policy
            .map(|p| {
                p.rollups
                    .iter()
                    .map(|r| Tier {
                        window_ms: r.window_ms,
                        aggregator: r.aggregator,
                        buckets: BTreeMap::new(),
                        floor: None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        Series {
            kind,
            raw: BTreeMap::new(),
            raw_floor: None,
            tiers,
        }
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn insert(&mut self, points: &[Sample]) {
        for p in points {
            self.raw.insert(p.timestamp, p.value.clone());
        }
    }

    /// Merged view over all tiers; a finer tier wins on equal timestamps.
    pub fn range(&self, t0: i64, t1: i64) -> Vec<Sample> {
        if t0 >= t1 {
            return Vec::new();
        }
        if self.tiers.iter().all(|t| t.buckets.is_empty()) {
            return self
                .raw
                .range(t0..t1)
                .map(|(ts, v)| Sample {
                    timestamp: *ts,
                    value: v.clone(),
                })
                .collect();
        }
        let mut merged: BTreeMap<i64, Value> = self
            .raw
            .range(t0..t1)
            .map(|(ts, v)| (*ts, v.clone()))
            .collect();
        for tier in &self.tiers {
            for (start, b) in tier.buckets.range(t0..t1) {
                merged
                    .entry(*start)
                    .or_insert_with(|| Value::Number(b.value(tier.aggregator)));
            }
        }
        merged
            .into_iter()
            .map(|(timestamp, value)| Sample { timestamp, value })
            .collect()
    }

    pub fn latest_before(&self, t: i64) -> Option<Sample> {
        let mut best = self.raw.range(..t).next_back().map(|(ts, v)| Sample {
            timestamp: *ts,
            value: v.clone(),
        });
        for tier in &self.tiers {
            if let Some((start, b)) = tier.buckets.range(..t).next_back() {
                if best.as_ref().is_none_or(|s| *start > s.timestamp) {
                    best = Some(Sample::number(*start, b.value(tier.aggregator)));
                }
            }
        }
        best
    }

    pub fn stored_points(&self) -> usize {
        self.raw.len() + self.tiers.iter().map(|t| t.buckets.len()).sum::<usize>()
    }

    pub fn raw_samples(&self) -> Vec<Sample> {
        self.raw
            .iter()
            .map(|(ts, v)| Sample {
                timestamp: *ts,
                value: v.clone(),
            })
            .collect()
    }

    pub fn apply_retention(&mut self, policy: &RetentionPolicy, now: i64) -> usize {
        let cutoff = now.saturating_sub(policy.raw_duration_ms);
        let kept = self.raw.split_off(&cutoff);
        let evicted = std::mem::replace(&mut self.raw, kept);
        let mut removed = evicted.len();
        self.raw_floor = Some(self.raw_floor.map_or(cutoff, |f| f.max(cutoff)));

        if self.kind == Kind::Numeric {
            if let Some(first) = self.tiers.first_mut() {
                for (ts, v) in &evicted {
                    if let Value::Number(v) = v {
                        first.fold(*ts, &Bucket::new(*ts, *v));
                    }
                }
            }
        }

        for i in 0..self.tiers.len() {
            let Some(keep) = policy.rollups.get(i).and_then(|r| r.keep_ms) else {
                continue;
            };
            let limit = now.saturating_sub(keep);
            let tier = &mut self.tiers[i];
            let w = tier.window_ms;
            let expired: Vec<i64> = tier
                .buckets
                .keys()
                .copied()
                .take_while(|start| start.saturating_add(w) <= limit)
                .collect();
            let moved: Vec<(i64, Bucket)> = expired
                .iter()
                .filter_map(|s| tier.buckets.remove(s).map(|b| (*s, b)))
                .collect();
            tier.floor = Some(tier.floor.map_or(limit, |f| f.max(limit)));
            removed += moved.len();
            if let Some(next) = self.tiers.get_mut(i + 1) {
                for (start, b) in &moved {
                    next.fold(*start, b);
                }
            }
        }
        removed
    }

    pub fn tier_state(&self) -> TierState {
        TierState {
            raw_floor: self.raw_floor,
            tiers: self
                .tiers
                .iter()
                .map(|t| (t.floor, t.buckets.iter().map(|(s, b)| (*s, *b)).collect()))
                .collect(),
        }
    }

    pub fn restore_tiers(&mut self, state: TierState) {
        self.raw_floor = state.raw_floor;
        for (tier, (floor, buckets)) in self.tiers.iter_mut().zip(state.tiers) {
            tier.floor = floor;
            tier.buckets = buckets.into_iter().collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Rollup;

    fn numeric(points: impl IntoIterator<Item = (i64, f64)>, policy: &RetentionPolicy) -> Series {
        let mut s = Series::new(Kind::Numeric, Some(policy));
        let pts: Vec<_> = points.into_iter().map(|(t, v)| Sample::number(t, v)).collect();
        s.insert(&pts);
        s
    }

    #[test]
    fn raw_only_eviction_counts_by_predicate() {
        let policy = RetentionPolicy::raw_only(100);
        let mut s = numeric((0..=200).step_by(10).map(|t| (t, t as f64)), &policy);
        let before = s.stored_points();
        let removed = s.apply_retention(&policy, 200);
        // samples at 0,10,...,90 are older than 200 - 100
        assert_eq!(removed, 10);
        assert_eq!(s.stored_points(), before - 10);
        assert!(s.range(i64::MIN, i64::MAX).iter().all(|p| p.timestamp >= 100));
    }

    #[test]
    fn evicted_region_reappears_as_window_means() {
        let policy = RetentionPolicy {
            raw_duration_ms: 100,
            rollups: vec![Rollup {
                window_ms: 50,
                aggregator: Aggregator::Mean,
                keep_ms: None,
            }],
        };
        let mut s = numeric((0..=200).step_by(10).map(|t| (t, t as f64)), &policy);
        s.apply_retention(&policy, 200);
        let old = s.range(0, 100);
        // windows [0,50): 0..40 mean 20; [50,100): 50..90 mean 70
        assert_eq!(old, vec![Sample::number(0, 20.0), Sample::number(50, 70.0)]);
        assert_eq!(s.range(100, 120), vec![Sample::number(100, 100.0), Sample::number(110, 110.0)]);
    }

    #[test]
    fn buckets_cascade_exactly() {
        let policy = RetentionPolicy {
            raw_duration_ms: 10,
            rollups: vec![
                Rollup {
                    window_ms: 10,
                    aggregator: Aggregator::Mean,
                    keep_ms: Some(20),
                },
                Rollup {
                    window_ms: 40,
                    aggregator: Aggregator::Mean,
                    keep_ms: None,
                },
            ],
        };
        let mut s = numeric((0..80).map(|t| (t, (t % 7) as f64)), &policy);
        let total_before = s.stored_points();
        s.apply_retention(&policy, 80);
        assert!(s.stored_points() <= total_before);
        // tier 1 window [0,40) must hold the exact mean of samples 0..39
        let expect: f64 = (0..40).map(|t| (t % 7) as f64).sum::<f64>() / 40.0;
        let first = s.range(0, 1);
        assert_eq!(first.len(), 1);
        assert!((first[0].value.as_number().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn symbolic_eviction_drops_without_rollup() {
        let policy = RetentionPolicy {
            raw_duration_ms: 10,
            rollups: vec![Rollup {
                window_ms: 5,
                aggregator: Aggregator::Last,
                keep_ms: None,
            }],
        };
        let mut s = Series::new(Kind::Symbolic, Some(&policy));
        s.insert(&[Sample::state(0, "up"), Sample::state(15, "down")]);
        assert_eq!(s.apply_retention(&policy, 20), 1);
        assert_eq!(s.range(0, 100), vec![Sample::state(15, "down")]);
    }

    #[test]
    fn latest_before_prefers_newest_across_tiers() {
        let policy = RetentionPolicy {
            raw_duration_ms: 10,
            rollups: vec![Rollup {
                window_ms: 10,
                aggregator: Aggregator::Max,
                keep_ms: None,
            }],
        };
        let mut s = numeric([(1, 1.0), (3, 5.0), (25, 2.0)], &policy);
        s.apply_retention(&policy, 20);
        assert_eq!(s.latest_before(25), Some(Sample::number(0, 5.0)));
        assert_eq!(s.latest_before(26), Some(Sample::number(25, 2.0)));
    }
}
