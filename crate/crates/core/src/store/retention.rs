use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Aggregator, Result, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub window_ms: i64,
    pub aggregator: Aggregator,
    /// `None` keeps rollup buckets forever.
    pub keep_ms: Option<i64>,
}

/// Raw samples older than `raw_duration_ms` move into the rollup tiers, finest
/// first; rollup buckets older than their keep duration move to the next tier
/// (or are dropped from the last one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub raw_duration_ms: i64,
    #[serde(default)]
    pub rollups: Vec<Rollup>,
}

impl RetentionPolicy {
    pub fn raw_only(raw_duration_ms: i64) -> Self {
        RetentionPolicy {
            raw_duration_ms,
            rollups: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_duration_ms <= 0 {
            return Err(StoreError::InvalidRetention(
                "raw duration must be positive".into(),
            ));
        }
        let mut prev = 0;
        for r in &self.rollups {
            if r.window_ms <= prev {
                return Err(StoreError::InvalidRetention(
                    "rollup windows must be positive and strictly increasing".into(),
                ));
            }
            if matches!(r.keep_ms, Some(k) if k <= 0) {
                return Err(StoreError::InvalidRetention(
                    "rollup keep duration must be positive".into(),
                ));
            }
            prev = r.window_ms;
        }
        Ok(())
    }
}

/// `raw_ms[;window_ms:aggregator:keep_ms|inf]...`, e.g. `3600000;60000:mean:inf`.
impl FromStr for RetentionPolicy {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| StoreError::InvalidRetention(format!("{what} in `{s}`"));
        let mut parts = s.split(';');
        let raw = parts
            .next()
            .and_then(|p| p.trim().parse::<i64>().ok())
            .ok_or_else(|| bad("bad raw duration"))?;
        let mut rollups = Vec::new();
        for part in parts {
            let fields: Vec<&str> = part.trim().split(':').collect();
            let [w, agg, keep] = fields[..] else {
                return Err(bad("rollup must be window:aggregator:keep"));
            };
            let window_ms = w.parse().map_err(|_| bad("bad rollup window"))?;
            let aggregator = agg.parse()?;
            let keep_ms = match keep {
                "inf" => None,
                k => Some(k.parse().map_err(|_| bad("bad keep duration"))?),
            };
            rollups.push(Rollup {
                window_ms,
                aggregator,
                keep_ms,
            });
        }
        let policy = RetentionPolicy {
            raw_duration_ms: raw,
            rollups,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl fmt::Display for RetentionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.raw_duration_ms)?;
        for r in &self.rollups {
            write!(f, ";{}:{}:", r.window_ms, r.aggregator)?;
            match r.keep_ms {
                Some(k) => write!(f, "{k}")?,
                None => f.write_str("inf")?,
            }
        }
        Ok(())
    }
}
