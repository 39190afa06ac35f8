//! Single-node time-series storage.
//!
//! Databases hold streams identified by a [`SeriesKey`] (database, metric,
//! tags). Each stream keeps a raw tier of samples plus optional rollup tiers
//! produced by [`Store::apply_retention`]. Everything the semantic layer
//! needs from storage goes through the [`BaseStore`] trait, so an adapter for
//! an external TSDB only has to implement that.

mod downsample;
mod key;
pub mod line_protocol;
mod persist;
mod retention;
mod series;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use downsample::{downsample, Aggregator, Bucket};
pub use key::SeriesKey;
pub use retention::{RetentionPolicy, Rollup};

use series::Series;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("database `{0}` already exists")]
    DuplicateDatabase(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error("unknown series `{0}`")]
    UnknownSeries(String),
    #[error("sample kind mismatch: stream holds {expected} samples, got {found}")]
    KindMismatch { expected: Kind, found: Kind },
    #[error("invalid range [{0}, {1})")]
    InvalidRange(i64, i64),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid retention policy: {0}")]
    InvalidRetention(String),
    #[error("window must be positive, got {0}")]
    InvalidWindow(i64),
    #[error("line {line}: {message}")]
    LineProtocol { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt metadata in {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Whether a stream carries numbers or state labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Numeric,
    Symbolic,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Numeric => f.write_str("numeric"),
            Kind::Symbolic => f.write_str("symbolic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    State(String),
}

impl Value {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Number(_) => Kind::Numeric,
            Value::State(_) => Kind::Symbolic,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::State(_) => None,
        }
    }

    pub fn as_state(&self) -> Option<&str> {
        match self {
            Value::Number(_) => None,
            Value::State(s) => Some(s),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::State(s) => f.write_str(s),
        }
    }
}

/// One data point: epoch milliseconds (UTC) plus a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: i64,
    pub value: Value,
}

impl Sample {
    pub fn number(timestamp: i64, value: f64) -> Self {
        Sample {
            timestamp,
            value: Value::Number(value),
        }
    }

    pub fn state(timestamp: i64, label: impl Into<String>) -> Self {
        Sample {
            timestamp,
            value: Value::State(label.into()),
        }
    }
}

/// Half-open time window `[start, end)` in epoch milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    /// Requires `start < end`.
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if start < end {
            Ok(Window { start, end })
        } else {
            Err(StoreError::InvalidRange(start, end))
        }
    }

    pub fn len(&self) -> i64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Handle returned by [`Store::create_database`]; names a database.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DbHandle(String);

impl DbHandle {
    pub fn name(&self) -> &str {
        &self.0
    }
}

/// The base store interface the semantic layer plans against.
pub trait BaseStore: Send + Sync {
    fn write_points(&self, key: &SeriesKey, points: &[Sample]) -> Result<usize>;

    /// Samples with `t0 <= timestamp < t1`, ascending.
    fn read_range(&self, key: &SeriesKey, t0: i64, t1: i64) -> Result<Vec<Sample>>;

    /// Most recent sample strictly before `t`.
    fn latest_before(&self, key: &SeriesKey, t: i64) -> Result<Option<Sample>>;

    fn series_kind(&self, key: &SeriesKey) -> Result<Kind>;
}

struct Database {
    name: String,
    retention: Option<RetentionPolicy>,
    dir: Option<PathBuf>,
    series: RwLock<BTreeMap<SeriesKey, Arc<RwLock<Series>>>>,
}

impl Database {
    fn get(&self, key: &SeriesKey) -> Result<Arc<RwLock<Series>>> {
        self.series
            .read()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSeries(key.to_string()))
    }
}

/// In-memory store with optional per-database append-only persistence.
#[derive(Default)]
pub struct Store {
    root: Option<PathBuf>,
    databases: RwLock<BTreeMap<String, Arc<Database>>>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("root", &self.root)
            .field("databases", &self.databases.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Opens (or creates) a persistent store rooted at `root`, replaying every
    /// database found there.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let loaded = persist::load_all(&root)?;
        let mut databases = BTreeMap::new();
        for db in loaded {
            let series = db
                .series
                .into_iter()
                .map(|(k, s)| (k, Arc::new(RwLock::new(s))))
                .collect();
            databases.insert(
                db.name.clone(),
                Arc::new(Database {
                    dir: Some(root.join(&db.name)),
                    name: db.name,
                    retention: db.retention,
                    series: RwLock::new(series),
                }),
            );
        }
        Ok(Store {
            root: Some(root),
            databases: RwLock::new(databases),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn create_database(
        &self,
        name: &str,
        retention: Option<RetentionPolicy>,
    ) -> Result<DbHandle> {
        key::check_database_name(name)?;
        if let Some(policy) = &retention {
            policy.validate()?;
        }
        let mut dbs = self.databases.write();
        if dbs.contains_key(name) {
            return Err(StoreError::DuplicateDatabase(name.to_string()));
        }
        let dir = match &self.root {
            Some(root) => Some(persist::create_database_dir(root, name, retention.as_ref())?),
            None => None,
        };
        dbs.insert(
            name.to_string(),
            Arc::new(Database {
                name: name.to_string(),
                retention,
                dir,
                series: RwLock::new(BTreeMap::new()),
            }),
        );
        Ok(DbHandle(name.to_string()))
    }

    pub fn database(&self, name: &str) -> Result<DbHandle> {
        self.db(name).map(|db| DbHandle(db.name.clone()))
    }

    pub fn database_names(&self) -> Vec<String> {
        self.databases.read().keys().cloned().collect()
    }

    pub fn retention(&self, db: &DbHandle) -> Result<Option<RetentionPolicy>> {
        Ok(self.db(db.name())?.retention.clone())
    }

    fn db(&self, name: &str) -> Result<Arc<Database>> {
        self.databases
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::UnknownDatabase(name.to_string()))
    }

    /// Merges `points` into the stream. The first write fixes the stream's
    /// kind; duplicate timestamps keep the last value written.
    pub fn write_points(&self, key: &SeriesKey, points: &[Sample]) -> Result<usize> {
        let db = self.db(&key.database)?;
        let Some(first) = points.first() else {
            return Ok(0);
        };
        let batch_kind = first.value.kind();
        for p in points {
            if p.value.kind() != batch_kind {
                return Err(StoreError::KindMismatch {
                    expected: batch_kind,
                    found: p.value.kind(),
                });
            }
            match &p.value {
                Value::Number(v) if !v.is_finite() => {
                    return Err(StoreError::InvalidValue(format!("non-finite number {v}")))
                }
                Value::State(s) => line_protocol::check_label(s)?,
                _ => {}
            }
        }

        let series = {
            let mut map = db.series.write();
            let entry = map.entry(key.clone()).or_insert_with(|| {
                Arc::new(RwLock::new(Series::new(batch_kind, db.retention.as_ref())))
            });
            Arc::clone(entry)
        };
        let mut series = series.write();
        if series.kind() != batch_kind {
            return Err(StoreError::KindMismatch {
                expected: series.kind(),
                found: batch_kind,
            });
        }
        if let Some(dir) = &db.dir {
            persist::append_points(dir, key, points)?;
        }
        series.insert(points);
        Ok(points.len())
    }

    pub fn read_range(&self, key: &SeriesKey, t0: i64, t1: i64) -> Result<Vec<Sample>> {
        if t0 > t1 {
            return Err(StoreError::InvalidRange(t0, t1));
        }
        let db = self
            .db(&key.database)
            .map_err(|_| StoreError::UnknownSeries(key.to_string()))?;
        let series = db.get(key)?;
        let series = series.read();
        Ok(series.range(t0, t1))
    }

    pub fn latest_before(&self, key: &SeriesKey, t: i64) -> Result<Option<Sample>> {
        let db = self
            .db(&key.database)
            .map_err(|_| StoreError::UnknownSeries(key.to_string()))?;
        let series = db.get(key)?;
        let series = series.read();
        Ok(series.latest_before(t))
    }

    pub fn series_kind(&self, key: &SeriesKey) -> Result<Kind> {
        let db = self
            .db(&key.database)
            .map_err(|_| StoreError::UnknownSeries(key.to_string()))?;
        let series = db.get(key)?;
        let kind = series.read().kind();
        Ok(kind)
    }

    /// Registered keys in canonical order.
    pub fn list_series(&self, db: &DbHandle) -> Result<Vec<SeriesKey>> {
        let db = self.db(db.name())?;
        let keys = db.series.read().keys().cloned().collect();
        Ok(keys)
    }

    /// Total number of stored points (raw samples plus rollup buckets).
    pub fn stored_points(&self, db: &DbHandle) -> Result<usize> {
        let db = self.db(db.name())?;
        let series = db.series.read();
        Ok(series.values().map(|s| s.read().stored_points()).sum())
    }

    /// Evicts raw samples older than `now - raw_duration` into the rollup
    /// tiers and cascades rollup buckets past their keep duration. Returns the
    /// number of samples and buckets removed from the tier they were in.
    pub fn apply_retention(&self, db: &DbHandle, now: i64) -> Result<usize> {
        let db = self.db(db.name())?;
        let Some(policy) = &db.retention else {
            return Ok(0);
        };
        let series: Vec<(SeriesKey, Arc<RwLock<Series>>)> = db
            .series
            .read()
            .iter()
            .map(|(k, s)| (k.clone(), Arc::clone(s)))
            .collect();
        let mut dropped = 0;
        let mut changed = Vec::new();
        for (key, s) in &series {
            let mut s = s.write();
            let n = s.apply_retention(policy, now);
            if n > 0 {
                dropped += n;
                changed.push((key.clone(), s.raw_samples()));
            }
        }
        if let Some(dir) = &db.dir {
            for (key, raw) in &changed {
                persist::rewrite_points(dir, key, raw)?;
            }
            let snapshot: Vec<_> = series
                .iter()
                .map(|(k, s)| {
                    let s = s.read();
                    (k.clone(), s.tier_state(), s.kind())
                })
                .collect();
            persist::write_rollups(dir, &snapshot)?;
        }
        Ok(dropped)
    }
}

impl BaseStore for Store {
    fn write_points(&self, key: &SeriesKey, points: &[Sample]) -> Result<usize> {
        Store::write_points(self, key, points)
    }

    fn read_range(&self, key: &SeriesKey, t0: i64, t1: i64) -> Result<Vec<Sample>> {
        Store::read_range(self, key, t0, t1)
    }

    fn latest_before(&self, key: &SeriesKey, t: i64) -> Result<Option<Sample>> {
        Store::latest_before(self, key, t)
    }

    fn series_kind(&self, key: &SeriesKey) -> Result<Kind> {
        Store::series_kind(self, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SeriesKey {
        SeriesKey::new("clouddb", "load", [("host", "h1")]).unwrap()
    }

    fn store_with_db() -> Store {
        let store = Store::in_memory();
        store.create_database("clouddb", None).unwrap();
        store
    }

    #[test]
    fn create_database_contracts() {
        let store = Store::in_memory();
        let h = store.create_database("clouddb", None).unwrap();
        assert_eq!(h.name(), "clouddb");
        assert!(store.list_series(&h).unwrap().is_empty());
        assert!(matches!(
            store.create_database("clouddb", None),
            Err(StoreError::DuplicateDatabase(_))
        ));
        assert!(matches!(
            store.create_database("", None),
            Err(StoreError::InvalidName(_))
        ));
    }

    #[test]
    fn writes_sort_and_last_write_wins() {
        let store = store_with_db();
        let k = key();
        let n = store
            .write_points(&k, &[Sample::number(5, 1.0), Sample::number(3, 2.0)])
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(
            store.read_range(&k, 0, 10).unwrap(),
            vec![Sample::number(3, 2.0), Sample::number(5, 1.0)]
        );
        assert_eq!(store.write_points(&k, &[Sample::number(3, 9.0)]).unwrap(), 1);
        assert_eq!(
            store.read_range(&k, 0, 10).unwrap(),
            vec![Sample::number(3, 9.0), Sample::number(5, 1.0)]
        );
    }

    #[test]
    fn kind_is_fixed_by_first_write() {
        let store = store_with_db();
        let k = key();
        store.write_points(&k, &[Sample::number(1, 1.0)]).unwrap();
        assert!(matches!(
            store.write_points(&k, &[Sample::state(2, "up")]),
            Err(StoreError::KindMismatch { .. })
        ));
        assert!(matches!(
            store.write_points(&k, &[Sample::number(2, 1.0), Sample::state(3, "up")]),
            Err(StoreError::KindMismatch { .. })
        ));
    }

    #[test]
    fn unknown_database_on_write() {
        let store = Store::in_memory();
        assert!(matches!(
            store.write_points(&key(), &[Sample::number(1, 1.0)]),
            Err(StoreError::UnknownDatabase(_))
        ));
    }

    #[test]
    fn half_open_reads() {
        let store = store_with_db();
        let k = key();
        store
            .write_points(
                &k,
                &[
                    Sample::number(0, 1.0),
                    Sample::number(10, 2.0),
                    Sample::number(20, 3.0),
                ],
            )
            .unwrap();
        assert_eq!(
            store.read_range(&k, 0, 20).unwrap(),
            vec![Sample::number(0, 1.0), Sample::number(10, 2.0)]
        );
        assert!(store.read_range(&k, 5, 5).unwrap().is_empty());
        let missing = SeriesKey::new("clouddb", "nope", Vec::<(&str, &str)>::new()).unwrap();
        assert!(matches!(
            store.read_range(&missing, 0, 1),
            Err(StoreError::UnknownSeries(_))
        ));
        assert!(matches!(
            store.read_range(&k, 5, 4),
            Err(StoreError::InvalidRange(5, 4))
        ));
    }

    #[test]
    fn list_series_is_sorted_and_deduplicated() {
        let store = store_with_db();
        let db = store.database("clouddb").unwrap();
        let a = SeriesKey::new("clouddb", "status", [("host", "h2")]).unwrap();
        let b = SeriesKey::new("clouddb", "load", [("host", "h1")]).unwrap();
        store.write_points(&a, &[Sample::state(0, "up")]).unwrap();
        store.write_points(&b, &[Sample::number(0, 1.0)]).unwrap();
        store.write_points(&b, &[Sample::number(1, 1.0)]).unwrap();
        assert_eq!(store.list_series(&db).unwrap(), vec![b, a]);
    }

    #[test]
    fn latest_before_looks_strictly_earlier() {
        let store = store_with_db();
        let k = key();
        store
            .write_points(&k, &[Sample::number(0, 1.0), Sample::number(10, 2.0)])
            .unwrap();
        assert_eq!(store.latest_before(&k, 10).unwrap(), Some(Sample::number(0, 1.0)));
        assert_eq!(store.latest_before(&k, 0).unwrap(), None);
    }

    #[test]
    fn rejects_non_finite_values() {
        let store = store_with_db();
        assert!(matches!(
            store.write_points(&key(), &[Sample::number(0, f64::NAN)]),
            Err(StoreError::InvalidValue(_))
        ));
    }
}
