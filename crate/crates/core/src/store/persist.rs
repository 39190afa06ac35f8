//! On-disk layout, one directory per database:
//!
//! ```text
//! <root>/<db>/database.json   name + retention policy
//! <root>/<db>/<hash>.lp       raw samples of one stream, line protocol, append-only
//! <root>/<db>/rollups.json    rollup tier state, rewritten by retention
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::series::Series;
use super::{line_protocol, Bucket, Kind, Result, RetentionPolicy, Sample, SeriesKey, StoreError};

const DATABASE_FILE: &str = "database.json";
const ROLLUP_FILE: &str = "rollups.json";

pub(crate) type Buckets = Vec<(i64, Bucket)>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct TierState {
    pub raw_floor: Option<i64>,
    pub tiers: Vec<(Option<i64>, Buckets)>,
}

#[derive(Serialize, Deserialize)]
struct DatabaseMeta {
    name: String,
    retention: Option<RetentionPolicy>,
}

#[derive(Serialize, Deserialize)]
struct RollupEntry {
    key: SeriesKey,
    kind: Kind,
    state: TierState,
}

pub(crate) struct LoadedDatabase {
    pub name: String,
    pub retention: Option<RetentionPolicy>,
    pub series: BTreeMap<SeriesKey, Series>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stream_file(dir: &Path, key: &SeriesKey) -> PathBuf {
    let digest = Sha256::digest(key.to_string().as_bytes());
    let name: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{name}.lp"))
}

pub(crate) fn create_database_dir(
    root: &Path,
    name: &str,
    retention: Option<&RetentionPolicy>,
) -> Result<PathBuf> {
    let dir = root.join(name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let meta = DatabaseMeta {
        name: name.to_string(),
        retention: retention.cloned(),
    };
    let path = dir.join(DATABASE_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(dir)
}

pub(crate) fn append_points(dir: &Path, key: &SeriesKey, points: &[Sample]) -> Result<()> {
    let path = stream_file(dir, key);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    let mut buf = String::new();
    for p in points {
        buf.push_str(&line_protocol::format_line(key, p));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io_err(&path))
}

pub(crate) fn rewrite_points(dir: &Path, key: &SeriesKey, points: &[Sample]) -> Result<()> {
    let path = stream_file(dir, key);
    let tmp = path.with_extension("lp.tmp");
    let mut buf = String::new();
    for p in points {
        buf.push_str(&line_protocol::format_line(key, p));
        buf.push('\n');
    }
    fs::write(&tmp, buf).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

pub(crate) fn write_rollups(dir: &Path, series: &[(SeriesKey, TierState, Kind)]) -> Result<()> {
    let entries: Vec<RollupEntry> = series
        .iter()
        .map(|(key, state, kind)| RollupEntry {
            key: key.clone(),
            kind: *kind,
            state: state.clone(),
        })
        .collect();
    let path = dir.join(ROLLUP_FILE);
    let text = serde_json::to_string(&entries).expect("rollups serialize");
    fs::write(&path, text).map_err(io_err(&path))
}

pub(crate) fn load_all(root: &Path) -> Result<Vec<LoadedDatabase>> {
    if !root.exists() {
        fs::create_dir_all(root).map_err(io_err(root))?;
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(DATABASE_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_database(d)).collect()
}

fn load_database(dir: &Path) -> Result<LoadedDatabase> {
    let meta_path = dir.join(DATABASE_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: DatabaseMeta = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;

    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lp"))
        .collect();
    files.sort();

    let mut series: BTreeMap<SeriesKey, Series> = BTreeMap::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let entries = line_protocol::parse(&text).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        for (key, samples) in line_protocol::group_by_key(entries) {
            let kind = samples[0].value.kind();
            let s = series
                .entry(key)
                .or_insert_with(|| Series::new(kind, meta.retention.as_ref()));
            if samples.iter().any(|p| p.value.kind() != s.kind()) {
                return Err(StoreError::Corrupt {
                    path: path.clone(),
                    message: "mixed sample kinds in one stream".into(),
                });
            }
            s.insert(&samples);
        }
    }

    let rollup_path = dir.join(ROLLUP_FILE);
    if rollup_path.is_file() {
        let text = fs::read_to_string(&rollup_path).map_err(io_err(&rollup_path))?;
        let entries: Vec<RollupEntry> =
            serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                path: rollup_path.clone(),
                message: e.to_string(),
            })?;
        for entry in entries {
            series
                .entry(entry.key)
                .or_insert_with(|| Series::new(entry.kind, meta.retention.as_ref()))
                .restore_tiers(entry.state);
        }
    }

    Ok(LoadedDatabase {
        name: meta.name,
        retention: meta.retention,
        series,
    })
}
