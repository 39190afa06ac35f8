//! Ingestion line protocol, one sample per line:
//!
//! ```text
//! <db> <metric> <k1=v1,k2=v2|-> <timestamp_ms> <float | state:LABEL>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Persistence files use
//! the same format.

use super::{Result, Sample, SeriesKey, StoreError, Value};

const STATE_PREFIX: &str = "state:";

pub(crate) fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.chars().any(char::is_whitespace) {
        return Err(StoreError::InvalidValue(format!(
            "state label `{label}` must be non-empty without whitespace"
        )));
    }
    Ok(())
}

pub fn format_line(key: &SeriesKey, sample: &Sample) -> String {
    let value = match &sample.value {
        Value::Number(v) => v.to_string(),
        Value::State(s) => format!("{STATE_PREFIX}{s}"),
    };
    format!(
        "{} {} {} {} {}",
        key.database,
        key.metric,
        key.tag_string(),
        sample.timestamp,
        value
    )
}

/// Parses one line; `Ok(None)` for blank and comment lines.
pub fn parse_line(line: &str) -> std::result::Result<Option<(SeriesKey, Sample)>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = trimmed.split_whitespace().collect();
    let [db, metric, tags, ts, value] = fields[..] else {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    };
    let tags = SeriesKey::parse_tags(tags).map_err(|e| e.to_string())?;
    let key = SeriesKey::new(db, metric, tags).map_err(|e| e.to_string())?;
    let timestamp: i64 = ts
        .parse()
        .map_err(|_| format!("invalid timestamp `{ts}`"))?;
    let value = match value.strip_prefix(STATE_PREFIX) {
        Some(label) => {
            check_label(label).map_err(|e| e.to_string())?;
            Value::State(label.to_string())
        }
        None => {
            let v: f64 = value
                .parse()
                .map_err(|_| format!("invalid value `{value}`"))?;
            if !v.is_finite() {
                return Err(format!("non-finite value `{value}`"));
            }
            Value::Number(v)
        }
    };
    Ok(Some((key, Sample { timestamp, value })))
}

/// Parses a whole document; errors carry the 1-based line number.
pub fn parse(text: &str) -> Result<Vec<(SeriesKey, Sample)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_line(line) {
            Ok(Some(entry)) => out.push(entry),
            Ok(None) => {}
            Err(message) => {
                return Err(StoreError::LineProtocol {
                    line: i + 1,
                    message,
                })
            }
        }
    }
    Ok(out)
}

/// Groups parsed entries by key, keeping input order within each key.
pub fn group_by_key(entries: Vec<(SeriesKey, Sample)>) -> Vec<(SeriesKey, Vec<Sample>)> {
    let mut groups: std::collections::BTreeMap<SeriesKey, Vec<Sample>> = Default::default();
    for (k, s) in entries {
        groups.entry(k).or_default().push(s);
    }
    groups.into_iter().collect()
}
