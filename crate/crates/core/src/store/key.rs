use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, StoreError};

/// Physical identity of a stream: database, metric and tags.
///
/// Field order gives the canonical ordering: database, then metric, then the
/// sorted tag pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub database: String,
    pub metric: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

const RESERVED: &[char] = &[',', '=', '{', '}', '"'];

pub(crate) fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || RESERVED.contains(&c)) {
        return Err(StoreError::InvalidName(name.to_string()));
    }
    Ok(())
}

pub(crate) fn check_database_name(name: &str) -> Result<()> {
    check_name(name)?;
    if name.contains('.') || name.contains('/') || name.starts_with('-') {
        return Err(StoreError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl SeriesKey {
    pub fn new<K, V>(
        database: impl Into<String>,
        metric: impl Into<String>,
        tags: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self>
    where
        K: Into<String>,
        V: Into<String>,
    {
        let database = database.into();
        let metric = metric.into();
        check_database_name(&database)?;
        check_name(&metric)?;
        let mut map = BTreeMap::new();
        for (k, v) in tags {
            let (k, v) = (k.into(), v.into());
            check_name(&k)?;
            check_name(&v)?;
            if map.insert(k.clone(), v).is_some() {
                return Err(StoreError::InvalidName(format!("duplicate tag key `{k}`")));
            }
        }
        Ok(SeriesKey {
            database,
            metric,
            tags: map,
        })
    }

    /// Re-checks the naming rules; used for keys built from deserialized data.
    pub fn validate(&self) -> Result<()> {
        check_database_name(&self.database)?;
        check_name(&self.metric)?;
        for (k, v) in &self.tags {
            check_name(k)?;
            check_name(v)?;
        }
        Ok(())
    }

    /// `k1=v1,k2=v2`, or `-` without tags.
    pub fn tag_string(&self) -> String {
        if self.tags.is_empty() {
            "-".to_string()
        } else {
            self.tags
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",")
        }
    }

    pub(crate) fn parse_tags(text: &str) -> Result<Vec<(String, String)>> {
        if text == "-" || text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|pair| {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| StoreError::InvalidName(format!("malformed tag `{pair}`")))?;
                Ok((k.to_string(), v.to_string()))
            })
            .collect()
    }
}

/// `db.metric` or `db.metric{k=v,...}`.
impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.database, self.metric)?;
        if !self.tags.is_empty() {
            write!(f, "{{{}}}", self.tag_string())?;
        }
        Ok(())
    }
}

impl FromStr for SeriesKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || StoreError::InvalidName(s.to_string());
        let (head, tags) = match s.find('{') {
            Some(i) => {
                let inner = s[i + 1..].strip_suffix('}').ok_or_else(bad)?;
                (&s[..i], SeriesKey::parse_tags(inner)?)
            }
            None => (s, Vec::new()),
        };
        let (db, metric) = head.split_once('.').ok_or_else(bad)?;
        SeriesKey::new(db, metric, tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        let k = SeriesKey::new("clouddb", "status", [("host", "h1"), ("dc", "dc1")]).unwrap();
        assert_eq!(k.to_string(), "clouddb.status{dc=dc1,host=h1}");
        assert_eq!(k.to_string().parse::<SeriesKey>().unwrap(), k);
        let bare: SeriesKey = "db.cpu".parse().unwrap();
        assert!(bare.tags.is_empty());
        assert_eq!(bare.to_string(), "db.cpu");
        assert_eq!("db.cpu{}".parse::<SeriesKey>().unwrap(), bare);
    }

    #[test]
    fn rejects_bad_names() {
        assert!(SeriesKey::new("", "m", Vec::<(&str, &str)>::new()).is_err());
        assert!(SeriesKey::new("db", "", Vec::<(&str, &str)>::new()).is_err());
        assert!(SeriesKey::new("d.b", "m", Vec::<(&str, &str)>::new()).is_err());
        assert!(SeriesKey::new("db", "m x", Vec::<(&str, &str)>::new()).is_err());
        assert!(SeriesKey::new("db", "m", [("a", "1"), ("a", "2")]).is_err());
        assert!("nodot".parse::<SeriesKey>().is_err());
        assert!("db.m{a=1".parse::<SeriesKey>().is_err());
    }

    #[test]
    fn ordering_is_database_metric_tags() {
        let a = SeriesKey::new("a", "z", [("t", "1")]).unwrap();
        let b = SeriesKey::new("b", "a", Vec::<(&str, &str)>::new()).unwrap();
        let c = SeriesKey::new("b", "a", [("t", "0")]).unwrap();
        let mut v = vec![c.clone(), b.clone(), a.clone()];
        v.sort();
        assert_eq!(v, vec![a, b, c]);
    }
}
