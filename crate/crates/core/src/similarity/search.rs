//! Keyword filter tree, pruning, and similarity-query planning.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{
    aggregate_similarity, keyword_similarity, metric_similarity, system_keywords,
    system_similarity, AttributeScores, Result, SemanticVector, SimilarityConfig,
    SimilarityError, SystemDescriptor,
};
use crate::ontology::{OntologySet, SystemArchitecture};
use crate::reasoning::{plan_exact, MappedQuery, SemanticQuery};
use crate::semantics::{Catalog, StreamSemantics};
use crate::store::{SeriesKey, Window};
use crate::text::keywords;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamLeaf {
    pub key: SeriesKey,
    pub keywords: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseNode {
    pub database: String,
    pub keywords: BTreeSet<String>,
    pub streams: Vec<StreamLeaf>,
}

/// Two-level keyword tree: databases over their streams.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterTree {
    pub databases: Vec<DatabaseNode>,
}

impl FilterTree {
    pub fn stream_count(&self) -> usize {
        self.databases.iter().map(|d| d.streams.len()).sum()
    }
}

fn entity_words(arch: &SystemArchitecture, name: &str) -> BTreeSet<String> {
    let mut out = keywords(name);
    if let Ok(e) = arch.entity(name) {
        if let Some(d) = &e.description {
            out.extend(keywords(d));
        }
    }
    out
}

fn sensor_words(arch: &SystemArchitecture, s: &StreamSemantics) -> Option<BTreeSet<String>> {
    s.sensor_entity.as_deref().map(|n| entity_words(arch, n))
}

fn stream_words(arch: &SystemArchitecture, s: &StreamSemantics) -> BTreeSet<String> {
    let mut out = keywords(&s.metric);
    out.extend(entity_words(arch, &s.entity));
    out.extend(sensor_words(arch, s).unwrap_or_default());
    out
}

pub fn build_filter_tree(catalog: &Catalog) -> FilterTree {
    let databases = catalog
        .databases()
        .map(|db| {
            let arch = &db.architecture;
            let streams: Vec<StreamLeaf> = catalog
                .streams_in(&db.database)
                .map(|s| StreamLeaf {
                    key: s.key.clone(),
                    keywords: stream_words(arch, s),
                })
                .collect();
            let mut kw = system_keywords(arch);
            for s in &streams {
                kw.extend(s.keywords.iter().cloned());
            }
            DatabaseNode {
                database: db.database.clone(),
                keywords: kw,
                streams,
            }
        })
        .collect();
    FilterTree { databases }
}

/// Query keywords compared against stream leaves: entity, sensor and the
/// names of every metric in the expansion of the query metric.
fn pooled_keywords(q: &SemanticVector, ont: &OntologySet) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    out.extend(q.entity.iter().flatten().cloned());
    out.extend(q.sensor.iter().flatten().cloned());
    if let Some(m) = &q.metric {
        match ont.expand_metric(m) {
            Ok(names) => names.iter().for_each(|n| out.extend(keywords(n))),
            Err(_) => out.extend(keywords(m)),
        }
    }
    out
}

fn sys_words(q: &SemanticVector) -> BTreeSet<String> {
    match &q.sys {
        Some(SystemDescriptor::Keywords(k)) => k.clone(),
        Some(SystemDescriptor::Graph(arch)) => system_keywords(arch),
        None => BTreeSet::new(),
    }
}

/// Streams surviving level-wise pruning: a database node is dropped when its
/// keyword similarity to the query is below `tree_thresholds[0]`, a stream
/// leaf when below `tree_thresholds[1]`.
pub fn prune(
    tree: &FilterTree,
    q: &SemanticVector,
    cfg: &SimilarityConfig,
    ont: &OntologySet,
) -> BTreeSet<SeriesKey> {
    let pooled = pooled_keywords(q, ont);
    let mut db_query = pooled.clone();
    db_query.extend(sys_words(q));
    let (t_db, t_stream) = (cfg.tree_thresholds[0], cfg.tree_thresholds[1]);
    let mut out = BTreeSet::new();
    for db in &tree.databases {
        if keyword_similarity(&db_query, &db.keywords, Some(ont)) < t_db {
            continue;
        }
        for s in &db.streams {
            if keyword_similarity(&pooled, &s.keywords, Some(ont)) >= t_stream {
                out.insert(s.key.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    /// Score only streams that survive the filter tree.
    Pruned,
    /// Score every registered stream.
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct Match {
    #[serde(serialize_with = "crate::reasoning::serialize_display")]
    pub key: SeriesKey,
    pub score: f64,
    pub scores: AttributeScores,
    pub plan: Option<MappedQuery>,
    pub plan_error: Option<String>,
}

/// Ranks streams against `q`: prune, gate databases on system similarity,
/// score and aggregate per stream, keep `score >= min_score`, sort by score
/// descending then key, truncate to `top_k`, and plan each survivor exactly.
pub fn plan_similarity(
    q: &SemanticVector,
    window: Window,
    cfg: &SimilarityConfig,
    catalog: &Catalog,
    ont: &OntologySet,
    mode: ScanMode,
) -> Result<Vec<Match>> {
    cfg.validate()?;
    if q.is_empty() {
        return Err(SimilarityError::EmptyVector);
    }
    let w = &cfg.weights;
    let usable = [
        (q.sys.is_some(), w.sys),
        (q.entity.is_some(), w.entity),
        (q.metric.is_some(), w.metric),
        (q.sensor.is_some(), w.sensor),
    ];
    if !usable.iter().any(|(present, w)| *present && *w > 0.0) {
        return Err(SimilarityError::NoUsableAttributes);
    }

    let candidates: Option<BTreeSet<SeriesKey>> = match mode {
        ScanMode::Pruned => Some(prune(&build_filter_tree(catalog), q, cfg, ont)),
        ScanMode::Full => None,
    };
    let q_metric = q
        .metric
        .as_deref()
        .and_then(|m| ont.resolve_metric(m).ok())
        .map(|m| m.name.clone());

    let mut scored = Vec::new();
    for db in catalog.databases() {
        let arch = &db.architecture;
        let sys = q
            .sys
            .as_ref()
            .map(|d| system_similarity(d, arch, Some(ont), &cfg.ged_costs));
        if let Some(s) = sys {
            if s < cfg.min_score {
                continue;
            }
        }
        for s in catalog.streams_in(&db.database) {
            if let Some(c) = &candidates {
                if !c.contains(&s.key) {
                    continue;
                }
            }
            let metric = match &q.metric {
                Some(m) => Some(metric_similarity(m, &s.metric, ont)?),
                None => None,
            };
            let sensor = match (&q.sensor, sensor_words(arch, s)) {
                (Some(a), Some(b)) => Some(keyword_similarity(a, &b, Some(ont))),
                _ => None,
            };
            let scores = AttributeScores {
                sys,
                entity: q
                    .entity
                    .as_ref()
                    .map(|e| keyword_similarity(e, &entity_words(arch, &s.entity), Some(ont))),
                metric,
                sensor,
            };
            let score = match aggregate_similarity(&scores, w) {
                Ok(v) => v,
                Err(SimilarityError::NoUsableAttributes) => continue,
                Err(e) => return Err(e),
            };
            if score >= cfg.min_score {
                scored.push((s, scores, score));
            }
        }
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.key.cmp(&b.0.key)));
    scored.truncate(cfg.top_k);

    Ok(scored
        .into_iter()
        .map(|(s, scores, score)| {
            let metric = match &q_metric {
                Some(m)
                    if ont
                        .expand_metric(m)
                        .map(|e| e.contains(&s.metric))
                        .unwrap_or(false) =>
                {
                    m.clone()
                }
                _ => s.metric.clone(),
            };
            let sq = SemanticQuery::new(s.entity.clone(), metric, window)
                .in_database(s.key.database.clone());
            let (plan, plan_error) = match plan_exact(&sq, catalog, ont) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Match {
                key: s.key.clone(),
                score,
                scores,
                plan,
                plan_error,
            }
        })
        .collect())
}
