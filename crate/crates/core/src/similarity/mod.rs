//! Similarity matchmaking for semantic similarity queries: per-attribute
//! similarity, aggregation, graph edit distance for system similarity and
//! the keyword filter tree.

mod ged;
mod search;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{OntologySet, SystemArchitecture};
use crate::reasoning::ReasoningError;
use crate::text::{keywords, normalize_token};

pub use ged::{graph_edit_distance, GedCosts, GedResult, LabeledGraph, EXACT_NODE_LIMIT};
pub use search::{
    build_filter_tree, plan_similarity, prune, DatabaseNode, FilterTree, Match, ScanMode,
    StreamLeaf,
};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("no attribute is present on both sides with a positive weight")]
    NoUsableAttributes,
    #[error("a similarity query needs at least one semantic attribute")]
    EmptyVector,
    #[error("invalid similarity configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("invalid document: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SimilarityError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum SystemDescriptor {
    Keywords(BTreeSet<String>),
    Graph(Box<SystemArchitecture>),
}

/// Query-side semantic attributes; each is optional.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticVector {
    pub sys: Option<SystemDescriptor>,
    pub entity: Option<BTreeSet<String>>,
    pub metric: Option<String>,
    pub sensor: Option<BTreeSet<String>>,
}

impl SemanticVector {
    pub fn is_empty(&self) -> bool {
        self.sys.is_none() && self.entity.is_none() && self.metric.is_none() && self.sensor.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub sys: f64,
    pub entity: f64,
    pub metric: f64,
    pub sensor: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            sys: 1.0,
            entity: 1.0,
            metric: 1.0,
            sensor: 1.0,
        }
    }
}

impl Weights {
    fn as_array(&self) -> [f64; 4] {
        [self.sys, self.entity, self.metric, self.sensor]
    }

    pub fn scaled(&self, k: f64) -> Weights {
        Weights {
            sys: self.sys * k,
            entity: self.entity * k,
            metric: self.metric * k,
            sensor: self.sensor * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub weights: Weights,
    pub min_score: f64,
    pub top_k: usize,
    /// Level thresholds, root first: database nodes, then stream leaves.
    pub tree_thresholds: Vec<f64>,
    pub ged_costs: GedCosts,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            weights: Weights::default(),
            min_score: 0.5,
            top_k: 10,
            tree_thresholds: vec![0.0, 0.0],
            ged_costs: GedCosts::default(),
        }
    }
}

impl SimilarityConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimilarityConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimilarityError::InvalidConfig(m));
        let w = self.weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("weights must be finite and non-negative".into());
        }
        if w.iter().all(|x| *x == 0.0) {
            return bad("at least one weight must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return bad(format!("min_score {} is outside [0, 1]", self.min_score));
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.tree_thresholds.len() < 2 {
            return bad("tree_thresholds needs one value per level (database, stream)".into());
        }
        if self.tree_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("tree thresholds must lie in [0, 1]".into());
        }
        if !self.ged_costs.is_valid() {
            return bad("GED costs must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Per-attribute scores; `None` marks an attribute absent on either side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AttributeScores {
    pub sys: Option<f64>,
    pub entity: Option<f64>,
    pub metric: Option<f64>,
    pub sensor: Option<f64>,
}

impl AttributeScores {
    fn as_array(&self) -> [Option<f64>; 4] {
        [self.sys, self.entity, self.metric, self.sensor]
    }
}

/// Rounds to 1e-9.
pub fn quantize(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn canonical(token: &str, ont: Option<&OntologySet>) -> String {
    ont.and_then(|o| o.canonical_token(token))
        .unwrap_or_else(|| normalize_token(token))
}

/// Jaccard similarity after normalization and synonym canonicalization. Two
/// empty sets are identical.
pub fn keyword_similarity(
    a: &BTreeSet<String>,
    b: &BTreeSet<String>,
    ont: Option<&OntologySet>,
) -> f64 {
    let canon = |s: &BTreeSet<String>| -> BTreeSet<String> {
        s.iter()
            .map(|t| canonical(t, ont))
            .filter(|t| !t.is_empty())
            .collect()
    };
    let (a, b) = (canon(a), canon(b));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    inter as f64 / union as f64
}

fn metric_words(ont: &OntologySet, token: &str) -> BTreeSet<String> {
    match ont.resolve_metric(token) {
        Ok(m) => {
            let mut w = keywords(&m.name);
            w.extend(keywords(&m.description));
            w
        }
        Err(_) => keywords(token),
    }
}

/// 1.0 when either metric is in the other's expansion, otherwise keyword
/// similarity over metric names and descriptions.
pub fn metric_similarity(q: &str, ds: &str, ont: &OntologySet) -> Result<f64> {
    let ds_node = ont
        .resolve_metric(ds)
        .map_err(|e| SimilarityError::Reasoning(e.into()))?;
    if let Ok(q_node) = ont.resolve_metric(q) {
        let q_exp = ont.expand_metric(&q_node.name).expect("resolved");
        let ds_exp = ont.expand_metric(&ds_node.name).expect("resolved");
        if q_exp.contains(&ds_node.name) || ds_exp.contains(&q_node.name) {
            return Ok(1.0);
        }
    }
    Ok(keyword_similarity(
        &metric_words(ont, q),
        &metric_words(ont, &ds_node.name),
        Some(ont),
    ))
}

/// Keyword set describing a system: its id, concepts and entity descriptions.
pub fn system_keywords(arch: &SystemArchitecture) -> BTreeSet<String> {
    let mut out = keywords(arch.system_id());
    for e in arch.entities() {
        out.insert(normalize_token(&e.concept));
        if let Some(d) = &e.description {
            out.extend(keywords(d));
        }
    }
    out
}

/// Keyword mode: keyword similarity. Graph mode: `1 - GED / (|V1| + |V2| +
/// |E1| + |E2|)`, clamped to [0, 1].
pub fn system_similarity(
    q: &SystemDescriptor,
    db: &SystemArchitecture,
    ont: Option<&OntologySet>,
    costs: &GedCosts,
) -> f64 {
    match q {
        SystemDescriptor::Keywords(k) => keyword_similarity(k, &system_keywords(db), ont),
        SystemDescriptor::Graph(arch) => {
            let g1 = LabeledGraph::from_architecture(arch);
            let g2 = LabeledGraph::from_architecture(db);
            graph_similarity(&g1, &g2, ont, costs)
        }
    }
}

pub fn graph_similarity(
    g1: &LabeledGraph,
    g2: &LabeledGraph,
    ont: Option<&OntologySet>,
    costs: &GedCosts,
) -> f64 {
    let size = g1.node_count() + g2.node_count() + g1.edge_count() + g2.edge_count();
    if size == 0 {
        return 1.0;
    }
    let d = graph_edit_distance(g1, g2, costs, ont).distance;
    (1.0 - d / size as f64).clamp(0.0, 1.0)
}

/// Weighted mean over present attributes with weights renormalized.
pub fn aggregate_similarity(scores: &AttributeScores, weights: &Weights) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, w) in scores.as_array().iter().zip(weights.as_array()) {
        if let Some(s) = s {
            if w > 0.0 {
                num += w * s;
                den += w;
            }
        }
    }
    if den == 0.0 {
        return Err(SimilarityError::NoUsableAttributes);
    }
    Ok(quantize((num / den).clamp(0.0, 1.0)))
}
