//! Measurement description ontologies: system concepts, metrics and
//! measurement units, plus per-system architecture instances.
//!
//! An [`OntologySet`] is validated once at load and immutable afterwards.

mod architecture;
mod document;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::expr::{parse_expr, Expr, ParseError};
use crate::text::normalize_token;

pub use architecture::{Relation, SystemArchitecture};
pub use document::{
    ArchitectureDocument, Composition, Entity, EntityContext, Identity, MetricDoc,
    OntologyDocument, RelationLabel, SystemOntologyDoc, UnitDoc, UnitKind,
};

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cycle in {relation}: {}", path.join(" -> "))]
    Cycle {
        relation: &'static str,
        path: Vec<String>,
    },
    #[error("{context} references undeclared `{name}`")]
    DanglingReference { context: String, name: String },
    #[error("quantitative definition of metric `{metric}`: {source}")]
    ExpressionParse {
        metric: String,
        #[source]
        source: ParseError,
    },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("cannot convert `{from}` ({from_dimension}) to `{to}` ({to_dimension})")]
    UnitMismatch {
        from: String,
        to: String,
        from_dimension: String,
        to_dimension: String,
    },
}

pub type Result<T, E = OntologyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemOntology {
    pub concepts: BTreeSet<String>,
    pub has_relations: BTreeSet<(String, String)>,
}

impl SystemOntology {
    pub fn allows_has(&self, parent: &str, child: &str) -> bool {
        self.has_relations
            .contains(&(parent.to_string(), child.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricNode {
    pub name: String,
    pub parent: Option<String>,
    pub description: String,
    pub concept_pool: Vec<String>,
    /// Definition text exactly as written in the document.
    pub definition_text: Option<String>,
    /// Parsed definition with references renamed to canonical metric names.
    pub definition: Option<Expr>,
    pub unit_dimension: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitNode {
    pub name: String,
    pub kind: UnitKind,
    pub dimension: String,
    pub factor_to_base: f64,
    pub composition: Option<Composition>,
}

#[derive(Debug, Clone)]
pub struct OntologySet {
    document: OntologyDocument,
    system: SystemOntology,
    metrics: BTreeMap<String, MetricNode>,
    metric_names: HashMap<String, String>,
    synonyms: HashMap<String, String>,
    units: BTreeMap<String, UnitNode>,
}

/// Depth-first search for a cycle over `edges`; returns the cycle path.
pub(crate) fn find_cycle<'a>(
    nodes: impl IntoIterator<Item = &'a str>,
    edges: &BTreeMap<&'a str, Vec<&'a str>>,
) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn dfs<'a>(
        n: &'a str,
        edges: &BTreeMap<&'a str, Vec<&'a str>>,
        marks: &mut HashMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(n, Mark::Active);
        stack.push(n);
        for &next in edges.get(n).map(Vec::as_slice).unwrap_or_default() {
            match marks.get(next) {
                Some(Mark::Active) => {
                    let start = stack.iter().position(|s| *s == next).unwrap_or(0);
                    let mut path: Vec<String> =
                        stack[start..].iter().map(|s| s.to_string()).collect();
                    path.push(next.to_string());
                    return Some(path);
                }
                Some(Mark::Done) => {}
                None => {
                    if let Some(c) = dfs(next, edges, marks, stack) {
                        return Some(c);
                    }
                }
            }
        }
        stack.pop();
        marks.insert(n, Mark::Done);
        None
    }
    let mut marks = HashMap::new();
    let mut stack = Vec::new();
    for n in nodes {
        if !marks.contains_key(n) {
            if let Some(c) = dfs(n, edges, &mut marks, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

impl OntologySet {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: OntologyDocument = serde_json::from_str(text)?;
        OntologySet::load(doc)
    }

    /// Validates a document and builds the indexes.
    pub fn load(document: OntologyDocument) -> Result<Self> {
        let system = load_system(&document.system_ontology)?;
        let units = load_units(&document.unit_ontology)?;
        let dimensions: BTreeSet<&str> = units.values().map(|u| u.dimension.as_str()).collect();

        let mut metrics = BTreeMap::new();
        let mut metric_names = HashMap::new();
        let mut synonyms: HashMap<String, String> = HashMap::new();
        for m in &document.metric_ontology {
            let key = normalize_token(&m.name);
            if key.is_empty() {
                return Err(OntologyError::Schema(format!(
                    "metric name `{}` has no alphanumeric characters",
                    m.name
                )));
            }
            if metric_names.insert(key, m.name.clone()).is_some() {
                return Err(OntologyError::Schema(format!(
                    "duplicate metric `{}`",
                    m.name
                )));
            }
        }
        for m in &document.metric_ontology {
            for syn in m.concept_pool.iter().flatten() {
                let key = normalize_token(syn);
                if key.is_empty() {
                    continue;
                }
                if let Some(other) = synonyms.insert(key, m.name.clone()) {
                    if other != m.name {
                        return Err(OntologyError::Schema(format!(
                            "synonym `{syn}` is claimed by both `{other}` and `{}`",
                            m.name
                        )));
                    }
                }
            }
        }
        let canonical = |token: &str| -> Option<String> {
            let key = normalize_token(token);
            metric_names
                .get(&key)
                .or_else(|| synonyms.get(&key))
                .cloned()
        };

        for m in &document.metric_ontology {
            if let Some(parent) = &m.parent {
                if !metric_names.contains_key(&normalize_token(parent)) {
                    return Err(OntologyError::DanglingReference {
                        context: format!("parent of metric `{}`", m.name),
                        name: parent.clone(),
                    });
                }
            }
            if let Some(dim) = &m.unit_dimension {
                if !dimensions.contains(dim.as_str()) {
                    return Err(OntologyError::DanglingReference {
                        context: format!("unit dimension of metric `{}`", m.name),
                        name: dim.clone(),
                    });
                }
            }
            let definition = match &m.quantitative_definition {
                Some(text) => {
                    let parsed =
                        parse_expr(text).map_err(|source| OntologyError::ExpressionParse {
                            metric: m.name.clone(),
                            source,
                        })?;
                    for r in parsed.free_metrics() {
                        if canonical(&r).is_none() {
                            return Err(OntologyError::DanglingReference {
                                context: format!("definition of metric `{}`", m.name),
                                name: r,
                            });
                        }
                    }
                    Some(parsed.rename_metrics(&|r| canonical(r).expect("checked above")))
                }
                None => None,
            };
            metrics.insert(
                m.name.clone(),
                MetricNode {
                    name: m.name.clone(),
                    parent: m.parent.as_deref().and_then(canonical),
                    description: m.description.clone().unwrap_or_default(),
                    concept_pool: m.concept_pool.clone().unwrap_or_default(),
                    definition_text: m.quantitative_definition.clone(),
                    definition,
                    unit_dimension: m.unit_dimension.clone(),
                },
            );
        }

        let parent_edges: BTreeMap<&str, Vec<&str>> = metrics
            .values()
            .filter_map(|m| m.parent.as_deref().map(|p| (m.name.as_str(), vec![p])))
            .collect();
        if let Some(path) = find_cycle(metrics.keys().map(String::as_str), &parent_edges) {
            return Err(OntologyError::Cycle {
                relation: "hasMetric hierarchy",
                path,
            });
        }

        let def_refs: BTreeMap<&str, Vec<String>> = metrics
            .values()
            .map(|m| {
                let refs = m
                    .definition
                    .as_ref()
                    .map(|d| d.free_metrics().into_iter().collect())
                    .unwrap_or_default();
                (m.name.as_str(), refs)
            })
            .collect();
        let def_edges: BTreeMap<&str, Vec<&str>> = def_refs
            .iter()
            .map(|(k, v)| (*k, v.iter().map(String::as_str).collect()))
            .collect();
        if let Some(path) = find_cycle(metrics.keys().map(String::as_str), &def_edges) {
            return Err(OntologyError::Cycle {
                relation: "quantitative definitions",
                path,
            });
        }

        Ok(OntologySet {
            document,
            system,
            metrics,
            metric_names,
            synonyms,
            units,
        })
    }

    pub fn document(&self) -> &OntologyDocument {
        &self.document
    }

    pub fn system(&self) -> &SystemOntology {
        &self.system
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricNode> {
        self.metrics.values()
    }

    pub fn metric(&self, name: &str) -> Option<&MetricNode> {
        self.metrics.get(name)
    }

    pub fn units(&self) -> impl Iterator<Item = &UnitNode> {
        self.units.values()
    }

    /// Resolves a metric by name or concept-pool synonym after normalization.
    /// A name match wins over a synonym match.
    pub fn resolve_metric(&self, token: &str) -> Result<&MetricNode> {
        let key = normalize_token(token);
        self.metric_names
            .get(&key)
            .or_else(|| self.synonyms.get(&key))
            .and_then(|name| self.metrics.get(name))
            .ok_or_else(|| OntologyError::UnknownMetric(token.to_string()))
    }

    /// `{m}` plus every metric its definition references, transitively.
    pub fn expand_metric(&self, metric: &str) -> Result<BTreeSet<String>> {
        let root = self.resolve_metric(metric)?;
        let mut seen = BTreeSet::new();
        let mut stack = vec![root.name.clone()];
        while let Some(name) = stack.pop() {
            if !seen.insert(name.clone()) {
                continue;
            }
            if let Some(def) = self.metrics.get(&name).and_then(|m| m.definition.as_ref()) {
                stack.extend(def.free_metrics());
            }
        }
        Ok(seen)
    }

    pub fn unit(&self, name: &str) -> Result<&UnitNode> {
        if let Some(u) = self.units.get(name) {
            return Ok(u);
        }
        let key = normalize_token(name);
        self.units
            .values()
            .find(|u| normalize_token(&u.name) == key)
            .ok_or_else(|| OntologyError::UnknownUnit(name.to_string()))
    }

    /// The unit with factor 1.0 for `dimension`.
    pub fn base_unit(&self, dimension: &str) -> Option<&UnitNode> {
        self.units
            .values()
            .find(|u| u.dimension == dimension && u.factor_to_base == 1.0)
    }

    /// Factor `f` with `value_in_to = f * value_in_from`.
    pub fn unit_conversion_factor(&self, from: &str, to: &str) -> Result<f64> {
        let a = self.unit(from)?;
        let b = self.unit(to)?;
        if a.dimension != b.dimension {
            return Err(OntologyError::UnitMismatch {
                from: a.name.clone(),
                to: b.name.clone(),
                from_dimension: a.dimension.clone(),
                to_dimension: b.dimension.clone(),
            });
        }
        Ok(a.factor_to_base / b.factor_to_base)
    }

    /// Canonical normalized name for a token that names a metric or one of its
    /// synonyms.
    pub fn canonical_token(&self, token: &str) -> Option<String> {
        let key = normalize_token(token);
        self.metric_names
            .get(&key)
            .or_else(|| self.synonyms.get(&key))
            .map(|name| normalize_token(name))
    }
}

fn load_system(doc: &SystemOntologyDoc) -> Result<SystemOntology> {
    let mut concepts = BTreeSet::new();
    for c in &doc.concepts {
        if c.trim().is_empty() {
            return Err(OntologyError::Schema("empty concept name".into()));
        }
        if !concepts.insert(c.clone()) {
            return Err(OntologyError::Schema(format!("duplicate concept `{c}`")));
        }
    }
    let mut has_relations = BTreeSet::new();
    for (p, c) in &doc.has_relations {
        for end in [p, c] {
            if !concepts.contains(end) {
                return Err(OntologyError::DanglingReference {
                    context: "system has-relation".into(),
                    name: end.clone(),
                });
            }
        }
        has_relations.insert((p.clone(), c.clone()));
    }
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (p, c) in &has_relations {
        edges.entry(p.as_str()).or_default().push(c.as_str());
    }
    if let Some(path) = find_cycle(concepts.iter().map(String::as_str), &edges) {
        return Err(OntologyError::Cycle {
            relation: "system has-relations",
            path,
        });
    }
    Ok(SystemOntology {
        concepts,
        has_relations,
    })
}

fn load_units(docs: &[UnitDoc]) -> Result<BTreeMap<String, UnitNode>> {
    let mut units = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for u in docs {
        if u.name.trim().is_empty() || u.dimension.trim().is_empty() {
            return Err(OntologyError::Schema("unit name and dimension must be non-empty".into()));
        }
        if !seen.insert(normalize_token(&u.name)) {
            return Err(OntologyError::Schema(format!("duplicate unit `{}`", u.name)));
        }
        let factor = u.factor_to_base.unwrap_or(1.0);
        if !(factor.is_finite() && factor > 0.0) {
            return Err(OntologyError::Schema(format!(
                "unit `{}` has non-positive factor {factor}",
                u.name
            )));
        }
        if u.composition.is_some() && !u.kind.is_aggregate() {
            return Err(OntologyError::Schema(format!(
                "basic unit `{}` cannot have a composition",
                u.name
            )));
        }
        units.insert(
            u.name.clone(),
            UnitNode {
                name: u.name.clone(),
                kind: u.kind,
                dimension: u.dimension.clone(),
                factor_to_base: factor,
                composition: u.composition.clone(),
            },
        );
    }
    let dimensions: BTreeSet<&str> = units.values().map(|u| u.dimension.as_str()).collect();
    for d in &dimensions {
        let bases = units
            .values()
            .filter(|u| u.dimension == *d && u.factor_to_base == 1.0)
            .count();
        if bases != 1 {
            return Err(OntologyError::Schema(format!(
                "dimension `{d}` must have exactly one base unit (factor 1.0), found {bases}"
            )));
        }
    }
    for u in units.values() {
        if let Some(c) = &u.composition {
            for dim in c.numerator.iter().chain(&c.denominator) {
                if !dimensions.contains(dim.as_str()) {
                    return Err(OntologyError::DanglingReference {
                        context: format!("composition of unit `{}`", u.name),
                        name: dim.clone(),
                    });
                }
            }
        }
    }
    Ok(units)
}
