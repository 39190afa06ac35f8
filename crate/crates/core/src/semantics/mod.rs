//! Per-database and per-stream semantics, and the provenance DAG.

mod provenance;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::MissingDataPolicy;
use crate::ontology::{ArchitectureDocument, OntologyError, OntologySet, SystemArchitecture};
use crate::store::{SeriesKey, StoreError};

pub use provenance::{Operation, ProvenanceId, ProvenanceKind, ProvenanceNode};

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("no semantics registered for database `{0}`")]
    UnknownDatabase(String),
    #[error("semantics for database `{0}` already registered")]
    DuplicateDatabase(String),
    #[error("unresolved {what} `{name}`: {reason}")]
    UnresolvedReference {
        what: &'static str,
        name: String,
        reason: String,
    },
    #[error("stream {0} is already registered")]
    DuplicateStream(SeriesKey),
    #[error("unknown stream {0}")]
    UnknownStream(SeriesKey),
    #[error("deriving {output} from {via} would create a cycle")]
    Cycle { output: SeriesKey, via: SeriesKey },
    #[error(transparent)]
    Key(#[from] StoreError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("invalid document: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SemanticsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<String>,
}

/// Stream registration document as supplied by users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamDocument {
    pub database: String,
    pub metric: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub metric_ref: String,
    pub entity: String,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection_procedure: Option<String>,
    pub missing_data_policy: MissingDataPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_entity: Option<String>,
}

impl StreamDocument {
    pub fn key(&self) -> Result<SeriesKey> {
        Ok(SeriesKey::new(
            self.database.clone(),
            self.metric.clone(),
            self.tags.clone(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSemantics {
    pub key: SeriesKey,
    /// Canonical metric name from the metric ontology.
    pub metric: String,
    pub entity: String,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(default)]
    pub collection_procedure: String,
    pub missing_data_policy: MissingDataPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_entity: Option<String>,
    pub provenance: ProvenanceId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseSemantics {
    pub database: String,
    pub architecture: SystemArchitecture,
    pub storage_architecture: String,
    pub retention_sharding_notes: String,
    pub storage_scheme: String,
}

impl DatabaseSemantics {
    pub fn new(database: impl Into<String>, architecture: SystemArchitecture) -> Self {
        DatabaseSemantics {
            database: database.into(),
            architecture,
            storage_architecture: "single-node".into(),
            retention_sharding_notes: String::new(),
            storage_scheme: "line protocol, one file per stream".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatabaseSnapshot {
    database: String,
    architecture: ArchitectureDocument,
    storage_architecture: String,
    retention_sharding_notes: String,
    storage_scheme: String,
}

/// Serializable form of a [`Catalog`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CatalogSnapshot {
    databases: Vec<DatabaseSnapshot>,
    streams: Vec<StreamSemantics>,
    nodes: Vec<ProvenanceNode>,
}

/// Provenance export: every node with its input ids, plus the current node of
/// each registered stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceExport {
    pub nodes: Vec<ProvenanceNode>,
    pub streams: BTreeMap<String, ProvenanceId>,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    databases: BTreeMap<String, DatabaseSemantics>,
    streams: BTreeMap<SeriesKey, StreamSemantics>,
    nodes: BTreeMap<ProvenanceId, ProvenanceNode>,
}

fn unresolved(what: &'static str, name: &str, reason: impl ToString) -> SemanticsError {
    SemanticsError::UnresolvedReference {
        what,
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    pub fn register_database(&mut self, sem: DatabaseSemantics) -> Result<()> {
        if self.databases.contains_key(&sem.database) {
            return Err(SemanticsError::DuplicateDatabase(sem.database));
        }
        self.databases.insert(sem.database.clone(), sem);
        Ok(())
    }

    pub fn database(&self, name: &str) -> Result<&DatabaseSemantics> {
        self.databases
            .get(name)
            .ok_or_else(|| SemanticsError::UnknownDatabase(name.to_string()))
    }

    pub fn databases(&self) -> impl Iterator<Item = &DatabaseSemantics> {
        self.databases.values()
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamSemantics> {
        self.streams.values()
    }

    pub fn streams_in(&self, database: &str) -> impl Iterator<Item = &StreamSemantics> + '_ {
        let db = database.to_string();
        self.streams
            .values()
            .filter(move |s| s.key.database == db)
    }

    pub fn get_semantics(&self, key: &SeriesKey) -> Result<&StreamSemantics> {
        self.streams
            .get(key)
            .ok_or_else(|| SemanticsError::UnknownStream(key.clone()))
    }

    pub fn node(&self, id: &ProvenanceId) -> Option<&ProvenanceNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ProvenanceNode> {
        self.nodes.values()
    }

    /// Validates a stream document against the ontology and the database's
    /// architecture and registers it. A Raw provenance node is created for the
    /// sensor entity, or for the stream's own entity when no sensor is named.
    pub fn register_stream(
        &mut self,
        doc: &StreamDocument,
        ontology: &OntologySet,
    ) -> Result<SeriesKey> {
        let key = doc.key()?;
        let sensor = doc.sensor_entity.as_ref().unwrap_or(&doc.entity);
        let node = ProvenanceNode::raw(key.clone(), sensor.clone());
        let sem = self.resolve(doc, ontology, node.id.clone())?;
        self.nodes.insert(node.id.clone(), node);
        self.streams.insert(key.clone(), sem);
        Ok(key)
    }

    /// Registers a stream whose data is produced by `operation` over `inputs`.
    /// Idempotent when the identical stream and derivation already exist.
    pub fn register_derived(
        &mut self,
        doc: &StreamDocument,
        ontology: &OntologySet,
        operation: Operation,
        inputs: &[SeriesKey],
    ) -> Result<ProvenanceId> {
        let key = doc.key()?;
        if let Some(existing) = self.streams.get(&key) {
            let node = self.derivation_node(&key, &operation, inputs)?;
            if existing.provenance == node.id {
                return Ok(node.id);
            }
            return Err(SemanticsError::DuplicateStream(key));
        }
        self.check_inputs(&key, inputs)?;
        let node = self.derivation_node(&key, &operation, inputs)?;
        let id = node.id.clone();
        let sem = self.resolve(doc, ontology, id.clone())?;
        self.nodes.insert(id.clone(), node);
        self.streams.insert(key, sem);
        Ok(id)
    }

    fn resolve(
        &self,
        doc: &StreamDocument,
        ontology: &OntologySet,
        provenance: ProvenanceId,
    ) -> Result<StreamSemantics> {
        let key = doc.key()?;
        let db = self.database(&key.database)?;
        if self.streams.contains_key(&key) {
            return Err(SemanticsError::DuplicateStream(key));
        }
        let metric = ontology
            .resolve_metric(&doc.metric_ref)
            .map_err(|e| unresolved("metric", &doc.metric_ref, e))?;
        let unit = ontology
            .unit(&doc.unit)
            .map_err(|e| unresolved("unit", &doc.unit, e))?;
        if let Some(dim) = &metric.unit_dimension {
            if *dim != unit.dimension {
                return Err(unresolved(
                    "unit",
                    &doc.unit,
                    format!(
                        "dimension `{}` does not match metric `{}` ({dim})",
                        unit.dimension, metric.name
                    ),
                ));
            }
        }
        let arch = &db.architecture;
        arch.entity(&doc.entity)
            .map_err(|e| unresolved("entity", &doc.entity, e))?;
        if let Some(sensor) = &doc.sensor_entity {
            arch.entity(sensor)
                .map_err(|e| unresolved("sensor entity", sensor, e))?;
        }
        if let Some(Timing {
            frequency_ms: Some(f),
            ..
        }) = &doc.timing
        {
            if *f <= 0 {
                return Err(unresolved("timing", &f.to_string(), "frequency must be positive"));
            }
        }
        Ok(StreamSemantics {
            key,
            metric: metric.name.clone(),
            entity: doc.entity.clone(),
            unit: unit.name.clone(),
            timing: doc.timing.clone(),
            collection_procedure: doc.collection_procedure.clone().unwrap_or_default(),
            missing_data_policy: doc.missing_data_policy,
            sensor_entity: doc.sensor_entity.clone(),
            provenance,
        })
    }

    fn derivation_node(
        &self,
        output: &SeriesKey,
        operation: &Operation,
        inputs: &[SeriesKey],
    ) -> Result<ProvenanceNode> {
        let ids = inputs
            .iter()
            .map(|k| self.get_semantics(k).map(|s| s.provenance.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProvenanceNode::derived(output.clone(), operation.clone(), ids))
    }

    fn check_inputs(&self, output: &SeriesKey, inputs: &[SeriesKey]) -> Result<()> {
        for input in inputs {
            let sem = self.get_semantics(input)?;
            if input == output || self.ancestor_streams(&sem.provenance).contains(output) {
                return Err(SemanticsError::Cycle {
                    output: output.clone(),
                    via: input.clone(),
                });
            }
        }
        Ok(())
    }

    /// Appends a Derived node for `output` and points its semantics at it.
    pub fn record_derivation(
        &mut self,
        output: &SeriesKey,
        operation: Operation,
        inputs: &[SeriesKey],
    ) -> Result<ProvenanceId> {
        self.get_semantics(output)?;
        self.check_inputs(output, inputs)?;
        let node = self.derivation_node(output, &operation, inputs)?;
        let id = node.id.clone();
        self.nodes.entry(id.clone()).or_insert(node);
        if let Some(sem) = self.streams.get_mut(output) {
            sem.provenance = id.clone();
        }
        Ok(id)
    }

    fn reachable(&self, start: &ProvenanceId) -> BTreeSet<ProvenanceId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start.clone()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(n) = self.nodes.get(&id) {
                stack.extend(n.inputs().iter().cloned());
            }
        }
        seen
    }

    /// Streams produced by any node reachable from `start`, `start` included.
    fn ancestor_streams(&self, start: &ProvenanceId) -> BTreeSet<SeriesKey> {
        self.reachable(start)
            .iter()
            .filter_map(|id| self.nodes.get(id))
            .map(|n| n.stream().clone())
            .collect()
    }

    /// Raw leaves reachable from the stream's current provenance node.
    pub fn lineage_sources(&self, key: &SeriesKey) -> Result<Vec<&ProvenanceNode>> {
        let sem = self.get_semantics(key)?;
        Ok(self
            .reachable(&sem.provenance)
            .iter()
            .filter_map(|id| self.nodes.get(id))
            .filter(|n| n.is_raw())
            .collect())
    }

    /// Streams `key` was derived from, transitively.
    pub fn lineage_ancestors(&self, key: &SeriesKey) -> Result<BTreeSet<SeriesKey>> {
        let sem = self.get_semantics(key)?;
        let mut out = self.ancestor_streams(&sem.provenance);
        out.remove(key);
        Ok(out)
    }

    /// Registered streams derived from `key`, transitively.
    pub fn lineage_descendants(&self, key: &SeriesKey) -> Result<BTreeSet<SeriesKey>> {
        self.get_semantics(key)?;
        let mut out = BTreeSet::new();
        for (k, sem) in &self.streams {
            if k != key && self.ancestor_streams(&sem.provenance).contains(key) {
                out.insert(k.clone());
            }
        }
        Ok(out)
    }

    /// True when the node graph has no cycle and every node without inputs is
    /// Raw.
    pub fn check_integrity(&self) -> bool {
        let edges: BTreeMap<&str, Vec<&str>> = self
            .nodes
            .values()
            .map(|n| {
                (
                    n.id.as_str(),
                    n.inputs().iter().map(ProvenanceId::as_str).collect(),
                )
            })
            .collect();
        if crate::ontology::find_cycle(self.nodes.keys().map(ProvenanceId::as_str), &edges)
            .is_some()
        {
            return false;
        }
        self.nodes.values().all(|n| {
            (n.is_raw() || !n.inputs().is_empty())
                && n.inputs().iter().all(|i| self.nodes.contains_key(i))
        })
    }

    pub fn export_provenance(&self) -> ProvenanceExport {
        ProvenanceExport {
            nodes: self.nodes.values().cloned().collect(),
            streams: self
                .streams
                .iter()
                .map(|(k, s)| (k.to_string(), s.provenance.clone()))
                .collect(),
        }
    }

    pub fn snapshot(&self) -> CatalogSnapshot {
        CatalogSnapshot {
            databases: self
                .databases
                .values()
                .map(|d| DatabaseSnapshot {
                    database: d.database.clone(),
                    architecture: d.architecture.to_document(),
                    storage_architecture: d.storage_architecture.clone(),
                    retention_sharding_notes: d.retention_sharding_notes.clone(),
                    storage_scheme: d.storage_scheme.clone(),
                })
                .collect(),
            streams: self.streams.values().cloned().collect(),
            nodes: self.nodes.values().cloned().collect(),
        }
    }

    /// Rebuilds a catalog, re-validating architectures against `ontology`.
    pub fn restore(snapshot: CatalogSnapshot, ontology: &OntologySet) -> Result<Self> {
        let mut cat = Catalog::new();
        for d in snapshot.databases {
            let architecture = SystemArchitecture::load(d.architecture, ontology)?;
            cat.register_database(DatabaseSemantics {
                database: d.database,
                architecture,
                storage_architecture: d.storage_architecture,
                retention_sharding_notes: d.retention_sharding_notes,
                storage_scheme: d.storage_scheme,
            })?;
        }
        cat.nodes = snapshot
            .nodes
            .into_iter()
            .map(|n| (n.id.clone(), n))
            .collect();
        cat.streams = snapshot
            .streams
            .into_iter()
            .map(|s| (s.key.clone(), s))
            .collect();
        Ok(cat)
    }
}
