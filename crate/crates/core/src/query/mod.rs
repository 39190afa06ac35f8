//! Query front end: the textual language and a [`System`] tying the store,
//! ontology and semantics catalog together.

mod language;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};
use serde::Serialize;

pub use language::{parse_query, MatchQuery, Query, QueryParseError};

use crate::ontology::{ArchitectureDocument, OntologySet, SystemArchitecture};
use crate::reasoning::{execute, materialize, plan_exact, serialize_display, MappedQuery};
use crate::semantics::{
    Catalog, CatalogSnapshot, DatabaseSemantics, Operation, ProvenanceId, StreamDocument,
};
use crate::similarity::{
    plan_similarity, Match, ScanMode, SemanticVector, SimilarityConfig, SystemDescriptor,
};
use crate::store::{line_protocol, BaseStore, RetentionPolicy, Sample, SeriesKey, Store};
use crate::text::keywords;
use crate::{Error, Result};

const ONTOLOGY_FILE: &str = "ontology.json";
const CATALOG_FILE: &str = "catalog.json";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Store derived results as streams with provenance.
    pub materialize: bool,
    pub similarity: SimilarityConfig,
    pub scan: ScanMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            materialize: false,
            similarity: SimilarityConfig::default(),
            scan: ScanMode::Pruned,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchOutput {
    #[serde(flatten)]
    pub matched: Match,
    pub samples: Vec<Sample>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QueryResult {
    Samples {
        samples: Vec<Sample>,
    },
    Derived {
        plan: Box<MappedQuery>,
        samples: Vec<Sample>,
        notes: Vec<String>,
        #[serde(serialize_with = "serialize_opt_key")]
        materialized: Option<SeriesKey>,
    },
    Matches {
        candidates: usize,
        matches: Vec<MatchOutput>,
    },
}

fn serialize_opt_key<S: serde::Serializer>(
    k: &Option<SeriesKey>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match k {
        Some(k) => serialize_display(k, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryOutput {
    pub query: String,
    pub result: QueryResult,
    /// Numbered reasoning steps; empty for basic queries.
    pub explanation: Vec<String>,
}

impl QueryOutput {
    pub fn samples(&self) -> &[Sample] {
        match &self.result {
            QueryResult::Samples { samples } | QueryResult::Derived { samples, .. } => samples,
            QueryResult::Matches { .. } => &[],
        }
    }
}

/// Store, ontology and catalog, optionally persisted under one directory.
pub struct System {
    store: Store,
    ontology: RwLock<Option<Arc<OntologySet>>>,
    catalog: RwLock<Catalog>,
    dir: Option<PathBuf>,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("dir", &self.dir)
            .field("databases", &self.store.database_names())
            .finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl System {
    pub fn in_memory() -> Self {
        System {
            store: Store::in_memory(),
            ontology: RwLock::new(None),
            catalog: RwLock::new(Catalog::new()),
            dir: None,
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let store = Store::open(&dir)?;
        let ont_path = dir.join(ONTOLOGY_FILE);
        let ontology = if ont_path.is_file() {
            let text = fs::read_to_string(&ont_path).map_err(io_err(&ont_path))?;
            Some(Arc::new(OntologySet::from_json(&text)?))
        } else {
            None
        };
        let cat_path = dir.join(CATALOG_FILE);
        let catalog = match (&ontology, cat_path.is_file()) {
            (Some(ont), true) => {
                let text = fs::read_to_string(&cat_path).map_err(io_err(&cat_path))?;
                let snap: CatalogSnapshot = serde_json::from_str(&text)?;
                Catalog::restore(snap, ont)?
            }
            (None, true) => {
                return Err(Error::Invalid(format!(
                    "{} exists without {ONTOLOGY_FILE}",
                    cat_path.display()
                )))
            }
            _ => Catalog::new(),
        };
        Ok(System {
            store,
            ontology: RwLock::new(ontology),
            catalog: RwLock::new(catalog),
            dir: Some(dir),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn ontology(&self) -> Result<Arc<OntologySet>> {
        self.ontology.read().clone().ok_or(Error::NoOntology)
    }

    pub fn catalog(&self) -> RwLockReadGuard<'_, Catalog> {
        self.catalog.read()
    }

    fn save_catalog(&self, cat: &Catalog) -> Result<()> {
        if let Some(dir) = &self.dir {
            let text = serde_json::to_string_pretty(&cat.snapshot())?;
            write_atomic(&dir.join(CATALOG_FILE), &text)?;
        }
        Ok(())
    }

    /// Installs a new ontology. Registered semantics must stay valid under it.
    pub fn load_ontology(&self, text: &str) -> Result<()> {
        let ont = OntologySet::from_json(text)?;
        let mut cat = self.catalog.write();
        let rebuilt = Catalog::restore(cat.snapshot(), &ont)?;
        if let Some(dir) = &self.dir {
            let text = serde_json::to_string_pretty(ont.document())?;
            write_atomic(&dir.join(ONTOLOGY_FILE), &text)?;
        }
        *cat = rebuilt;
        *self.ontology.write() = Some(Arc::new(ont));
        self.save_catalog(&cat)
    }

    pub fn create_database(&self, name: &str, retention: Option<RetentionPolicy>) -> Result<()> {
        self.store.create_database(name, retention)?;
        Ok(())
    }

    /// Registers the database's system architecture. The database must exist.
    pub fn load_architecture(&self, db: &str, doc: ArchitectureDocument) -> Result<()> {
        let ont = self.ontology()?;
        let handle = self.store.database(db)?;
        let arch = SystemArchitecture::load(doc, &ont)?;
        let mut sem = DatabaseSemantics::new(db, arch);
        if let Some(policy) = self.store.retention(&handle)? {
            sem.retention_sharding_notes = format!("retention {policy}");
        }
        let mut cat = self.catalog.write();
        cat.register_database(sem)?;
        self.save_catalog(&cat)
    }

    pub fn register_stream(&self, doc: &StreamDocument) -> Result<SeriesKey> {
        let ont = self.ontology()?;
        let mut cat = self.catalog.write();
        let key = cat.register_stream(doc, &ont)?;
        self.save_catalog(&cat)?;
        Ok(key)
    }

    pub fn record_derivation(
        &self,
        output: &SeriesKey,
        operation: Operation,
        inputs: &[SeriesKey],
    ) -> Result<ProvenanceId> {
        let mut cat = self.catalog.write();
        let id = cat.record_derivation(output, operation, inputs)?;
        self.save_catalog(&cat)?;
        Ok(id)
    }

    /// Writes line protocol into `db`; every line must name `db`. Returns the
    /// number of samples written.
    pub fn write_line_protocol(&self, db: &str, text: &str) -> Result<usize> {
        self.store.database(db)?;
        let entries = line_protocol::parse(text)?;
        if let Some((k, _)) = entries.iter().find(|(k, _)| k.database != db) {
            return Err(Error::Invalid(format!(
                "line for database `{}` written to `{db}`",
                k.database
            )));
        }
        let mut n = 0;
        for (key, points) in line_protocol::group_by_key(entries) {
            n += self.store.write_points(&key, &points)?;
        }
        Ok(n)
    }

    pub fn query(&self, text: &str, opts: &RunOptions) -> Result<QueryOutput> {
        let q = parse_query(text)?;
        self.run_query(&q, opts)
    }

    pub fn run_query(&self, q: &Query, opts: &RunOptions) -> Result<QueryOutput> {
        let query = q.to_string();
        match q {
            Query::Basic { key, t0, t1 } => Ok(QueryOutput {
                query,
                result: QueryResult::Samples {
                    samples: self.store.read_range(key, *t0, *t1)?,
                },
                explanation: Vec::new(),
            }),
            Query::Exact(sq) => {
                let ont = self.ontology()?;
                let plan = plan_exact(sq, &self.catalog.read(), &ont)?;
                let exec = execute(&plan, &self.store)?;
                let materialized = if opts.materialize {
                    let mut cat = self.catalog.write();
                    let key = materialize(&plan, &self.store, &mut cat, &ont)?;
                    self.save_catalog(&cat)?;
                    Some(key)
                } else {
                    None
                };
                Ok(QueryOutput {
                    query,
                    explanation: plan.explanation(),
                    result: QueryResult::Derived {
                        plan: Box::new(plan),
                        samples: exec.samples,
                        notes: exec.notes,
                        materialized,
                    },
                })
            }
            Query::Similarity(mq) => self.run_similarity(query, mq, opts),
        }
    }

    fn run_similarity(&self, query: String, mq: &MatchQuery, opts: &RunOptions) -> Result<QueryOutput> {
        let ont = self.ontology()?;
        let mut cfg = opts.similarity.clone();
        if let Some(k) = mq.top {
            cfg.top_k = k;
        }
        if let Some(s) = mq.min {
            cfg.min_score = s;
        }
        let words = |t: &Option<Vec<String>>| t.as_ref().map(|t| keywords(&t.join(" ")));
        let vector = SemanticVector {
            sys: words(&mq.system).map(SystemDescriptor::Keywords),
            entity: words(&mq.entity),
            metric: mq.metric.as_ref().map(|t| t.join(" ")),
            sensor: words(&mq.sensor),
        };
        let cat = self.catalog.read();
        let candidates = cat.streams().count();
        let found = plan_similarity(&vector, mq.window, &cfg, &cat, &ont, opts.scan)?;
        drop(cat);

        let mut explanation = vec![format!(
            "similarity {} of {candidates} streams scored at least {}",
            found.len(),
            cfg.min_score
        )];
        let mut matches = Vec::new();
        for m in found {
            explanation.push(format!("similarity {} score {}", m.key, m.score));
            let (samples, notes) = match &m.plan {
                Some(plan) => {
                    explanation.extend(plan.steps.iter().map(|s| format!("{} {}", s.rule, s.detail)));
                    match execute(plan, &self.store) {
                        Ok(e) => (e.samples, e.notes),
                        Err(e) => (Vec::new(), vec![e.to_string()]),
                    }
                }
                None => (Vec::new(), m.plan_error.iter().cloned().collect()),
            };
            matches.push(MatchOutput {
                matched: m,
                samples,
                notes,
            });
        }
        let explanation = explanation
            .into_iter()
            .enumerate()
            .map(|(i, l)| format!("{} {l}", i + 1))
            .collect();
        Ok(QueryOutput {
            query,
            result: QueryResult::Matches {
                candidates,
                matches,
            },
            explanation,
        })
    }
}

impl BaseStore for System {
    fn write_points(&self, key: &SeriesKey, points: &[Sample]) -> crate::store::Result<usize> {
        self.store.write_points(key, points)
    }

    fn read_range(&self, key: &SeriesKey, t0: i64, t1: i64) -> crate::store::Result<Vec<Sample>> {
        self.store.read_range(key, t0, t1)
    }

    fn latest_before(&self, key: &SeriesKey, t: i64) -> crate::store::Result<Option<Sample>> {
        self.store.latest_before(key, t)
    }

    fn series_kind(&self, key: &SeriesKey) -> crate::store::Result<crate::store::Kind> {
        self.store.series_kind(key)
    }
}
