//! setsdb: a time-series store with semantic annotations, exact and
//! similarity-based semantic queries, and stream provenance.

#![allow(clippy::result_large_err)]

pub mod cloud;
pub mod expr;
pub mod ontology;
pub mod query;
pub mod reasoning;
pub mod semantics;
pub mod similarity;
pub mod store;
pub mod text;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Ontology(#[from] ontology::OntologyError),
    #[error(transparent)]
    Semantics(Box<semantics::SemanticsError>),
    #[error(transparent)]
    Reasoning(Box<reasoning::ReasoningError>),
    #[error(transparent)]
    Similarity(#[from] similarity::SimilarityError),
    #[error(transparent)]
    Query(#[from] query::QueryParseError),
    #[error(transparent)]
    Expr(#[from] expr::ParseError),
    #[error(transparent)]
    Eval(#[from] expr::EvalError),
    #[error("no ontology loaded")]
    NoOntology,
    #[error("{0}")]
    Invalid(String),
    #[error("invalid document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the environment (I/O, corrupt files) rather than
    /// of the request.
    pub fn is_internal(&self) -> bool {
        use store::StoreError as S;
        let store = |e: &S| matches!(e, S::Io { .. } | S::Corrupt { .. });
        match self {
            Error::Io { .. } => true,
            Error::Store(e) => store(e),
            Error::Semantics(e) => matches!(&**e, semantics::SemanticsError::Key(e) if store(e)),
            Error::Reasoning(e) => matches!(&**e, reasoning::ReasoningError::Store(e) if store(e)),
            _ => false,
        }
    }
}

impl From<semantics::SemanticsError> for Error {
    fn from(e: semantics::SemanticsError) -> Self {
        Error::Semantics(Box::new(e))
    }
}

impl From<reasoning::ReasoningError> for Error {
    fn from(e: reasoning::ReasoningError) -> Self {
        Error::Reasoning(Box::new(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
