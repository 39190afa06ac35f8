//! Exact reasoning: unit, metric-based and composition reasoning that rewrite
//! a semantic query into an executable plan, and the plan executor.

mod execute;
mod plan;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::expr::{EvalError, Expr, MissingDataPolicy};
use crate::ontology::OntologyError;
use crate::semantics::SemanticsError;
use crate::store::{SeriesKey, StoreError, Window};

pub use execute::{convert_units, execute, materialize, Execution};
pub use plan::plan_exact;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("cannot derive `{metric}` for `{entity}`: {reason}")]
    Underivable {
        entity: String,
        metric: String,
        reason: String,
    },
    #[error("entity `{entity}` exists in several databases ({}); name one with db=", databases.join(", "))]
    AmbiguousEntity {
        entity: String,
        databases: Vec<String>,
    },
    #[error("{0} must be numeric")]
    KindMismatch(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = ReasoningError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticQuery {
    pub entity: String,
    /// Metric name or concept-pool synonym.
    pub metric: String,
    pub desired_unit: Option<String>,
    pub window: Window,
    pub database: Option<String>,
}

impl SemanticQuery {
    pub fn new(entity: impl Into<String>, metric: impl Into<String>, window: Window) -> Self {
        SemanticQuery {
            entity: entity.into(),
            metric: metric.into(),
            desired_unit: None,
            window,
            database: None,
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.desired_unit = Some(unit.into());
        self
    }

    pub fn in_database(mut self, db: impl Into<String>) -> Self {
        self.database = Some(db.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateFn {
    Mean,
    Sum,
}

impl fmt::Display for AggregateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregateFn::Mean => "mean",
            AggregateFn::Sum => "sum",
        })
    }
}

pub(crate) fn serialize_display<S: Serializer, T: fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PlanNode {
    Retrieve {
        #[serde(serialize_with = "serialize_display")]
        key: SeriesKey,
        unit: String,
        policy: MissingDataPolicy,
    },
    ConvertUnit {
        factor: f64,
        from: String,
        to: String,
        input: Box<PlanNode>,
    },
    Evaluate {
        metric: String,
        entity: String,
        #[serde(serialize_with = "serialize_display")]
        expr: Expr,
        unit: Option<String>,
        policy: MissingDataPolicy,
        bindings: BTreeMap<String, PlanNode>,
    },
    Aggregate {
        metric: String,
        entity: String,
        func: AggregateFn,
        unit: Option<String>,
        over: Vec<(String, PlanNode)>,
    },
}

impl PlanNode {
    fn collect_retrievals(&self, out: &mut Vec<SeriesKey>) {
        match self {
            PlanNode::Retrieve { key, .. } => out.push(key.clone()),
            PlanNode::ConvertUnit { input, .. } => input.collect_retrievals(out),
            PlanNode::Evaluate { bindings, .. } => {
                bindings.values().for_each(|b| b.collect_retrievals(out))
            }
            PlanNode::Aggregate { over, .. } => {
                over.iter().for_each(|(_, p)| p.collect_retrievals(out))
            }
        }
    }

    pub fn policy(&self) -> MissingDataPolicy {
        match self {
            PlanNode::Retrieve { policy, .. } | PlanNode::Evaluate { policy, .. } => *policy,
            PlanNode::ConvertUnit { input, .. } => input.policy(),
            PlanNode::Aggregate { .. } => MissingDataPolicy::Ignore,
        }
    }

    /// Unit of the values this node produces, when known.
    pub fn unit(&self) -> Option<&str> {
        match self {
            PlanNode::Retrieve { unit, .. } => Some(unit),
            PlanNode::ConvertUnit { to, .. } => Some(to),
            PlanNode::Evaluate { unit, .. } | PlanNode::Aggregate { unit, .. } => {
                unit.as_deref()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Direct,
    Metric,
    Composition,
    Unit,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Direct => "direct",
            Rule::Metric => "metric",
            Rule::Composition => "composition",
            Rule::Unit => "unit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub rule: Rule,
    pub detail: String,
}

/// Executable plan produced by [`plan_exact`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappedQuery {
    pub database: String,
    pub entity: String,
    pub metric: String,
    pub window: Window,
    pub root: PlanNode,
    pub steps: Vec<Step>,
}

impl MappedQuery {
    /// Every stream read by the plan, paired with the query window.
    pub fn retrievals(&self) -> Vec<(SeriesKey, Window)> {
        let mut keys = Vec::new();
        self.root.collect_retrievals(&mut keys);
        keys.into_iter().map(|k| (k, self.window)).collect()
    }

    pub fn rules(&self) -> Vec<Rule> {
        self.steps.iter().map(|s| s.rule).collect()
    }

    /// One line per step: `<n> <rule> <detail>`.
    pub fn explanation(&self) -> Vec<String> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{} {} {}", i + 1, s.rule, s.detail))
            .collect()
    }
}
