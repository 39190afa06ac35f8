use std::collections::BTreeMap;

use super::{AggregateFn, MappedQuery, PlanNode, ReasoningError, Result};
use crate::expr::{evaluate, EvalContext};
use crate::ontology::OntologySet;
use crate::semantics::{Catalog, Operation, StreamDocument};
use crate::store::{BaseStore, Kind, Sample, SeriesKey, Window};

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub samples: Vec<Sample>,
    pub notes: Vec<String>,
}

/// Multiplies every value by `factor`.
pub fn convert_units(points: &[Sample], factor: f64) -> Result<Vec<Sample>> {
    points
        .iter()
        .map(|s| match s.value.as_number() {
            Some(v) => Ok(Sample::number(s.timestamp, v * factor)),
            None => Err(ReasoningError::KindMismatch(format!(
                "unit conversion input at t={}",
                s.timestamp
            ))),
        })
        .collect()
}

/// Reads every retrieval and applies the pipeline bottom-up.
pub fn execute(plan: &MappedQuery, store: &dyn BaseStore) -> Result<Execution> {
    let mut notes = Vec::new();
    let samples = run(&plan.root, plan.window, store, &mut notes)?;
    if samples.is_empty() {
        notes.push(format!("no result in {}", plan.window));
    }
    Ok(Execution { samples, notes })
}

fn run(
    node: &PlanNode,
    window: Window,
    store: &dyn BaseStore,
    notes: &mut Vec<String>,
) -> Result<Vec<Sample>> {
    match node {
        PlanNode::Retrieve { key, .. } => {
            let mut points = store.read_range(key, window.start, window.end)?;
            if store.series_kind(key)? == Kind::Symbolic {
                if let Some(prior) = store.latest_before(key, window.start)? {
                    points.insert(0, prior);
                }
            }
            if points.is_empty() {
                notes.push(format!("no data for {key} in {window}"));
            }
            Ok(points)
        }
        PlanNode::ConvertUnit { factor, input, .. } => {
            convert_units(&run(input, window, store, notes)?, *factor)
        }
        PlanNode::Evaluate {
            expr,
            policy,
            bindings,
            ..
        } => {
            let mut ctx = EvalContext::new(window.start, window.end, *policy)?;
            for (name, p) in bindings {
                ctx.bind(name.clone(), run(p, window, store, notes)?);
            }
            Ok(evaluate(expr, &ctx)?)
        }
        PlanNode::Aggregate { func, over, .. } => {
            let mut rows: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
            for (entity, p) in over {
                let series = run(p, window, store, notes)?;
                for s in series {
                    let v = s.value.as_number().ok_or_else(|| {
                        ReasoningError::KindMismatch(format!("aggregate input from {entity}"))
                    })?;
                    rows.entry(s.timestamp).or_default().push(v);
                }
            }
            let n = over.len();
            let dropped = rows.values().filter(|v| v.len() < n).count();
            if dropped > 0 {
                notes.push(format!(
                    "{dropped} timestamps dropped: not every sub-entity had a value"
                ));
            }
            Ok(rows
                .into_iter()
                .filter(|(_, v)| v.len() == n)
                .map(|(t, v)| {
                    let sum: f64 = v.iter().sum();
                    let value = match func {
                        AggregateFn::Sum => sum,
                        AggregateFn::Mean => sum / n as f64,
                    };
                    Sample::number(t, value)
                })
                .collect())
        }
    }
}

/// Writes the output of every derived plan node as its own stream and
/// records its provenance. Streams are keyed `{database, metric,
/// entity=<path>}`, plus `unit=<unit>` for a final unit conversion. Returns
/// the key of the root result.
pub fn materialize(
    plan: &MappedQuery,
    store: &dyn BaseStore,
    catalog: &mut Catalog,
    ont: &OntologySet,
) -> Result<SeriesKey> {
    let mut ctx = Materializer {
        plan,
        store,
        catalog,
        ont,
    };
    let keys = ctx.node(&plan.root, true)?;
    match keys.as_slice() {
        [key] => Ok(key.clone()),
        _ => Err(ReasoningError::Underivable {
            entity: plan.entity.clone(),
            metric: plan.metric.clone(),
            reason: "the result cannot be stored as a single stream".into(),
        }),
    }
}

struct Materializer<'a> {
    plan: &'a MappedQuery,
    store: &'a dyn BaseStore,
    catalog: &'a mut Catalog,
    ont: &'a OntologySet,
}

impl Materializer<'_> {
    /// Keys of the streams that carry this node's output.
    fn node(&mut self, node: &PlanNode, root: bool) -> Result<Vec<SeriesKey>> {
        match node {
            PlanNode::Retrieve { key, .. } => Ok(vec![key.clone()]),
            PlanNode::ConvertUnit {
                input,
                factor,
                from,
                to,
            } => {
                let inputs = self.node(input, false)?;
                if !root {
                    return Ok(inputs);
                }
                let mut tags = vec![("unit".to_string(), to.clone())];
                let (metric, entity) = (self.plan.metric.clone(), self.plan.entity.clone());
                tags.push(("entity".to_string(), entity.clone()));
                let op = Operation::compute(format!("unit {from}->{to}"), format!("factor {factor}"));
                self.store_node(node, &metric, &entity, to, tags, op, &inputs)
                    .map(|k| vec![k])
            }
            PlanNode::Evaluate {
                metric,
                entity,
                expr,
                unit,
                bindings,
                ..
            } => {
                let mut inputs = Vec::new();
                for b in bindings.values() {
                    inputs.extend(self.node(b, false)?);
                }
                let op = Operation::compute(format!("metric {metric}"), expr.to_string());
                self.derived(node, metric, entity, unit.as_deref(), op, inputs)
            }
            PlanNode::Aggregate {
                metric,
                entity,
                func,
                unit,
                over,
            } => {
                let mut inputs = Vec::new();
                for (_, p) in over {
                    inputs.extend(self.node(p, false)?);
                }
                let members: Vec<&str> = over.iter().map(|(e, _)| e.as_str()).collect();
                let op = Operation::compute(format!("composition {func}"), members.join(","));
                self.derived(node, metric, entity, unit.as_deref(), op, inputs)
            }
        }
    }

    fn derived(
        &mut self,
        node: &PlanNode,
        metric: &str,
        entity: &str,
        unit: Option<&str>,
        op: Operation,
        mut inputs: Vec<SeriesKey>,
    ) -> Result<Vec<SeriesKey>> {
        inputs.sort();
        inputs.dedup();
        let (Some(unit), true) = (unit, self.ont.metric(metric).is_some()) else {
            return Ok(inputs);
        };
        let tags = vec![("entity".to_string(), entity.to_string())];
        self.store_node(node, metric, entity, unit, tags, op, &inputs)
            .map(|k| vec![k])
    }

    #[allow(clippy::too_many_arguments)]
    fn store_node(
        &mut self,
        node: &PlanNode,
        metric: &str,
        entity: &str,
        unit: &str,
        tags: Vec<(String, String)>,
        op: Operation,
        inputs: &[SeriesKey],
    ) -> Result<SeriesKey> {
        let doc = StreamDocument {
            database: self.plan.database.clone(),
            metric: metric.to_string(),
            tags: tags.into_iter().collect(),
            metric_ref: metric.to_string(),
            entity: entity.to_string(),
            unit: unit.to_string(),
            timing: None,
            collection_procedure: Some("materialized query result".into()),
            missing_data_policy: node.policy(),
            sensor_entity: None,
        };
        let key = doc.key()?;
        self.catalog.register_derived(&doc, self.ont, op, inputs)?;
        let samples = run(node, self.plan.window, self.store, &mut Vec::new())?;
        self.store.write_points(&key, &samples)?;
        Ok(key)
    }
}
