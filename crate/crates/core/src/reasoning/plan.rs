use std::collections::{BTreeMap, HashMap};

use super::{AggregateFn, MappedQuery, PlanNode, ReasoningError, Result, Rule, SemanticQuery, Step};
use crate::expr::{Builtin, Expr, MissingDataPolicy};
use crate::ontology::{OntologyError, OntologySet};
use crate::semantics::{Catalog, DatabaseSemantics};

type Members = Vec<(String, PlanNode)>;

/// Rewrites `q` into a plan. Rules apply in the order direct, metric-based,
/// composition; a unit conversion is appended when `q.desired_unit` differs
/// from the unit of the derived values.
pub fn plan_exact(q: &SemanticQuery, catalog: &Catalog, ont: &OntologySet) -> Result<MappedQuery> {
    let metric = ont.resolve_metric(&q.metric)?.name.clone();
    let db = choose_database(q, catalog)?;
    let mut planner = Planner {
        db,
        catalog,
        ont,
        memo: HashMap::new(),
        steps: Vec::new(),
    };
    let mut root = planner.plan(&q.entity, &metric)?;
    if let Some(desired) = &q.desired_unit {
        let target = ont.unit(desired)?.name.clone();
        let Some(unit) = root.unit().map(str::to_string) else {
            return Err(ReasoningError::Underivable {
                entity: q.entity.clone(),
                metric,
                reason: format!("derived values have no declared unit to convert to `{target}`"),
            });
        };
        root = planner.convert(root, &unit, &target, &q.entity, &metric)?;
    }
    Ok(MappedQuery {
        database: db.database.clone(),
        entity: q.entity.clone(),
        metric,
        window: q.window,
        root,
        steps: planner.steps,
    })
}

fn choose_database<'a>(q: &SemanticQuery, catalog: &'a Catalog) -> Result<&'a DatabaseSemantics> {
    if let Some(name) = &q.database {
        let db = catalog.database(name)?;
        db.architecture.entity(&q.entity)?;
        return Ok(db);
    }
    let found: Vec<_> = catalog
        .databases()
        .filter(|d| d.architecture.contains(&q.entity))
        .collect();
    match found.as_slice() {
        [] => Err(OntologyError::UnknownEntity(q.entity.clone()).into()),
        [db] => Ok(db),
        many => Err(ReasoningError::AmbiguousEntity {
            entity: q.entity.clone(),
            databases: many.iter().map(|d| d.database.clone()).collect(),
        }),
    }
}

struct Planner<'a> {
    db: &'a DatabaseSemantics,
    catalog: &'a Catalog,
    ont: &'a OntologySet,
    memo: HashMap<(String, String), PlanNode>,
    steps: Vec<Step>,
}

impl Planner<'_> {
    fn step(&mut self, rule: Rule, detail: String) {
        self.steps.push(Step { rule, detail });
    }

    fn plan(&mut self, entity: &str, metric: &str) -> Result<PlanNode> {
        let memo_key = (entity.to_string(), metric.to_string());
        if let Some(p) = self.memo.get(&memo_key) {
            return Ok(p.clone());
        }
        let node = self.plan_uncached(entity, metric)?;
        self.memo.insert(memo_key, node.clone());
        Ok(node)
    }

    fn plan_uncached(&mut self, entity: &str, metric: &str) -> Result<PlanNode> {
        let direct = self
            .catalog
            .streams_in(&self.db.database)
            .find(|s| s.metric == metric && s.entity == entity);
        if let Some(s) = direct {
            self.step(
                Rule::Direct,
                format!("{entity} {metric} <- {} [{}]", s.key, s.unit),
            );
            return Ok(PlanNode::Retrieve {
                key: s.key.clone(),
                unit: s.unit.clone(),
                policy: s.missing_data_policy,
            });
        }
        let node = self.ont.metric(metric).ok_or_else(|| {
            ReasoningError::Ontology(OntologyError::UnknownMetric(metric.to_string()))
        })?;
        let Some(def) = node.definition.clone() else {
            return Err(ReasoningError::Underivable {
                entity: entity.to_string(),
                metric: metric.to_string(),
                reason: "no stream is registered and the metric has no quantitative definition"
                    .into(),
            });
        };
        let unit = match &node.unit_dimension {
            Some(dim) => self.ont.base_unit(dim).map(|u| u.name.clone()),
            None => None,
        };

        if def.uses_composition() {
            return self.plan_composition(entity, metric, def, unit);
        }

        self.step(Rule::Metric, format!("{entity} {metric} := {def}"));
        let bindings = self.plan_bindings(entity, metric, &def, &BTreeMap::new())?;
        Ok(PlanNode::Evaluate {
            metric: metric.to_string(),
            entity: entity.to_string(),
            policy: combined_policy(bindings.values()),
            expr: def,
            unit,
            bindings,
        })
    }

    fn plan_bindings(
        &mut self,
        entity: &str,
        metric: &str,
        def: &Expr,
        bound: &BTreeMap<String, PlanNode>,
    ) -> Result<BTreeMap<String, PlanNode>> {
        let operands = def.operand_refs();
        let mut bindings = BTreeMap::new();
        for m in def.free_metrics() {
            if bound.contains_key(&m) {
                continue;
            }
            let mut p = self.plan(entity, &m)?;
            if operands.contains(&m) {
                p = self.normalize(p, entity, metric)?;
            }
            bindings.insert(m, p);
        }
        Ok(bindings)
    }

    /// Converts a numeric input to the base unit of its dimension.
    fn normalize(&mut self, p: PlanNode, entity: &str, metric: &str) -> Result<PlanNode> {
        let Some(unit) = p.unit().map(str::to_string) else {
            return Ok(p);
        };
        let dim = self.ont.unit(&unit)?.dimension.clone();
        match self.ont.base_unit(&dim).map(|u| u.name.clone()) {
            Some(base) => self.convert(p, &unit, &base, entity, metric),
            None => Ok(p),
        }
    }

    fn convert(
        &mut self,
        p: PlanNode,
        from: &str,
        to: &str,
        entity: &str,
        metric: &str,
    ) -> Result<PlanNode> {
        if from == to {
            return Ok(p);
        }
        let factor = self.ont.unit_conversion_factor(from, to)?;
        self.step(
            Rule::Unit,
            format!("{entity} {metric} {from} -> {to} factor {factor}"),
        );
        Ok(PlanNode::ConvertUnit {
            factor,
            from: from.to_string(),
            to: to.to_string(),
            input: Box::new(p),
        })
    }

    fn plan_composition(
        &mut self,
        entity: &str,
        metric: &str,
        def: Expr,
        unit: Option<String>,
    ) -> Result<PlanNode> {
        let header = self.steps.len();
        self.step(Rule::Composition, String::new());

        let mut aggregates = BTreeMap::new();
        let mut used = Vec::new();
        for (func, inner) in def.composition_calls() {
            let (over, members) = self.plan_children(entity, &inner)?;
            used.extend(members);
            let agg_fn = match func {
                Builtin::SumOverSubentities => AggregateFn::Sum,
                _ => AggregateFn::Mean,
            };
            let agg_unit = over
                .first()
                .and_then(|(_, p)| p.unit().map(str::to_string));
            aggregates.insert(
                placeholder(func, &inner),
                PlanNode::Aggregate {
                    metric: format!("{}({inner})", func.name()),
                    entity: entity.to_string(),
                    func: agg_fn,
                    unit: agg_unit,
                    over,
                },
            );
        }
        used.sort();
        used.dedup();
        self.steps[header].detail = format!("{entity} {metric} := {def} over {}", used.join(", "));

        if let Expr::Call { func, arg } = &def {
            let mut agg = aggregates.remove(&placeholder(*func, arg)).expect("planned above");
            if let PlanNode::Aggregate {
                metric: m,
                unit: u,
                ..
            } = &mut agg
            {
                *m = metric.to_string();
                if unit.is_some() {
                    *u = unit;
                }
            }
            return Ok(agg);
        }

        let expr = def.replace_calls(&|f, a| f.is_composition().then(|| placeholder(f, a)));
        let mut bindings = self.plan_bindings(entity, metric, &expr, &aggregates)?;
        bindings.extend(aggregates);
        Ok(PlanNode::Evaluate {
            metric: metric.to_string(),
            entity: entity.to_string(),
            policy: combined_policy(bindings.values()),
            expr,
            unit,
            bindings,
        })
    }

    /// Plans `inner` for every direct sub-entity, grouped by concept. A
    /// concept group where no member can be planned is skipped; a group where
    /// only some members can be planned is an error.
    fn plan_children(
        &mut self,
        entity: &str,
        inner: &str,
    ) -> Result<(Members, Vec<String>)> {
        let children = self.db.architecture.sub_entities(entity)?;
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for c in &children {
            groups.entry(c.concept.as_str()).or_default().push(c.name.as_str());
        }
        let mut over = Vec::new();
        let mut used = Vec::new();
        for (concept, members) in groups {
            let mark = self.steps.len();
            let mut planned = Vec::new();
            let mut failure = None;
            for m in &members {
                match self.plan(m, inner) {
                    Ok(p) => planned.push((m.to_string(), p)),
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            match failure {
                None => {}
                Some(_) if planned.is_empty() => {
                    self.steps.truncate(mark);
                    continue;
                }
                Some(e) => {
                    return Err(ReasoningError::Underivable {
                        entity: entity.to_string(),
                        metric: inner.to_string(),
                        reason: format!(
                            "only {} of {} `{concept}` sub-entities can supply it: {e}",
                            planned.len(),
                            members.len()
                        ),
                    })
                }
            }
            for (name, p) in planned {
                let p = self.normalize(p, &name, inner)?;
                used.push(name.clone());
                over.push((name, p));
            }
        }
        if over.is_empty() {
            return Err(ReasoningError::Underivable {
                entity: entity.to_string(),
                metric: inner.to_string(),
                reason: "no sub-entity can supply it".into(),
            });
        }
        Ok((over, used))
    }
}

fn placeholder(func: Builtin, arg: &str) -> String {
    format!("_{}_{arg}", func.name())
}

fn combined_policy<'a>(inputs: impl Iterator<Item = &'a PlanNode>) -> MissingDataPolicy {
    let mut any = false;
    for p in inputs {
        any = true;
        if p.policy() == MissingDataPolicy::Ignore {
            return MissingDataPolicy::Ignore;
        }
    }
    if any {
        MissingDataPolicy::Interpolate
    } else {
        MissingDataPolicy::Ignore
    }
}
