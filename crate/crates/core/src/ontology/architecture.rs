use std::collections::{BTreeMap, BTreeSet};

use super::{
    ArchitectureDocument, Entity, OntologyError, OntologySet, RelationLabel, Result,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Relation {
    pub from: String,
    pub label: RelationLabel,
    pub to: String,
}

/// A validated instance of the system ontology.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemArchitecture {
    system_id: String,
    entities: BTreeMap<String, Entity>,
    relations: BTreeSet<Relation>,
    children: BTreeMap<String, BTreeSet<String>>,
    parent: BTreeMap<String, String>,
}

impl SystemArchitecture {
    pub fn from_json(text: &str, ontology: &OntologySet) -> Result<Self> {
        let doc: ArchitectureDocument = serde_json::from_str(text)?;
        SystemArchitecture::load(doc, ontology)
    }

    pub fn load(doc: ArchitectureDocument, ontology: &OntologySet) -> Result<Self> {
        if doc.system_id.trim().is_empty() {
            return Err(OntologyError::Schema("empty system_id".into()));
        }
        let system = ontology.system();
        let mut entities = BTreeMap::new();
        for e in doc.entities {
            if e.name.trim().is_empty() {
                return Err(OntologyError::Schema("empty entity name".into()));
            }
            if !system.concepts.contains(&e.concept) {
                return Err(OntologyError::DanglingReference {
                    context: format!("concept of entity `{}`", e.name),
                    name: e.concept.clone(),
                });
            }
            let name = e.name.clone();
            if entities.insert(name.clone(), e).is_some() {
                return Err(OntologyError::Schema(format!("duplicate entity `{name}`")));
            }
        }

        let mut relations = BTreeSet::new();
        let mut children: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        for (from, label, to) in doc.relations {
            for end in [&from, &to] {
                if !entities.contains_key(end) {
                    return Err(OntologyError::DanglingReference {
                        context: format!("relation {from} {label} {to}"),
                        name: end.clone(),
                    });
                }
            }
            if label == RelationLabel::Has {
                let pc = &entities[&from].concept;
                let cc = &entities[&to].concept;
                if !system.allows_has(pc, cc) {
                    return Err(OntologyError::Schema(format!(
                        "`{from}` ({pc}) cannot have `{to}` ({cc}) per the system ontology"
                    )));
                }
                if let Some(existing) = parent.get(&to) {
                    if *existing != from {
                        return Err(OntologyError::Schema(format!(
                            "entity `{to}` has two parents: `{existing}` and `{from}`"
                        )));
                    }
                }
                parent.insert(to.clone(), from.clone());
                children.entry(from.clone()).or_default().insert(to.clone());
            }
            relations.insert(Relation { from, label, to });
        }

        let edges: BTreeMap<&str, Vec<&str>> = children
            .iter()
            .map(|(p, cs)| (p.as_str(), cs.iter().map(String::as_str).collect()))
            .collect();
        if let Some(path) = super::find_cycle(entities.keys().map(String::as_str), &edges) {
            return Err(OntologyError::Cycle {
                relation: "architecture has-relations",
                path,
            });
        }

        Ok(SystemArchitecture {
            system_id: doc.system_id,
            entities,
            relations,
            children,
            parent,
        })
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity(&self, name: &str) -> Result<&Entity> {
        self.entities
            .get(name)
            .ok_or_else(|| OntologyError::UnknownEntity(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entities.contains_key(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    pub fn parent_of(&self, name: &str) -> Option<&str> {
        self.parent.get(name).map(String::as_str)
    }

    /// Direct `has`-children of `entity`, in name order.
    pub fn sub_entities(&self, entity: &str) -> Result<Vec<&Entity>> {
        self.entity(entity)?;
        Ok(self
            .children
            .get(entity)
            .into_iter()
            .flatten()
            .map(|c| &self.entities[c])
            .collect())
    }

    pub fn to_document(&self) -> ArchitectureDocument {
        ArchitectureDocument {
            system_id: self.system_id.clone(),
            entities: self.entities.values().cloned().collect(),
            relations: self
                .relations
                .iter()
                .map(|r| (r.from.clone(), r.label, r.to.clone()))
                .collect(),
        }
    }
}
