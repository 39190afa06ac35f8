use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::{Aggregator, SeriesKey};

/// Content-addressed provenance node id (hex SHA-256).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProvenanceId(String);

impl ProvenanceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn digest(parts: &[&str]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        ProvenanceId(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl fmt::Display for ProvenanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Operation {
    Migrate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        destination: Option<String>,
    },
    Downsample {
        window_ms: i64,
        aggregator: Aggregator,
    },
    Compute {
        name: String,
        #[serde(default)]
        features: String,
        /// Recorded only; never dereferenced.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
}

impl Operation {
    pub fn compute(name: impl Into<String>, features: impl Into<String>) -> Self {
        Operation::Compute {
            name: name.into(),
            features: features.into(),
            url: None,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Migrate { destination: None } => f.write_str("migrate"),
            Operation::Migrate {
                destination: Some(d),
            } => write!(f, "migrate to {d}"),
            Operation::Downsample {
                window_ms,
                aggregator,
            } => write!(f, "downsample {aggregator} per {window_ms}ms"),
            Operation::Compute { name, .. } => write!(f, "compute {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProvenanceKind {
    Raw {
        sensor_entity: String,
        stream: SeriesKey,
    },
    Derived {
        operation: Operation,
        inputs: Vec<ProvenanceId>,
        output: SeriesKey,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceNode {
    pub id: ProvenanceId,
    #[serde(flatten)]
    pub kind: ProvenanceKind,
}

impl ProvenanceNode {
    pub fn raw(stream: SeriesKey, sensor_entity: impl Into<String>) -> Self {
        let sensor_entity = sensor_entity.into();
        let id = ProvenanceId::digest(&["raw", &stream.to_string(), &sensor_entity]);
        ProvenanceNode {
            id,
            kind: ProvenanceKind::Raw {
                sensor_entity,
                stream,
            },
        }
    }

    pub fn derived(output: SeriesKey, operation: Operation, inputs: Vec<ProvenanceId>) -> Self {
        let op = serde_json::to_string(&operation).expect("operation serializes");
        let key = output.to_string();
        let mut parts = vec!["derived", op.as_str(), key.as_str()];
        parts.extend(inputs.iter().map(ProvenanceId::as_str));
        ProvenanceNode {
            id: ProvenanceId::digest(&parts),
            kind: ProvenanceKind::Derived {
                operation,
                inputs,
                output,
            },
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self.kind, ProvenanceKind::Raw { .. })
    }

    /// The stream this node produced.
    pub fn stream(&self) -> &SeriesKey {
        match &self.kind {
            ProvenanceKind::Raw { stream, .. } => stream,
            ProvenanceKind::Derived { output, .. } => output,
        }
    }

    pub fn inputs(&self) -> &[ProvenanceId] {
        match &self.kind {
            ProvenanceKind::Raw { .. } => &[],
            ProvenanceKind::Derived { inputs, .. } => inputs,
        }
    }
}
