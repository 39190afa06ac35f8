//! Cloud-monitoring domain: ontology, architecture, streams and synthetic
//! data for a data center with one cluster of hosts, plus the cluster
//! availability case study.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expr::{MissingDataPolicy, STATE_DOWN, STATE_UP};
use crate::ontology::{
    ArchitectureDocument, Composition, Entity, MetricDoc, OntologyDocument, RelationLabel,
    SystemOntologyDoc, UnitDoc, UnitKind,
};
use crate::query::{Query, QueryResult, RunOptions, System};
use crate::reasoning::{Rule, SemanticQuery};
use crate::semantics::{StreamDocument, Timing};
use crate::store::{line_protocol, Sample, SeriesKey, Value, Window};
use crate::{Error, Result};

pub const CLOUD_DB: &str = "clouddb";
pub const CLUSTER: &str = "/dc1/c1";

pub fn host(i: usize) -> String {
    format!("{CLUSTER}/h{i}")
}

pub fn heartbeat_sensor(i: usize) -> String {
    format!("{}/hb-sensor", host(i))
}

pub fn load_sensor(i: usize) -> String {
    format!("{}/load-sensor", host(i))
}

pub fn status_key(i: usize) -> SeriesKey {
    SeriesKey::new(CLOUD_DB, "status", [("host", format!("h{i}"))]).expect("valid key")
}

pub fn load_key(i: usize) -> SeriesKey {
    SeriesKey::new(CLOUD_DB, "load", [("host", format!("h{i}"))]).expect("valid key")
}

fn metric(name: &str, parent: Option<&str>, description: &str) -> MetricDoc {
    MetricDoc {
        name: name.into(),
        parent: parent.map(Into::into),
        description: Some(description.into()),
        ..Default::default()
    }
}

fn unit(name: &str, kind: UnitKind, dimension: &str, factor: f64) -> UnitDoc {
    UnitDoc {
        name: name.into(),
        kind,
        dimension: dimension.into(),
        factor_to_base: Some(factor),
        composition: None,
    }
}

pub fn cloud_ontology() -> OntologyDocument {
    let concepts = [
        "DataCenter",
        "Cluster",
        "Rack",
        "Host",
        "VMM",
        "VM",
        "OS",
        "AppInstance",
        "Network",
        "Sensor",
    ];
    let has = [
        ("DataCenter", "Cluster"),
        ("DataCenter", "Network"),
        ("Cluster", "Rack"),
        ("Cluster", "Host"),
        ("Rack", "Host"),
        ("Host", "VMM"),
        ("VMM", "VM"),
        ("VM", "OS"),
        ("OS", "AppInstance"),
        ("Host", "Sensor"),
        ("Network", "Sensor"),
    ];
    let with = |mut m: MetricDoc, dim: &str, def: Option<&str>| {
        m.unit_dimension = Some(dim.into());
        m.quantitative_definition = def.map(Into::into);
        m
    };
    let mut cpu = with(
        metric("CPUtime", Some("Performance"), "processor time consumed"),
        "time",
        None,
    );
    cpu.concept_pool = Some(vec!["CPUcredit".into()]);
    let metrics = vec![
        metric("QoSMetricConcept", None, "quality of service metric"),
        metric("Performance", Some("QoSMetricConcept"), "performance metric"),
        with(
            metric("ResponseTime", Some("Performance"), "request response time"),
            "time",
            None,
        ),
        with(
            metric("Throughput", Some("Performance"), "data processed per time"),
            "throughput",
            None,
        ),
        cpu,
        with(
            metric("load", Some("Performance"), "cpu load of a host"),
            "ratio",
            None,
        ),
        with(
            metric("cluster_load", Some("Performance"), "summed cpu load of a cluster"),
            "ratio",
            Some("sum_over_subentities(load)"),
        ),
        metric("Dependability", Some("QoSMetricConcept"), "dependability metric"),
        with(
            metric("Availability", Some("Dependability"), "fraction of time in service"),
            "ratio",
            Some("up_ratio(status)"),
        ),
        with(
            metric("status", Some("Dependability"), "up or down heartbeat status"),
            "state",
            None,
        ),
        with(
            metric(
                "cluster_availability",
                Some("Dependability"),
                "mean availability of the hosts of a cluster",
            ),
            "ratio",
            Some("mean_over_subentities(Availability)"),
        ),
    ];
    let mut bps = unit("bytes_per_second", UnitKind::Ratio, "throughput", 1.0);
    bps.composition = Some(Composition {
        numerator: vec!["data".into()],
        denominator: vec!["time".into()],
    });
    let mut kbps = unit("kilobytes_per_second", UnitKind::Ratio, "throughput", 1000.0);
    kbps.composition = bps.composition.clone();
    let mut volume = unit("vm_demand_volume", UnitKind::Volume, "volume", 1.0);
    volume.composition = Some(Composition {
        numerator: vec!["cpu".into(), "data".into()],
        denominator: vec![],
    });
    let units = vec![
        unit("second", UnitKind::Basic, "time", 1.0),
        unit("millisecond", UnitKind::Basic, "time", 0.001),
        unit("minute", UnitKind::Basic, "time", 60.0),
        unit("ratio", UnitKind::Basic, "ratio", 1.0),
        unit("percent", UnitKind::Basic, "ratio", 0.01),
        unit("byte", UnitKind::Basic, "data", 1.0),
        unit("kilobyte", UnitKind::Basic, "data", 1000.0),
        unit("state", UnitKind::Basic, "state", 1.0),
        unit("core", UnitKind::Basic, "cpu", 1.0),
        bps,
        kbps,
        volume,
    ];
    OntologyDocument {
        system_ontology: SystemOntologyDoc {
            concepts: concepts.iter().map(|c| c.to_string()).collect(),
            has_relations: has
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        },
        metric_ontology: metrics,
        unit_ontology: units,
    }
}

/// `cloud1`: `/dc1` with cluster `/dc1/c1` of `hosts` hosts, each carrying a
/// heartbeat and a load sensor, and a network connecting the hosts.
pub fn cloud_architecture(hosts: usize) -> ArchitectureDocument {
    let mut entities = vec![
        Entity::new("/dc1", "DataCenter").with_description("primary data center"),
        Entity::new(CLUSTER, "Cluster").with_description("compute cluster"),
        Entity::new("/dc1/net", "Network").with_description("data center network"),
    ];
    let mut relations = vec![
        ("/dc1".to_string(), RelationLabel::Has, CLUSTER.to_string()),
        ("/dc1".to_string(), RelationLabel::Has, "/dc1/net".to_string()),
    ];
    for i in 1..=hosts {
        entities.push(
            Entity::new(host(i), "Host")
                .with_description(format!("physical host {i}"))
                .with_function("runs virtual machines"),
        );
        entities.push(
            Entity::new(heartbeat_sensor(i), "Sensor")
                .with_description("heartbeat sensor probing host liveness"),
        );
        entities.push(
            Entity::new(load_sensor(i), "Sensor").with_description("cpu load sensor"),
        );
        relations.push((CLUSTER.to_string(), RelationLabel::Has, host(i)));
        relations.push((host(i), RelationLabel::Has, heartbeat_sensor(i)));
        relations.push((host(i), RelationLabel::Has, load_sensor(i)));
        relations.push(("/dc1/net".to_string(), RelationLabel::Connects, host(i)));
    }
    ArchitectureDocument {
        system_id: "cloud1".into(),
        entities,
        relations,
    }
}

pub fn cloud_streams(hosts: usize) -> Vec<StreamDocument> {
    let mut out = Vec::new();
    for i in 1..=hosts {
        let tag = [("host".to_string(), format!("h{i}"))].into_iter().collect();
        out.push(StreamDocument {
            database: CLOUD_DB.into(),
            metric: "status".into(),
            tags: tag,
            metric_ref: "status".into(),
            entity: host(i),
            unit: "state".into(),
            timing: None,
            collection_procedure: Some("heartbeat probe, event on change".into()),
            missing_data_policy: MissingDataPolicy::Ignore,
            sensor_entity: Some(heartbeat_sensor(i)),
        });
        let tag = [("host".to_string(), format!("h{i}"))].into_iter().collect();
        out.push(StreamDocument {
            database: CLOUD_DB.into(),
            metric: "load".into(),
            tags: tag,
            metric_ref: "load".into(),
            entity: host(i),
            unit: "percent".into(),
            timing: Some(Timing {
                frequency_ms: Some(1000),
                period: None,
            }),
            collection_procedure: Some("sampled cpu utilisation".into()),
            missing_data_policy: MissingDataPolicy::Interpolate,
            sensor_entity: Some(load_sensor(i)),
        });
    }
    out
}

/// Complete cloud dataset: documents, samples and the case-study window.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub hosts: usize,
    pub ontology: OntologyDocument,
    pub architecture: ArchitectureDocument,
    pub streams: Vec<StreamDocument>,
    pub data: Vec<(SeriesKey, Vec<Sample>)>,
    pub window: Window,
}

fn state(up: bool) -> &'static str {
    if up {
        STATE_UP
    } else {
        STATE_DOWN
    }
}

impl Fixture {
    fn with_data(hosts: usize, data: Vec<(SeriesKey, Vec<Sample>)>, window: Window) -> Self {
        Fixture {
            hosts,
            ontology: cloud_ontology(),
            architecture: cloud_architecture(hosts),
            streams: cloud_streams(hosts),
            data,
            window,
        }
    }

    /// Seeded random dataset over `[0, duration_ms)`. Each host's status
    /// stream starts at a random offset in the first tenth of the window and
    /// changes state at random gaps; load is sampled every second.
    pub fn generate(seed: u64, hosts: usize, duration_ms: i64) -> Result<Fixture> {
        if hosts == 0 {
            return Err(Error::Invalid("a fixture needs at least one host".into()));
        }
        if duration_ms < 10 {
            return Err(Error::Invalid(format!(
                "fixture duration must be at least 10 ms, got {duration_ms}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let max_gap = (duration_ms / 5).max(1);
        for i in 1..=hosts {
            let mut t = rng.random_range(0..duration_ms / 10);
            let mut events = Vec::new();
            while t < duration_ms {
                events.push(Sample::state(t, state(rng.random_bool(0.7))));
                t += rng.random_range(1..=max_gap);
            }
            data.push((status_key(i), events));
            let load = (0..duration_ms)
                .step_by(1000)
                .map(|t| Sample::number(t, (rng.random_range(0.0..100.0_f64) * 100.0).round() / 100.0))
                .collect();
            data.push((load_key(i), load));
        }
        Ok(Fixture::with_data(
            hosts,
            data,
            Window::new(0, duration_ms).expect("positive duration"),
        ))
    }

    /// Two hosts over `[0, 100)`: h1 is down during `[60, 80)`, h2 is always
    /// up, so cluster availability is 0.9.
    pub fn scripted() -> Fixture {
        let data = vec![
            (
                status_key(1),
                vec![
                    Sample::state(0, STATE_UP),
                    Sample::state(60, STATE_DOWN),
                    Sample::state(80, STATE_UP),
                ],
            ),
            (status_key(2), vec![Sample::state(0, STATE_UP)]),
            (load_key(1), vec![Sample::number(0, 40.0), Sample::number(50, 60.0)]),
            (load_key(2), vec![Sample::number(0, 10.0), Sample::number(50, 30.0)]),
        ];
        Fixture::with_data(2, data, Window::new(0, 100).expect("valid"))
    }

    pub fn line_protocol(&self) -> String {
        let mut out = String::new();
        for (key, samples) in &self.data {
            for s in samples {
                out.push_str(&line_protocol::format_line(key, s));
                out.push('\n');
            }
        }
        out
    }

    /// Creates the database and loads every document and sample into `sys`.
    pub fn install(&self, sys: &System) -> Result<()> {
        sys.load_ontology(&serde_json::to_string(&self.ontology)?)?;
        sys.create_database(CLOUD_DB, None)?;
        sys.load_architecture(CLOUD_DB, self.architecture.clone())?;
        for s in &self.streams {
            sys.register_stream(s)?;
        }
        sys.write_line_protocol(CLOUD_DB, &self.line_protocol())?;
        Ok(())
    }

    /// Writes `ontology.json`, `architecture.json`, `streams.json` and
    /// `data.lp` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let files = [
            ("ontology.json", to_json(&self.ontology)?),
            ("architecture.json", to_json(&self.architecture)?),
            ("streams.json", to_json(&self.streams)?),
            ("data.lp", self.line_protocol()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))?;
        }
        Ok(())
    }

    pub fn status_events(&self, i: usize) -> &[Sample] {
        let key = status_key(i);
        self.data
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, s)| s.as_slice())
            .unwrap_or(&[])
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Up fraction of `window` by stepping one millisecond at a time. Instants
/// before the first event are not counted; `None` when none are defined.
pub fn up_ratio_scan(events: &[Sample], window: Window) -> Option<f64> {
    let mut idx = 0;
    let mut current: Option<bool> = None;
    let (mut up, mut defined) = (0u64, 0u64);
    for t in window.start..window.end {
        while idx < events.len() && events[idx].timestamp <= t {
            current = match &events[idx].value {
                Value::State(l) => Some(l == STATE_UP),
                Value::Number(_) => None,
            };
            idx += 1;
        }
        if let Some(u) = current {
            defined += 1;
            up += u as u64;
        }
    }
    (defined > 0).then(|| up as f64 / defined as f64)
}

/// Mean of the per-host scans; `None` if any host is undefined.
pub fn cluster_availability_scan(fixture: &Fixture, window: Window) -> Option<f64> {
    let per_host: Option<Vec<f64>> = (1..=fixture.hosts)
        .map(|i| up_ratio_scan(fixture.status_events(i), window))
        .collect();
    per_host.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudy {
    pub query: String,
    pub derived: Option<f64>,
    pub oracle: Option<f64>,
    pub rules: Vec<Rule>,
    pub explanation: Vec<String>,
}

impl CaseStudy {
    pub fn agrees(&self, tolerance: f64) -> bool {
        match (self.derived, self.oracle) {
            (Some(a), Some(b)) => (a - b).abs() <= tolerance,
            (None, None) => true,
            _ => false,
        }
    }
}

/// Installs `fixture` in memory and derives cluster availability of
/// `/dc1/c1` over the fixture window, next to the scan oracle.
pub fn run_case_study(fixture: &Fixture) -> Result<CaseStudy> {
    let sys = System::in_memory();
    fixture.install(&sys)?;
    let q = Query::Exact(SemanticQuery::new(
        CLUSTER,
        "cluster_availability",
        fixture.window,
    ));
    let out = sys.run_query(&q, &RunOptions::default())?;
    let QueryResult::Derived { plan, samples, .. } = &out.result else {
        return Err(Error::Invalid("DERIVE returned a non-derived result".into()));
    };
    let derived = match samples.as_slice() {
        [] => None,
        [s] => s.value.as_number(),
        more => {
            return Err(Error::Invalid(format!(
                "expected one availability value, got {}",
                more.len()
            )))
        }
    };
    Ok(CaseStudy {
        query: out.query.clone(),
        derived,
        oracle: cluster_availability_scan(fixture, fixture.window),
        rules: plan.rules(),
        explanation: out.explanation,
    })
}
