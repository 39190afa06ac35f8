#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setsdb_core::expr::{BinOp, Builtin, Expr};
use setsdb_core::query::{MatchQuery, Query};
use setsdb_core::reasoning::SemanticQuery;
use setsdb_core::similarity::{GedCosts, LabeledGraph};
use setsdb_core::store::{Sample, SeriesKey, Value, Window};

/// Walks every millisecond of `[t0, t1)` and looks up the newest event at or
/// before it by linear search.
pub fn scan_up_ratio(events: &[Sample], t0: i64, t1: i64) -> Option<f64> {
    let mut up = 0u64;
    let mut defined = 0u64;
    for t in t0..t1 {
        let latest = events.iter().rev().find(|e| e.timestamp <= t);
        if let Some(e) = latest {
            defined += 1;
            if matches!(&e.value, Value::State(s) if s == "up") {
                up += 1;
            }
        }
    }
    if defined == 0 {
        None
    } else {
        Some(up as f64 / defined as f64)
    }
}

/// Random status events: state changes at random gaps, some before `t0`.
pub fn random_status(rng: &mut ChaCha8Rng, t0: i64, t1: i64) -> Vec<Sample> {
    let mut t = t0 - rng.random_range(0..(t1 - t0) / 4 + 1) + rng.random_range(0..(t1 - t0) / 3 + 1);
    let mut out = Vec::new();
    while t < t1 + 50 {
        let label = if rng.random_bool(0.6) { "up" } else { "down" };
        out.push(Sample::state(t, label));
        t += rng.random_range(1..=(t1 - t0) / 6 + 1);
    }
    out
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.iter().filter(|x| b.contains(*x)).count() as f64;
    let union = a.len() as f64 + b.len() as f64 - inter;
    inter / union
}

/// Minimum cost over every edit path that keeps, substitutes or deletes each
/// node of `g1` and inserts the rest of `g2`; edge edits are those implied by
/// the node correspondence.
pub fn exhaustive_ged(g1: &LabeledGraph, g2: &LabeledGraph, c: &GedCosts) -> f64 {
    fn go(
        i: usize,
        image: &mut Vec<Option<usize>>,
        taken: &mut Vec<bool>,
        g1: &LabeledGraph,
        g2: &LabeledGraph,
        c: &GedCosts,
        best: &mut f64,
    ) {
        if i == g1.nodes.len() {
            *best = best.min(path_cost(image, g1, g2, c));
            return;
        }
        image.push(None);
        go(i + 1, image, taken, g1, g2, c, best);
        image.pop();
        for j in 0..g2.nodes.len() {
            if !taken[j] {
                taken[j] = true;
                image.push(Some(j));
                go(i + 1, image, taken, g1, g2, c, best);
                image.pop();
                taken[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(
        0,
        &mut Vec::new(),
        &mut vec![false; g2.nodes.len()],
        g1,
        g2,
        c,
        &mut best,
    );
    best
}

fn path_cost(image: &[Option<usize>], g1: &LabeledGraph, g2: &LabeledGraph, c: &GedCosts) -> f64 {
    let mut cost = 0.0;
    for (u, m) in image.iter().enumerate() {
        cost += match m {
            Some(v) => c.node_sub * (1.0 - jaccard(&g1.nodes[u], &g2.nodes[*v])),
            None => c.node_del,
        };
    }
    let inserted = (0..g2.nodes.len())
        .filter(|v| !image.contains(&Some(*v)))
        .count();
    cost += inserted as f64 * c.node_ins;
    // Every ordered pair of g2 nodes: compare with the preimage pair.
    let pre = |v: usize| image.iter().position(|m| *m == Some(v));
    for x in 0..g2.nodes.len() {
        for y in 0..g2.nodes.len() {
            let Some(l2) = g2.edges.get(&(x, y)) else { continue };
            match (pre(x), pre(y)) {
                (Some(a), Some(b)) => match g1.edges.get(&(a, b)) {
                    Some(l1) if l1 == l2 => {}
                    Some(_) => cost += c.edge_del + c.edge_ins,
                    None => cost += c.edge_ins,
                },
                _ => cost += c.edge_ins,
            }
        }
    }
    for &(a, b) in g1.edges.keys() {
        let kept = match (image[a], image[b]) {
            (Some(x), Some(y)) => g2.edges.contains_key(&(x, y)),
            _ => false,
        };
        if !kept {
            cost += c.edge_del;
        }
    }
    cost
}

const CONCEPTS: &[&str] = &["host", "sensor", "cluster", "rack", "network"];
const WORDS: &[&str] = &["alpha", "beta", "gamma", "cpu", "disk"];
const LABELS: &[&str] = &["has", "connects", "interacts"];

/// Deterministic corpus of small labeled directed graphs with 0..=5 nodes.
pub fn ged_corpus(seed: u64, count: usize) -> Vec<LabeledGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = i % 6;
            let mut g = LabeledGraph::new();
            for _ in 0..n {
                let concept = CONCEPTS[rng.random_range(0..CONCEPTS.len())];
                let words: Vec<String> = (0..rng.random_range(0..3))
                    .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
                    .collect();
                g.add_node(concept, words);
            }
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random_bool(0.3) {
                        g.add_edge(a, b, LABELS[rng.random_range(0..LABELS.len())]);
                    }
                }
            }
            g
        })
        .collect()
}

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,8}".prop_filter("builtin names are not metrics", |s| {
        Builtin::from_name(s).is_none()
    })
}

pub fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..100_000).prop_map(|n| Expr::Number(n as f64)),
        (0.0f64..1e6).prop_map(Expr::Number),
        ident().prop_map(Expr::Metric),
        (
            prop_oneof![
                Just(Builtin::UpRatio),
                Just(Builtin::SumOverSubentities),
                Just(Builtin::MeanOverSubentities)
            ],
            ident()
        )
            .prop_map(|(func, arg)| Expr::Call { func, arg }),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        (
            prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div)
            ],
            inner.clone(),
            inner,
        )
            .prop_map(|(op, l, r)| Expr::binary(op, l, r))
    })
}

fn name() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,6}"
}

fn arb_key() -> impl Strategy<Value = SeriesKey> {
    (
        name(),
        name(),
        prop::collection::btree_map("[a-z]{1,4}", "[a-z0-9/_-]{1,5}", 0..3),
    )
        .prop_map(|(db, metric, tags)| SeriesKey { database: db, metric, tags })
}

fn arb_window() -> impl Strategy<Value = Window> {
    (-1_000_000_000_000i64..1_000_000_000_000, 1i64..1_000_000_000)
        .prop_map(|(s, len)| Window::new(s, s + len).unwrap())
}

/// Clause values: plain words, paths, or strings needing quotes.
fn clause_value() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z][A-Za-z0-9_]{0,10}",
        "(/[a-z0-9-]{1,5}){1,4}",
        "[a-z]{1,4}( [a-z\"]{1,4}){1,2}",
    ]
}

fn keyword_list() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-zA-Z0-9_/.\"\\\\-]{1,6}", 1..4)
}

pub fn arb_query() -> impl Strategy<Value = Query> {
    let basic = (arb_key(), -1_000_000i64..1_000_000, 0i64..1_000_000)
        .prop_map(|(key, t0, len)| Query::Basic { key, t0, t1: t0 + len });
    let exact = (
        clause_value(),
        clause_value(),
        prop::option::of(clause_value()),
        prop::option::of(name()),
        arb_window(),
    )
        .prop_map(|(metric, entity, desired_unit, database, window)| {
            Query::Exact(SemanticQuery {
                entity,
                metric,
                desired_unit,
                window,
                database,
            })
        });
    let similarity = (
        prop::option::of(keyword_list()),
        prop::option::of(keyword_list()),
        prop::option::of(keyword_list()),
        prop::option::of(keyword_list()),
        prop::option::of(1usize..100),
        prop::option::of(0.0f64..=1.0),
        arb_window(),
    )
        .prop_filter("at least one tilde clause", |t| {
            t.0.is_some() || t.1.is_some() || t.2.is_some() || t.3.is_some()
        })
        .prop_map(|(system, entity, metric, sensor, top, min, window)| {
            Query::Similarity(MatchQuery {
                system,
                entity,
                metric,
                sensor,
                top,
                min,
                window,
            })
        });
    prop_oneof![basic, exact, similarity]
}

/// A system with `dbs` cloud databases of `hosts` hosts each (two streams
/// per host), filled from seeded fixtures.
pub fn multi_db_system(dbs: usize, hosts: usize, seed: u64) -> setsdb_core::query::System {
    use setsdb_core::cloud::{cloud_architecture, cloud_ontology, cloud_streams, Fixture, CLOUD_DB};
    let sys = setsdb_core::query::System::in_memory();
    sys.load_ontology(&serde_json::to_string(&cloud_ontology()).unwrap())
        .unwrap();
    for d in 0..dbs {
        let db = format!("cloud{d}");
        sys.create_database(&db, None).unwrap();
        let mut arch = cloud_architecture(hosts);
        arch.system_id = format!("site{d} cloud");
        if let Some(e) = arch.entities.iter_mut().find(|e| e.name == "/dc1") {
            e.description = Some(format!("data center number {d}"));
        }
        sys.load_architecture(&db, arch).unwrap();
        for mut s in cloud_streams(hosts) {
            s.database = db.clone();
            sys.register_stream(&s).unwrap();
        }
        let f = Fixture::generate(seed + d as u64, hosts, 5_000).unwrap();
        let text = f.line_protocol().replace(&format!("{CLOUD_DB} "), &format!("{db} "));
        sys.write_line_protocol(&db, &text).unwrap();
    }
    sys
}

pub struct Lab {
    pub store: setsdb_core::store::Store,
    pub catalog: setsdb_core::semantics::Catalog,
    pub ontology: setsdb_core::ontology::OntologySet,
    pub fixture: setsdb_core::cloud::Fixture,
}

/// Fixture loaded into a bare store and catalog.
pub fn lab(seed: u64, hosts: usize) -> Lab {
    use setsdb_core::cloud::{Fixture, CLOUD_DB};
    use setsdb_core::ontology::{OntologySet, SystemArchitecture};
    use setsdb_core::semantics::{Catalog, DatabaseSemantics};
    let fixture = Fixture::generate(seed, hosts, 10_000).unwrap();
    let ontology = OntologySet::load(fixture.ontology.clone()).unwrap();
    let arch = SystemArchitecture::load(fixture.architecture.clone(), &ontology).unwrap();
    let mut catalog = Catalog::new();
    catalog
        .register_database(DatabaseSemantics::new(CLOUD_DB, arch))
        .unwrap();
    for s in &fixture.streams {
        catalog.register_stream(s, &ontology).unwrap();
    }
    let store = setsdb_core::store::Store::in_memory();
    store.create_database(CLOUD_DB, None).unwrap();
    for (k, pts) in &fixture.data {
        store.write_points(k, pts).unwrap();
    }
    Lab {
        store,
        catalog,
        ontology,
        fixture,
    }
}

/// Depth-first cycle search over provenance inputs.
pub fn has_cycle(cat: &setsdb_core::semantics::Catalog) -> bool {
    use std::collections::BTreeMap;
    let nodes: BTreeMap<&str, Vec<&str>> = cat
        .nodes()
        .map(|n| (n.id.as_str(), n.inputs().iter().map(|i| i.as_str()).collect()))
        .collect();
    // 0 unvisited, 1 on stack, 2 done
    let mut mark: BTreeMap<&str, u8> = BTreeMap::new();
    fn visit<'a>(
        n: &'a str,
        nodes: &BTreeMap<&'a str, Vec<&'a str>>,
        mark: &mut BTreeMap<&'a str, u8>,
    ) -> bool {
        match mark.get(n) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        mark.insert(n, 1);
        for m in nodes.get(n).into_iter().flatten() {
            if visit(m, nodes, mark) {
                return true;
            }
        }
        mark.insert(n, 2);
        false
    }
    nodes.keys().any(|n| visit(n, &nodes, &mut mark))
}
