//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setsdb_core::cloud::{heartbeat_sensor, host, status_key, Fixture, CLOUD_DB, CLUSTER};
use setsdb_core::expr::{parse_expr, MissingDataPolicy};
use setsdb_core::ontology::{OntologyError, OntologySet};
use setsdb_core::query::{parse_query, RunOptions, System};
use setsdb_core::reasoning::{convert_units, execute, materialize, plan_exact, SemanticQuery};
use setsdb_core::semantics::{Operation, ProvenanceNode, SemanticsError, StreamDocument};
use setsdb_core::similarity::{
    graph_edit_distance, plan_similarity, system_keywords, GedCosts, ScanMode, SemanticVector,
    SimilarityConfig, SystemDescriptor,
};
use setsdb_core::store::{downsample, Aggregator, Sample, SeriesKey, Store, Value, Window};
use setsdb_core::text::keywords;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn cluster_oracle(f: &Fixture, t0: i64, t1: i64) -> Option<f64> {
    let per_host: Option<Vec<f64>> = (1..=f.hosts)
        .map(|i| common::scan_up_ratio(f.status_events(i), t0, t1))
        .collect();
    per_host.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn c1_end_to_end() -> Outcome {
    let mut checked = 0;
    for f in [Fixture::scripted(), Fixture::generate(2024, 5, 60_000).unwrap()] {
        let sys = System::in_memory();
        f.install(&sys).map_err(|e| e.to_string())?;
        let (s, e) = (f.window.start, f.window.end);
        for (t0, t1) in [(s, e), (s + 7, e - 3), ((s + e) / 3, (s + e) / 2)] {
            let text = format!("DERIVE metric=cluster_availability entity={CLUSTER} RANGE {t0} {t1}");
            let out = sys
                .query(&text, &RunOptions::default())
                .map_err(|e| e.to_string())?;
            let got = out.samples().first().and_then(|s| s.value.as_number());
            let want = cluster_oracle(&f, t0, t1);
            match (got, want) {
                (Some(a), Some(b)) => ensure!((a - b).abs() <= 1e-9, "[{t0},{t1}): {a} vs {b}"),
                (a, b) => ensure!(a == b, "[{t0},{t1}): {a:?} vs {b:?}"),
            }
            let x = &out.explanation;
            let comp = x.iter().position(|l| l.contains(" composition ") && l.contains("cluster_availability"));
            let metric = x.iter().position(|l| l.contains(" metric ") && l.contains("Availability"));
            let up = x.iter().position(|l| l.contains("up_ratio(status)"));
            ensure!(comp == Some(0), "explanation does not start with composition: {x:?}");
            ensure!(
                matches!((metric, up), (Some(m), Some(u)) if m > 0 && u >= m),
                "explanation lacks metric derivation via up_ratio: {x:?}"
            );
            checked += 1;
        }
        if f.hosts == 2 {
            let out = sys
                .query("DERIVE metric=cluster_availability entity=/dc1/c1 RANGE 0 100", &RunOptions::default())
                .map_err(|e| e.to_string())?;
            ensure!(
                out.samples() == [Sample::number(0, 0.9)],
                "scripted fixture gave {:?}",
                out.samples()
            );
        }
    }
    Ok(format!("{checked} windows within 1e-9; trace composition -> metric -> up_ratio"))
}

fn c2_metric_derivation() -> Outcome {
    let mut defined = 0;
    for seed in 0..100u64 {
        let lab = common::lab(seed, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let t0 = rng.random_range(-5_000..5_000);
        let t1 = t0 + rng.random_range(1..4_000);
        let events = common::random_status(&mut rng, t0, t1);
        let store = Store::in_memory();
        store.create_database(CLOUD_DB, None).unwrap();
        store.write_points(&status_key(1), &events).unwrap();
        let q = SemanticQuery::new(host(1), "availability", Window::new(t0, t1).unwrap());
        let plan = plan_exact(&q, &lab.catalog, &lab.ontology).map_err(|e| e.to_string())?;
        let got = execute(&plan, &store).map_err(|e| e.to_string())?.samples;
        match common::scan_up_ratio(&events, t0, t1) {
            Some(want) => {
                defined += 1;
                let v = got.first().and_then(|s| s.value.as_number());
                ensure!(
                    v.is_some_and(|v| (v - want).abs() <= 1e-9),
                    "seed {seed}: {v:?} vs {want}"
                );
            }
            None => ensure!(got.is_empty(), "seed {seed}: expected no value, got {got:?}"),
        }
    }
    Ok(format!("100 streams agree ({defined} with defined state)"))
}

fn c3_units() -> Outcome {
    let ont = OntologySet::load(setsdb_core::cloud::cloud_ontology()).map_err(|e| e.to_string())?;
    let units: Vec<(String, String)> = ont.units().map(|u| (u.name.clone(), u.dimension.clone())).collect();
    let values: Vec<Sample> = [0.0, 1.0, -2.5, 0.001, 1234.5678, 9.87e5]
        .iter()
        .map(|v| Sample::number(0, *v))
        .collect();
    let (mut same, mut cross) = (0, 0);
    for (a, da) in &units {
        for (b, db) in &units {
            if da == db {
                let f = ont.unit_conversion_factor(a, b).map_err(|e| e.to_string())?;
                let g = ont.unit_conversion_factor(b, a).map_err(|e| e.to_string())?;
                let back = convert_units(&convert_units(&values, f).unwrap(), g).unwrap();
                for (x, y) in values.iter().zip(&back) {
                    let (x, y) = (x.value.as_number().unwrap(), y.value.as_number().unwrap());
                    ensure!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{a}->{b}->{a}: {x} vs {y}");
                }
                same += 1;
            } else {
                ensure!(
                    matches!(ont.unit_conversion_factor(a, b), Err(OntologyError::UnitMismatch { .. })),
                    "{a}->{b} did not raise UnitMismatch"
                );
                cross += 1;
            }
        }
    }
    Ok(format!("{same} same-dimension pairs round-trip, {cross} cross-dimension pairs rejected"))
}

fn c4_ged() -> Outcome {
    let corpus = common::ged_corpus(2024, 48);
    let costs = GedCosts::default();
    let mut pairs = 0;
    for (i, g1) in corpus.iter().enumerate() {
        for (j, g2) in corpus.iter().enumerate() {
            let got = graph_edit_distance(g1, g2, &costs, None);
            let want = common::exhaustive_ged(g1, g2, &costs);
            ensure!(!got.approximate, "pair ({i},{j}) was approximated");
            ensure!((got.distance - want).abs() < 1e-9, "pair ({i},{j}): {} vs {want}", got.distance);
            pairs += 1;
        }
    }
    Ok(format!("{pairs}/{pairs} pairs equal"))
}

fn keys(m: &[setsdb_core::similarity::Match]) -> Vec<SeriesKey> {
    m.iter().map(|m| m.key.clone()).collect()
}

fn c5_pruning() -> Outcome {
    let sys = common::multi_db_system(3, 10, 5);
    let ont = sys.ontology().map_err(|e| e.to_string())?;
    let cat = sys.catalog();
    ensure!(cat.streams().count() == 60, "catalog has {} streams", cat.streams().count());
    let cfg = SimilarityConfig {
        tree_thresholds: vec![0.0, 0.0],
        min_score: 0.0,
        top_k: 1000,
        ..Default::default()
    };
    let queries = [
        SemanticVector { metric: Some("availability".into()), ..Default::default() },
        SemanticVector { metric: Some("cpu".into()), sensor: Some(keywords("load sensor")), ..Default::default() },
        SemanticVector { entity: Some(keywords("physical host 7")), ..Default::default() },
        SemanticVector {
            sys: Some(SystemDescriptor::Keywords(keywords("site2 cloud"))),
            metric: Some("status".into()),
            ..Default::default()
        },
    ];
    let w = Window::new(0, 5_000).unwrap();
    for q in &queries {
        let pruned = plan_similarity(q, w, &cfg, &cat, &ont, ScanMode::Pruned).map_err(|e| e.to_string())?;
        let full = plan_similarity(q, w, &cfg, &cat, &ont, ScanMode::Full).map_err(|e| e.to_string())?;
        ensure!(keys(&pruned) == keys(&full), "candidate sets differ for {q:?}");
    }
    Ok(format!("{} queries, identical candidates on 3 dbs x 20 streams", queries.len()))
}

fn c6_self_match() -> Outcome {
    let sys = common::multi_db_system(3, 10, 6);
    let ont = sys.ontology().map_err(|e| e.to_string())?;
    let cat = sys.catalog();
    let cfg = SimilarityConfig { min_score: 0.0, top_k: 1000, ..Default::default() };
    let w = Window::new(0, 5_000).unwrap();
    let mut n = 0;
    for s in cat.streams() {
        let arch = &cat.database(&s.key.database).unwrap().architecture;
        let words = |name: &str| {
            let mut out = keywords(name);
            if let Some(d) = &arch.entity(name).unwrap().description {
                out.extend(keywords(d));
            }
            out
        };
        let q = SemanticVector {
            sys: Some(SystemDescriptor::Keywords(system_keywords(arch))),
            entity: Some(words(&s.entity)),
            metric: Some(s.metric.clone()),
            sensor: s.sensor_entity.as_deref().map(words),
        };
        let base = plan_similarity(&q, w, &cfg, &cat, &ont, ScanMode::Full).map_err(|e| e.to_string())?;
        ensure!(base[0].key == s.key && base[0].score == 1.0, "{} ranked {:?}", s.key, base.first().map(|m| (&m.key, m.score)));
        for k in [1e-3, 0.25, 7.0, 1e4] {
            let scaled = SimilarityConfig { weights: cfg.weights.scaled(k), ..cfg.clone() };
            let again = plan_similarity(&q, w, &scaled, &cat, &ont, ScanMode::Full).map_err(|e| e.to_string())?;
            ensure!(keys(&again) == keys(&base), "{}: ranking changed under scale {k}", s.key);
        }
        n += 1;
    }
    Ok(format!("{n} streams rank themselves first at 1.0; order stable under 4 scalings"))
}

fn c7_provenance() -> Outcome {
    let mut lab = common::lab(77, 4);
    let q = SemanticQuery::new(CLUSTER, "cluster_availability", Window::new(0, 10_000).unwrap());
    let plan = plan_exact(&q, &lab.catalog, &lab.ontology).map_err(|e| e.to_string())?;
    let result = materialize(&plan, &lab.store, &mut lab.catalog, &lab.ontology).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut derived: Vec<SeriesKey> = Vec::new();
    let mut valid = 0;
    while valid < 1000 {
        let all: Vec<SeriesKey> = lab.catalog.streams().map(|s| s.key.clone()).collect();
        let n = rng.random_range(1..4);
        let inputs: Vec<SeriesKey> = all.choose_multiple(&mut rng, n).cloned().collect();
        let op = match rng.random_range(0..3) {
            0 => Operation::Migrate { destination: None },
            1 => Operation::Downsample { window_ms: rng.random_range(1..1000), aggregator: Aggregator::Max },
            _ => Operation::compute(format!("g{}", rng.random_range(0..50)), "random"),
        };
        if derived.is_empty() || rng.random_bool(0.4) {
            let doc = StreamDocument {
                database: CLOUD_DB.into(),
                metric: "derived".into(),
                tags: [("n".to_string(), derived.len().to_string())].into_iter().collect(),
                metric_ref: "load".into(),
                entity: host(rng.random_range(1..=4)),
                unit: "ratio".into(),
                timing: None,
                collection_procedure: None,
                missing_data_policy: MissingDataPolicy::Interpolate,
                sensor_entity: None,
            };
            lab.catalog.register_derived(&doc, &lab.ontology, op, &inputs).map_err(|e| e.to_string())?;
            derived.push(doc.key().unwrap());
            valid += 1;
        } else {
            let output = derived.choose(&mut rng).unwrap().clone();
            match lab.catalog.record_derivation(&output, op, &inputs) {
                Ok(_) => valid += 1,
                Err(SemanticsError::Cycle { .. }) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    ensure!(!common::has_cycle(&lab.catalog), "provenance graph has a cycle");
    ensure!(lab.catalog.check_integrity(), "integrity check failed");
    for n in lab.catalog.nodes() {
        ensure!(!n.inputs().is_empty() || n.is_raw(), "leaf {} is not raw", n.id);
    }
    let sources: BTreeSet<String> = lab
        .catalog
        .lineage_sources(&result)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|n| n.id.to_string())
        .collect();
    let heartbeat: BTreeSet<String> = (1..=4)
        .map(|i| ProvenanceNode::raw(status_key(i), heartbeat_sensor(i)).id.to_string())
        .collect();
    ensure!(sources == heartbeat, "lineage sources {sources:?}");
    Ok(format!("{valid} derivations; acyclic, raw leaves, {} heartbeat sources", heartbeat.len()))
}

fn numbers() -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::vec((-10_000i64..10_000, -1e6f64..1e6), 1..40)
}

fn fresh() -> (Store, SeriesKey) {
    let s = Store::in_memory();
    s.create_database("db", None).unwrap();
    (s, SeriesKey::new("db", "m", [("k", "v")]).unwrap())
}

fn samples(p: &[(i64, f64)]) -> Vec<Sample> {
    p.iter().map(|(t, v)| Sample::number(*t, *v)).collect()
}

fn fail<T: std::fmt::Debug>(name: &str, e: proptest::test_runner::TestError<T>) -> String {
    format!("{name}: {e}")
}

fn c8_store() -> Outcome {
    const CASES: u32 = 10_000;

    runner(CASES)
        .run(&numbers(), |pts| {
            let (s, k) = fresh();
            s.write_points(&k, &samples(&pts)).unwrap();
            let mut want = std::collections::BTreeMap::new();
            for (t, v) in &pts {
                want.insert(*t, *v);
            }
            let want: Vec<Sample> = want.into_iter().map(|(t, v)| Sample::number(t, v)).collect();
            prop_assert_eq!(s.read_range(&k, i64::MIN, i64::MAX).unwrap(), want);
            Ok(())
        })
        .map_err(|e| fail("read-your-writes", e))?;

    runner(CASES)
        .run(&(numbers(), -12_000i64..12_000, -12_000i64..12_000, -12_000i64..12_000), |(pts, a, b, c)| {
            let (s, k) = fresh();
            s.write_points(&k, &samples(&pts)).unwrap();
            let mut cut = [a, b, c];
            cut.sort();
            let mut joined = s.read_range(&k, cut[0], cut[1]).unwrap();
            joined.extend(s.read_range(&k, cut[1], cut[2]).unwrap());
            let whole = s.read_range(&k, cut[0], cut[2]).unwrap();
            prop_assert!(whole.iter().all(|p| cut[0] <= p.timestamp && p.timestamp < cut[2]));
            prop_assert_eq!(joined, whole);
            Ok(())
        })
        .map_err(|e| fail("half-open tiling", e))?;

    runner(CASES)
        .run(&(numbers(), numbers()), |(first, second)| {
            let (s, k) = fresh();
            s.write_points(&k, &samples(&first)).unwrap();
            s.write_points(&k, &samples(&second)).unwrap();
            for p in s.read_range(&k, i64::MIN, i64::MAX).unwrap() {
                let last = second
                    .iter()
                    .rev()
                    .chain(first.iter().rev())
                    .find(|(t, _)| *t == p.timestamp)
                    .unwrap()
                    .1;
                prop_assert_eq!(p.value, Value::Number(last));
            }
            Ok(())
        })
        .map_err(|e| fail("last-write-wins", e))?;

    runner(CASES)
        .run(
            &(prop::collection::btree_set(-100_000i64..100_000, 1..60), -1e9f64..1e9, 1i64..5_000),
            |(ts, c, w)| {
                let pts: Vec<Sample> = ts.iter().map(|t| Sample::number(*t, c)).collect();
                for s in downsample(&pts, w, Aggregator::Mean).unwrap() {
                    prop_assert_eq!(s.value, Value::Number(c));
                }
                Ok(())
            },
        )
        .map_err(|e| fail("mean-downsample-of-constant", e))?;

    Ok(format!("4 properties x {CASES} cases"))
}

fn c9_round_trips() -> Outcome {
    const CASES: u32 = 2_000;
    runner(CASES)
        .run(&common::arb_query(), |q| {
            let first = parse_query(&q.to_string()).unwrap();
            prop_assert_eq!(&first, &q);
            prop_assert_eq!(parse_query(&first.to_string()).unwrap(), first);
            Ok(())
        })
        .map_err(|e| format!("query language: {e}"))?;
    runner(CASES)
        .run(&common::arb_expr(), |e| {
            let first = parse_expr(&e.to_string()).unwrap();
            prop_assert_eq!(&first, &e);
            prop_assert_eq!(parse_expr(&first.to_string()).unwrap(), first);
            Ok(())
        })
        .map_err(|e| format!("expressions: {e}"))?;
    Ok(format!("{CASES} queries and {CASES} expressions"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("end-to-end cluster availability", c1_end_to_end),
        ("metric derivation oracle", c2_metric_derivation),
        ("unit reasoning", c3_units),
        ("exact GED", c4_ged),
        ("pruning completeness", c5_pruning),
        ("self-match ranking", c6_self_match),
        ("provenance integrity", c7_provenance),
        ("store contracts", c8_store),
        ("parser round-trips", c9_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
