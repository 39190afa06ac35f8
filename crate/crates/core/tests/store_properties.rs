use std::collections::BTreeMap;

use proptest::prelude::*;

use setsdb_core::store::{
    downsample, line_protocol, Aggregator, RetentionPolicy, Sample, SeriesKey, Store, Value,
};

fn key() -> SeriesKey {
    SeriesKey::new("db", "m", [("host", "h1")]).unwrap()
}

fn store() -> Store {
    let s = Store::in_memory();
    s.create_database("db", None).unwrap();
    s
}

fn numbers(max: usize) -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::vec((-10_000i64..10_000, -1e6f64..1e6), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn read_your_writes(points in numbers(60)) {
        let s = store();
        let batch: Vec<Sample> = points.iter().map(|(t, v)| Sample::number(*t, *v)).collect();
        s.write_points(&key(), &batch).unwrap();
        let mut want: BTreeMap<i64, f64> = BTreeMap::new();
        for (t, v) in &points {
            want.insert(*t, *v);
        }
        let got = s.read_range(&key(), i64::MIN, i64::MAX).unwrap();
        let want: Vec<Sample> = want.into_iter().map(|(t, v)| Sample::number(t, v)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn half_open_tiling(points in numbers(60), a in -12_000i64..12_000, b in -12_000i64..12_000, c in -12_000i64..12_000) {
        let s = store();
        let batch: Vec<Sample> = points.iter().map(|(t, v)| Sample::number(*t, *v)).collect();
        s.write_points(&key(), &batch).unwrap();
        let mut cut = [a, b, c];
        cut.sort();
        let [t0, m, t1] = cut;
        let mut joined = s.read_range(&key(), t0, m).unwrap();
        joined.extend(s.read_range(&key(), m, t1).unwrap());
        let whole = s.read_range(&key(), t0, t1).unwrap();
        prop_assert!(whole.iter().all(|p| t0 <= p.timestamp && p.timestamp < t1));
        prop_assert_eq!(joined, whole);
    }

    #[test]
    fn last_write_wins(first in numbers(30), second in numbers(30)) {
        let s = store();
        let a: Vec<Sample> = first.iter().map(|(t, v)| Sample::number(*t, *v)).collect();
        let b: Vec<Sample> = second.iter().map(|(t, v)| Sample::number(*t, *v)).collect();
        s.write_points(&key(), &a).unwrap();
        s.write_points(&key(), &b).unwrap();
        for p in s.read_range(&key(), i64::MIN, i64::MAX).unwrap() {
            let expected = second
                .iter()
                .rev()
                .chain(first.iter().rev())
                .find(|(t, _)| *t == p.timestamp)
                .map(|(_, v)| *v)
                .unwrap();
            prop_assert_eq!(p.value, Value::Number(expected));
        }
    }

    #[test]
    fn mean_of_constant_is_constant(
        ts in prop::collection::btree_set(-100_000i64..100_000, 1..80),
        c in -1e9f64..1e9,
        w in 1i64..5_000,
    ) {
        let pts: Vec<Sample> = ts.iter().map(|t| Sample::number(*t, c)).collect();
        for s in downsample(&pts, w, Aggregator::Mean).unwrap() {
            prop_assert_eq!(s.value, Value::Number(c));
        }
    }

    #[test]
    fn count_downsample_conserves_samples(
        ts in prop::collection::btree_set(-100_000i64..100_000, 0..80),
        w in 1i64..5_000,
    ) {
        let pts: Vec<Sample> = ts.iter().map(|t| Sample::number(*t, 1.5)).collect();
        let total: f64 = downsample(&pts, w, Aggregator::Count)
            .unwrap()
            .iter()
            .map(|s| s.value.as_number().unwrap())
            .sum();
        prop_assert_eq!(total as usize, pts.len());
    }

    #[test]
    fn line_protocol_round_trips(points in numbers(20), label in "[a-z]{1,6}") {
        let mut text = String::new();
        for (t, v) in &points {
            text.push_str(&line_protocol::format_line(&key(), &Sample::number(*t, *v)));
            text.push('\n');
        }
        let sk = SeriesKey::new("db", "status", [("host", "h1")]).unwrap();
        text.push_str(&line_protocol::format_line(&sk, &Sample::state(3, label.clone())));
        let parsed = line_protocol::parse(&text).unwrap();
        prop_assert_eq!(parsed.len(), points.len() + 1);
        for ((k, s), (t, v)) in parsed.iter().zip(&points) {
            prop_assert_eq!(k, &key());
            prop_assert_eq!(s, &Sample::number(*t, *v));
        }
        prop_assert_eq!(&parsed.last().unwrap().1, &Sample::state(3, label));
    }
}

#[test]
fn persisted_store_reopens_identically() {
    let dir = tempfile::tempdir().unwrap();
    let status = SeriesKey::new("db", "status", [("host", "h1")]).unwrap();
    {
        let s = Store::open(dir.path()).unwrap();
        s.create_database("db", Some("1000;100:mean:inf".parse().unwrap()))
            .unwrap();
        s.write_points(&key(), &[Sample::number(5, 1.0), Sample::number(2, 4.0)])
            .unwrap();
        s.write_points(&key(), &[Sample::number(5, 2.0)]).unwrap();
        s.write_points(&status, &[Sample::state(1, "up")]).unwrap();
    }
    let s = Store::open(dir.path()).unwrap();
    assert_eq!(
        s.read_range(&key(), 0, 10).unwrap(),
        vec![Sample::number(2, 4.0), Sample::number(5, 2.0)]
    );
    assert_eq!(s.read_range(&status, 0, 10).unwrap(), vec![Sample::state(1, "up")]);
    let db = s.database("db").unwrap();
    assert_eq!(
        s.retention(&db).unwrap(),
        Some("1000;100:mean:inf".parse::<RetentionPolicy>().unwrap())
    );
}

#[test]
fn retention_rolls_up_evicted_data() {
    let s = Store::in_memory();
    let db = s
        .create_database("db", Some("1000;100:mean:inf".parse().unwrap()))
        .unwrap();
    let pts: Vec<Sample> = (0..30).map(|i| Sample::number(i * 50, i as f64)).collect();
    s.write_points(&key(), &pts).unwrap();
    let evicted = s.apply_retention(&db, 2000).unwrap();
    assert_eq!(evicted, 20);
    let got = s.read_range(&key(), 0, 1000).unwrap();
    let want: Vec<Sample> = (0..10)
        .map(|w| Sample::number(w * 100, (2 * w) as f64 + 0.5))
        .collect();
    assert_eq!(got, want);
    assert_eq!(s.read_range(&key(), 1000, 1500).unwrap(), pts[20..30].to_vec());
}

#[test]
fn kind_is_enforced_and_names_validated() {
    let s = store();
    s.write_points(&key(), &[Sample::number(1, 1.0)]).unwrap();
    assert!(s.write_points(&key(), &[Sample::state(2, "up")]).is_err());
    assert!(s.write_points(&key(), &[Sample::number(3, f64::NAN)]).is_err());
    assert!(s.create_database("db", None).is_err());
    assert!(s.create_database("bad.name", None).is_err());
    assert!(s.read_range(&key(), 5, 1).is_err());
    assert!(s.read_range(&key(), 5, 5).unwrap().is_empty());
}
