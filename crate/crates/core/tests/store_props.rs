mod common;

use std::collections::BTreeMap;

use clinpath::store::{export_graph, load, save, save_to_path, load_from_path, NodeKind};
use clinpath::{Dataset, LabResult, Rational64, Scalar};
use common::{build, rows};
use proptest::prelude::*;

fn round_trip<T: Scalar + PartialEq>(ds: &Dataset<T>) -> (Vec<u8>, Dataset<T>) {
    let mut bytes = Vec::new();
    save(ds, &mut bytes).unwrap();
    let back = load::<T, _>(&bytes[..]).unwrap();
    (bytes, back)
}

/// Rebuilds results from a graph: edges carry patient, test, day and value.
fn results_from_graph<T: Scalar>(ds: &Dataset<T>) -> Vec<(String, String, chrono::NaiveDate, T)> {
    let g = export_graph(ds);
    let kinds: BTreeMap<&str, NodeKind> = g.nodes.iter().map(|n| (n.id.as_str(), n.kind)).collect();
    let mut out: Vec<_> = g
        .edges
        .iter()
        .map(|e| {
            assert_eq!(kinds[e.source.as_str()], NodeKind::Patient);
            assert_eq!(kinds[e.target.as_str()], NodeKind::Test);
            (
                e.source.strip_prefix("patient:").unwrap().to_owned(),
                e.target.strip_prefix("test:").unwrap().to_owned(),
                e.day,
                e.value,
            )
        })
        .collect();
    out.sort_by(|a, b| (&a.0, &a.1, a.2).cmp(&(&b.0, &b.1, b.2)));
    out
}

proptest! {
    #[test]
    fn save_load_identity_f64(rows in rows(200)) {
        let ds = build::<f64>(&rows);
        let (bytes, back) = round_trip(&ds);
        prop_assert_eq!(&back, &ds);
        // Saving again gives the same bytes.
        let (again, _) = round_trip(&back);
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn save_load_identity_exact(rows in rows(200)) {
        let ds = build::<Rational64>(&rows);
        let (_, back) = round_trip(&ds);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn graph_reimports_to_the_same_results(rows in rows(200)) {
        let ds = build::<f64>(&rows);
        let g = export_graph(&ds);
        prop_assert_eq!(g.edges.len(), ds.results().len());
        let expected: Vec<_> = ds
            .results()
            .iter()
            .map(|r: &LabResult<f64>| (r.patient_id.clone(), r.test.clone(), r.day, r.value))
            .collect();
        prop_assert_eq!(results_from_graph(&ds), expected);
        for (e, r) in g.edges.iter().zip(ds.results()) {
            prop_assert_eq!(e.category, ds.category_of(r));
        }
        let json = serde_json::to_string(&g).unwrap();
        let parsed: clinpath::store::Graph<f64> = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(parsed, g);
    }
}

#[test]
fn file_round_trip() {
    let ds = build::<f64>(&[(0, 0, 1, 100, 120, 40), (1, 2, 3, 5, 1500, 1000)]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_to_path(&ds, &path).unwrap();
    assert_eq!(load_from_path::<f64>(&path).unwrap(), ds);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
