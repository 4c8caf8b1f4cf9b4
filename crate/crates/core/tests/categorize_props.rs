mod common;

use clinpath::categorize::{categorize, ReferenceCuts};
use clinpath::{category_of_order, Rational64, ResultCategory};
use common::{build, rows, Oracle};
use proptest::prelude::*;

fn r(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

proptest! {
    #[test]
    fn engine_matches_oracle_f64(rows in rows(300)) {
        let ds = build::<f64>(&rows);
        let oracle = Oracle::new(ds.results());
        for res in ds.results() {
            prop_assert_eq!(ds.category_of(res), oracle.classify(res), "{:?}", res);
        }
        // Float medians round once; the exact median must be within that rounding.
        let close = |a: Option<f64>, b: Option<Rational64>| match (a, b) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                let b = *b.numer() as f64 / *b.denom() as f64;
                (a - b).abs() <= 1e-12 * b.abs().max(1.0)
            }
            _ => false,
        };
        for (test, cuts) in ds.cuts() {
            prop_assert!(close(cuts.high_cut, oracle.high_cut(test)));
            prop_assert!(close(cuts.low_cut, oracle.low_cut(test)));
        }
    }

    #[test]
    fn engine_matches_oracle_exact(rows in rows(300)) {
        let ds = build::<Rational64>(&rows);
        let oracle = Oracle::new(ds.results());
        for res in ds.results() {
            prop_assert_eq!(ds.category_of(res), oracle.classify(res));
        }
        for (test, cuts) in ds.cuts() {
            prop_assert_eq!(cuts.high_cut, oracle.high_cut(test));
            prop_assert_eq!(cuts.low_cut, oracle.low_cut(test));
        }
    }

    #[test]
    fn f32_and_f64_agree_on_one_decimal_data(rows in rows(200)) {
        let a = build::<f64>(&rows);
        let b = build::<f32>(&rows);
        let ca: Vec<_> = a.results().iter().map(|x| a.category_of(x)).collect();
        let cb: Vec<_> = b.results().iter().map(|x| b.category_of(x)).collect();
        prop_assert_eq!(ca, cb);
    }

    #[test]
    fn normal_iff_inside_range(
        v in -1000i64..1000, lo in -500i64..500, w in 0i64..500,
        low in proptest::option::of(-1500i64..1500), high in proptest::option::of(-1500i64..1500),
    ) {
        let cuts = ReferenceCuts { test: "t".into(), low_cut: low.map(|x| r(x, 1)), high_cut: high.map(|x| r(x, 1)) };
        let c = categorize(r(v, 1), r(lo, 1), r(lo + w, 1), Some(&cuts)).unwrap();
        let inside = lo <= v && v <= lo + w;
        prop_assert_eq!(c == ResultCategory::Normal, inside);
        prop_assert_eq!(matches!(c, ResultCategory::High | ResultCategory::VeryHigh), v > lo + w);
        prop_assert_eq!(matches!(c, ResultCategory::Low | ResultCategory::VeryLow), v < lo);
    }

    #[test]
    fn monotone_in_value(
        a in -1000i64..1000, b in -1000i64..1000, lo in -500i64..500, w in 0i64..500,
        low in proptest::option::of(-1500i64..1500), high in proptest::option::of(-1500i64..1500),
    ) {
        let cuts = ReferenceCuts { test: "t".into(), low_cut: low.map(|x| r(x, 1)), high_cut: high.map(|x| r(x, 1)) };
        let (a, b) = (a.min(b), a.max(b));
        let ca = categorize(r(a, 1), r(lo, 1), r(lo + w, 1), Some(&cuts)).unwrap();
        let cb = categorize(r(b, 1), r(lo, 1), r(lo + w, 1), Some(&cuts)).unwrap();
        prop_assert!(category_of_order(ca) <= category_of_order(cb));
    }

    #[test]
    fn unit_conversion_keeps_category(
        v in -1000i64..1000, lo in -500i64..500, w in 0i64..500,
        low in proptest::option::of(-1500i64..1500), high in proptest::option::of(-1500i64..1500),
        kn in 1i64..1000, kd in 1i64..1000, shift in -100i64..100,
    ) {
        // Positive affine maps (unit factor, offset) preserve every comparison.
        let k = r(kn, kd);
        let f = |x: i64| r(x, 1) * k + r(shift, 1);
        let cuts = ReferenceCuts { test: "t".into(), low_cut: low.map(|x| r(x, 1)), high_cut: high.map(|x| r(x, 1)) };
        let scaled = ReferenceCuts { test: "t".into(), low_cut: low.map(f), high_cut: high.map(f) };
        let before = categorize(r(v, 1), r(lo, 1), r(lo + w, 1), Some(&cuts)).unwrap();
        let after = categorize(f(v), f(lo), f(lo + w), Some(&scaled)).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn scaling_a_whole_population_keeps_categories(rows in rows(200), k in 1i64..50) {
        let ds = build::<Rational64>(&rows);
        let scaled_rows: Vec<_> = rows.iter().map(|&(p, t, d, v, lo, w)| (p, t, d, v * k, lo * k, w * k)).collect();
        let scaled = build::<Rational64>(&scaled_rows);
        let a: Vec<_> = ds.results().iter().map(|x| ds.category_of(x)).collect();
        let b: Vec<_> = scaled.results().iter().map(|x| scaled.category_of(x)).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn cuts_never_tighten_the_range() {
    // A cut inside the normal range is widened to the range bound.
    let cuts = ReferenceCuts { test: "t".into(), low_cut: Some(13.0), high_cut: Some(14.0) };
    assert_eq!(categorize(15.5, 12.0, 15.0, Some(&cuts)).unwrap(), ResultCategory::VeryHigh);
    assert_eq!(categorize(11.9, 12.0, 15.0, Some(&cuts)).unwrap(), ResultCategory::VeryLow);
    assert_eq!(categorize(15.0, 12.0, 15.0, Some(&cuts)).unwrap(), ResultCategory::Normal);
}
