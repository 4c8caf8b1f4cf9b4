#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use clinpath::ingest::clean_dataset;
use clinpath::{Dataset, LabResult, Rational64, ResultCategory, Scalar};
use proptest::prelude::*;

pub const TESTS: [&str; 5] = ["Hb", "HCT", "PLT", "Cr", "CRP"];

pub fn day(n: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + chrono::Duration::days(n as i64)
}

/// Exact value of a scalar, through its decimal rendering.
pub fn exact<T: Scalar>(v: T) -> Rational64 {
    let text = v.to_string();
    if let Some((n, d)) = text.split_once('/') {
        return Rational64::new(n.parse().unwrap(), d.parse().unwrap());
    }
    Rational64::parse_decimal(&text).unwrap_or_else(|| panic!("{text} is not a plain decimal"))
}

/// Reference classifier: builds the out-of-range subsets with exact
/// arithmetic, takes medians by index, and compares against the widened cut.
pub struct Oracle {
    low: BTreeMap<String, Option<Rational64>>,
    high: BTreeMap<String, Option<Rational64>>,
}

fn exact_median(mut v: Vec<Rational64>) -> Option<Rational64> {
    if v.is_empty() {
        return None;
    }
    v.sort();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * Rational64::new(1, 2)
    })
}

impl Oracle {
    pub fn new<T: Scalar>(results: &[LabResult<T>]) -> Self {
        let mut below: BTreeMap<String, Vec<Rational64>> = BTreeMap::new();
        let mut above: BTreeMap<String, Vec<Rational64>> = BTreeMap::new();
        for r in results {
            let (v, lo, hi) = (exact(r.value), exact(r.ref_min), exact(r.ref_max));
            below.entry(r.test.clone()).or_default();
            above.entry(r.test.clone()).or_default();
            if v < lo {
                below.get_mut(&r.test).unwrap().push(v);
            }
            if v > hi {
                above.get_mut(&r.test).unwrap().push(v);
            }
        }
        Self {
            low: below.into_iter().map(|(k, v)| (k, exact_median(v))).collect(),
            high: above.into_iter().map(|(k, v)| (k, exact_median(v))).collect(),
        }
    }

    pub fn high_cut(&self, test: &str) -> Option<Rational64> {
        self.high.get(test).copied().flatten()
    }

    pub fn low_cut(&self, test: &str) -> Option<Rational64> {
        self.low.get(test).copied().flatten()
    }

    pub fn classify<T: Scalar>(&self, r: &LabResult<T>) -> ResultCategory {
        let (v, lo, hi) = (exact(r.value), exact(r.ref_min), exact(r.ref_max));
        if lo <= v && v <= hi {
            return ResultCategory::Normal;
        }
        if v > hi {
            let very = self.high_cut(&r.test).is_some_and(|c| v > c.max(hi));
            return if very { ResultCategory::VeryHigh } else { ResultCategory::High };
        }
        let very = self.low_cut(&r.test).is_some_and(|c| v < c.min(lo));
        if very {
            ResultCategory::VeryLow
        } else {
            ResultCategory::Low
        }
    }
}

/// (patient, test, day, value/10, ref_min/10, width/10)
pub type Row = (u8, u8, u32, i64, i64, i64);

pub fn rows(max: usize) -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec((0u8..4, 0u8..5, 0u32..40, 0i64..4000, 500i64..1500, 0i64..1000), 0..max)
}

pub fn build<T: Scalar>(rows: &[Row]) -> Dataset<T> {
    let results = rows
        .iter()
        .map(|&(p, t, d, v, lo, w)| LabResult {
            patient_id: format!("p{p}"),
            day: day(d),
            test: TESTS[t as usize].to_owned(),
            value: T::from_scaled(v, 1).unwrap(),
            unit: "u".into(),
            ref_min: T::from_scaled(lo, 1).unwrap(),
            ref_max: T::from_scaled(lo + w, 1).unwrap(),
            institution: "HF1".into(),
        })
        .collect();
    let (mut ds, _) = clean_dataset(results);
    ds.recompute_cuts();
    ds
}
