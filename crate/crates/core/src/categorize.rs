//! Population cut points and five-band classification.
//!
//! A result inside its record's reference range is Normal. Outside it, the
//! population median of all out-of-range values on that side (the cut)
//! separates High from VeryHigh, or Low from VeryLow. Because reference
//! ranges vary per record, the effective cut is clamped to never fall inside
//! the record's own range.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabResult, ResultCategory};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCuts<T = f64> {
    pub test: String,
    /// Median of population values strictly below their record's `ref_min`.
    pub low_cut: Option<T>,
    /// Median of population values strictly above their record's `ref_max`.
    pub high_cut: Option<T>,
}

impl<T> ReferenceCuts<T> {
    pub fn absent(test: impl Into<String>) -> Self {
        Self {
            test: test.into(),
            low_cut: None,
            high_cut: None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CategorizeError {
    #[error("value is not finite")]
    NonFinite,
    #[error("reference range is inverted or not finite")]
    BadReference,
}

/// Median of a sample; the mean of the two central values when the size is even.
pub fn median<T: Scalar>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("values are finite"));
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / T::two()
    })
}

/// Per-test cut points over a whole population of results.
pub fn compute_cuts<T: Scalar>(results: &[LabResult<T>]) -> BTreeMap<String, ReferenceCuts<T>> {
    let mut below: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    let mut above: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    for r in results {
        below.entry(&r.test).or_default();
        above.entry(&r.test).or_default();
        if r.value < r.ref_min {
            below.get_mut(r.test.as_str()).unwrap().push(r.value);
        } else if r.value > r.ref_max {
            above.get_mut(r.test.as_str()).unwrap().push(r.value);
        }
    }
    below
        .into_iter()
        .map(|(test, mut low)| {
            let mut high = above.remove(test).unwrap_or_default();
            let cuts = ReferenceCuts {
                test: test.to_owned(),
                low_cut: median(&mut low),
                high_cut: median(&mut high),
            };
            (test.to_owned(), cuts)
        })
        .collect()
}

/// Classifies one value against its record's range and the test's population cuts.
///
/// The Normal band is inclusive on both ends. A value equal to an effective
/// cut stays in the milder band; VeryHigh/VeryLow require going strictly past it.
pub fn categorize<T: Scalar>(
    value: T,
    ref_min: T,
    ref_max: T,
    cuts: Option<&ReferenceCuts<T>>,
) -> Result<ResultCategory, CategorizeError> {
    if !value.is_finite() {
        return Err(CategorizeError::NonFinite);
    }
    if !ref_min.is_finite() || !ref_max.is_finite() || ref_min > ref_max {
        return Err(CategorizeError::BadReference);
    }
    if value > ref_max {
        let cut = cuts
            .and_then(|c| c.high_cut)
            .map(|h| if h > ref_max { h } else { ref_max });
        return Ok(match cut {
            Some(h) if value > h => ResultCategory::VeryHigh,
            _ => ResultCategory::High,
        });
    }
    if value < ref_min {
        let cut = cuts
            .and_then(|c| c.low_cut)
            .map(|l| if l < ref_min { l } else { ref_min });
        return Ok(match cut {
            Some(l) if value < l => ResultCategory::VeryLow,
            _ => ResultCategory::Low,
        });
    }
    Ok(ResultCategory::Normal)
}

/// Categorizes a stored result with a cuts table keyed by test.
pub fn categorize_result<T: Scalar>(
    result: &LabResult<T>,
    cuts: &BTreeMap<String, ReferenceCuts<T>>,
) -> Result<ResultCategory, CategorizeError> {
    categorize(result.value, result.ref_min, result.ref_max, cuts.get(&result.test))
}

/// Writes `test|low_cut|high_cut` lines with a header; absent cuts are empty.
pub fn write_cuts<T: Scalar, W: Write>(
    mut out: W,
    cuts: &BTreeMap<String, ReferenceCuts<T>>,
    separator: char,
) -> io::Result<()> {
    writeln!(out, "test{separator}low_cut{separator}high_cut")?;
    for c in cuts.values() {
        let fmt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{}{separator}{}{separator}{}",
            c.test,
            fmt(c.low_cut),
            fmt(c.high_cut)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use num_rational::Rational64;
    use ResultCategory::*;

    fn cuts(low: Option<f64>, high: Option<f64>) -> ReferenceCuts<f64> {
        ReferenceCuts {
            test: "X".into(),
            low_cut: low,
            high_cut: high,
        }
    }

    fn result(test: &str, value: f64, lo: f64, hi: f64) -> LabResult<f64> {
        LabResult {
            patient_id: "p".into(),
            day: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            test: test.into(),
            value,
            unit: String::new(),
            ref_min: lo,
            ref_max: hi,
            institution: String::new(),
        }
    }

    /// Sort-and-index median, written independently of `median`.
    fn oracle_median(values: &[f64]) -> Option<f64> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(v[(n - 1) / 2]),
            _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
        }
    }

    #[test]
    fn even_subset_median_matches_oracle() {
        let high = [120.0, 100.0, 110.0, 102.0];
        let expected = oracle_median(&high).unwrap();
        assert_eq!(expected, 106.0);
        assert_eq!(median(&mut high.clone()), Some(expected));

        let population: Vec<_> = high.iter().map(|&v| result("X", v, 10.0, 90.0)).collect();
        let c = compute_cuts(&population);
        assert_eq!(c["X"].high_cut, Some(106.0));
        assert_eq!(c["X"].low_cut, None);
    }

    #[test]
    fn all_in_range_gives_absent_cuts() {
        let population = vec![result("Hb", 13.0, 12.0, 16.0), result("Hb", 15.5, 12.0, 16.0)];
        let c = compute_cuts(&population);
        assert_eq!(c["Hb"], ReferenceCuts::absent("Hb"));
    }

    #[test]
    fn subsets_use_each_records_own_range() {
        // 15 is above the first record's range but inside the second's.
        let population = vec![
            result("X", 15.0, 5.0, 10.0),
            result("X", 15.0, 5.0, 20.0),
            result("X", 3.0, 4.0, 20.0),
        ];
        let c = compute_cuts(&population);
        assert_eq!(c["X"].high_cut, Some(15.0));
        assert_eq!(c["X"].low_cut, Some(3.0));
    }

    #[test]
    fn mcv_example() {
        let c = cuts(None, Some(98.8));
        assert_eq!(categorize(99.0, 80.0, 96.0, Some(&c)), Ok(VeryHigh));
        assert_eq!(categorize(98.0, 80.0, 96.0, Some(&c)), Ok(High));
        assert_eq!(categorize(98.8, 80.0, 96.0, Some(&c)), Ok(High));
    }

    #[test]
    fn boundaries() {
        let c = cuts(Some(10.0), None);
        assert_eq!(categorize(16.0, 12.0, 16.0, Some(&c)), Ok(Normal));
        assert_eq!(categorize(12.0, 12.0, 16.0, Some(&c)), Ok(Normal));
        assert_eq!(categorize(11.0, 12.0, 16.0, Some(&c)), Ok(Low));
        assert_eq!(categorize(9.0, 12.0, 16.0, Some(&c)), Ok(VeryLow));
        assert_eq!(categorize(10.0, 12.0, 16.0, Some(&c)), Ok(Low));
        // No high cut: anything above is plain High.
        assert_eq!(categorize(1e9, 12.0, 16.0, Some(&c)), Ok(High));
        assert_eq!(categorize(1e9, 12.0, 16.0, None), Ok(High));
    }

    #[test]
    fn cut_inside_record_range_is_clamped() {
        // Population cut 98.8 but this record's ref_max is 100.
        let c = cuts(Some(5.0), Some(98.8));
        assert_eq!(categorize(99.5, 80.0, 100.0, Some(&c)), Ok(Normal));
        assert_eq!(categorize(100.5, 80.0, 100.0, Some(&c)), Ok(VeryHigh));
        assert_eq!(categorize(4.0, 3.0, 100.0, Some(&c)), Ok(Normal));
        assert_eq!(categorize(2.9, 3.0, 100.0, Some(&c)), Ok(VeryLow));
    }

    #[test]
    fn binary_tests_with_zero_range() {
        let c = cuts(None, Some(1.0));
        assert_eq!(categorize(1.0, 0.0, 0.0, Some(&c)), Ok(High));
        assert_eq!(categorize(0.0, 0.0, 0.0, Some(&c)), Ok(Normal));
    }

    #[test]
    fn errors() {
        assert_eq!(categorize(f64::NAN, 0.0, 1.0, None), Err(CategorizeError::NonFinite));
        assert_eq!(
            categorize(f64::INFINITY, 0.0, 1.0, None),
            Err(CategorizeError::NonFinite)
        );
        assert_eq!(categorize(0.5, 2.0, 1.0, None), Err(CategorizeError::BadReference));
    }

    #[test]
    fn exact_rational_median() {
        let r = |n, d| Rational64::new(n, d);
        let mut v = vec![r(1, 3), r(1, 2)];
        assert_eq!(median(&mut v), Some(r(5, 12)));
    }

    #[test]
    fn cuts_export() {
        let mut map = BTreeMap::new();
        map.insert("MCV".to_owned(), cuts(None, Some(98.8)));
        let mut out = Vec::new();
        write_cuts(&mut out, &map, '|').unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "test|low_cut|high_cut\nX||98.8\n");
    }
}
