//! Rate of change, relevant-change flags, per-test series and per-day summaries.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChangeObservation, RateOfChange, ResultCategory};
use crate::scalar::Scalar;
use crate::store::Dataset;

/// Default relevant-change threshold, in percent.
pub const DEFAULT_THRESHOLD_PERCENT: f64 = 100.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("patient {patient:?} has no results for test {test:?}")]
    UnknownTest { patient: String, test: String },
    #[error("threshold must be positive")]
    BadThreshold,
}

/// Inclusive calendar window; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayFilter {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl DayFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn between(from: NaiveDate, to: NaiveDate) -> Self {
        Self {
            from: Some(from),
            to: Some(to),
        }
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.from.is_none_or(|f| day >= f) && self.to.is_none_or(|t| day <= t)
    }
}

/// `((later / earlier) - 1) * 100`. From a zero baseline any nonzero value is
/// an infinite change signed like `later`; zero to zero is no change.
pub fn rate_of_change<T: Scalar>(earlier: T, later: T) -> RateOfChange<T> {
    if earlier.is_zero() {
        return if later.is_zero() {
            RateOfChange::Finite(T::zero())
        } else if later > T::zero() {
            RateOfChange::PosInfinite
        } else {
            RateOfChange::NegInfinite
        };
    }
    RateOfChange::Finite((later / earlier - T::one()) * T::hundred())
}

pub fn observe_change<T: Scalar>(earlier: T, later: T, threshold_percent: T) -> ChangeObservation<T> {
    let rc = rate_of_change(earlier, later);
    ChangeObservation {
        v_earlier: earlier,
        v_later: later,
        rc_percent: rc,
        relevant: rc.meets(threshold_percent),
        threshold_percent,
    }
}

/// Flags for an ordered value sequence: entry `i > 0` is set when the change
/// from value `i - 1` reaches the threshold. The first entry is never set.
pub fn flag_relevant_changes<T: Scalar>(values: &[T], threshold_percent: T) -> Vec<bool> {
    let mut flags = Vec::with_capacity(values.len());
    if !values.is_empty() {
        flags.push(false);
    }
    flags.extend(
        values
            .windows(2)
            .map(|w| rate_of_change(w[0], w[1]).meets(threshold_percent)),
    );
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint<T = f64> {
    pub day: NaiveDate,
    pub value: T,
    pub category: ResultCategory,
    pub relevant_change: bool,
    pub ref_min: T,
    pub ref_max: T,
}

/// Horizontal chart lines: reference range and population cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOverlay<T = f64> {
    pub ref_min: Option<T>,
    pub ref_max: Option<T>,
    pub low_cut: Option<T>,
    pub high_cut: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSeries<T = f64> {
    pub test: String,
    pub unit: String,
    pub points: Vec<SeriesPoint<T>>,
    pub overlay: ReferenceOverlay<T>,
    /// Days of flagged points, for vertical-line rendering.
    pub relevant_days: Vec<NaiveDate>,
}

fn check_threshold<T: Scalar>(threshold: T) -> Result<(), AnalyticsError> {
    if threshold > T::zero() && threshold.is_finite() {
        Ok(())
    } else {
        Err(AnalyticsError::BadThreshold)
    }
}

/// The patient's complete history for one test, categorized and flagged.
/// Flags always come from the full history so a narrower window cannot change them.
pub fn full_series<T: Scalar>(dataset: &Dataset<T>, patient_id: &str, test: &str, threshold: T) -> Vec<SeriesPoint<T>> {
    let results = dataset.test_results(patient_id, test);
    let values: Vec<T> = results.iter().map(|r| r.value).collect();
    let flags = flag_relevant_changes(&values, threshold);
    results
        .iter()
        .zip(flags)
        .map(|(r, relevant_change)| SeriesPoint {
            day: r.day,
            value: r.value,
            category: dataset.category_of(r),
            relevant_change,
            ref_min: r.ref_min,
            ref_max: r.ref_max,
        })
        .collect()
}

/// Points of one test inside `filter`, plus the chart overlay. The overlay's
/// reference lines come from the latest visible point, or the latest result
/// overall when the window is empty.
pub fn test_series<T: Scalar>(
    dataset: &Dataset<T>,
    patient_id: &str,
    test: &str,
    filter: DayFilter,
    threshold: T,
) -> Result<TestSeries<T>, AnalyticsError> {
    check_threshold(threshold)?;
    if dataset.patient(patient_id).is_none() {
        return Err(AnalyticsError::UnknownPatient(patient_id.to_owned()));
    }
    let all = dataset.test_results(patient_id, test);
    let latest = all.last().ok_or_else(|| AnalyticsError::UnknownTest {
        patient: patient_id.to_owned(),
        test: test.to_owned(),
    })?;
    let points: Vec<_> = full_series(dataset, patient_id, test, threshold)
        .into_iter()
        .filter(|p| filter.contains(p.day))
        .collect();
    let (ref_min, ref_max) = points
        .last()
        .map_or((latest.ref_min, latest.ref_max), |p| (p.ref_min, p.ref_max));
    let cuts = dataset.cuts().get(test);
    Ok(TestSeries {
        test: test.to_owned(),
        unit: latest.unit.clone(),
        relevant_days: points.iter().filter(|p| p.relevant_change).map(|p| p.day).collect(),
        points,
        overlay: ReferenceOverlay {
            ref_min: Some(ref_min),
            ref_max: Some(ref_max),
            low_cut: cuts.and_then(|c| c.low_cut),
            high_cut: cuts.and_then(|c| c.high_cut),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: NaiveDate,
    pub test_count: usize,
    pub normal_count: usize,
    pub abnormal_count: usize,
    pub relevant_change_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityPoint {
    pub day: NaiveDate,
    pub test_count: usize,
    pub relevant_change_count: usize,
}

impl From<&DaySummary> for ActivityPoint {
    fn from(s: &DaySummary) -> Self {
        Self {
            day: s.day,
            test_count: s.test_count,
            relevant_change_count: s.relevant_change_count,
        }
    }
}

/// Groups (day, category, flag) observations into ascending per-day summaries.
pub fn summarize_days<I>(observations: I) -> Vec<DaySummary>
where
    I: IntoIterator<Item = (NaiveDate, ResultCategory, bool)>,
{
    let mut by_day: BTreeMap<NaiveDate, DaySummary> = BTreeMap::new();
    for (day, category, relevant) in observations {
        let s = by_day.entry(day).or_insert(DaySummary {
            day,
            test_count: 0,
            normal_count: 0,
            abnormal_count: 0,
            relevant_change_count: 0,
        });
        s.test_count += 1;
        if category.is_abnormal() {
            s.abnormal_count += 1;
        } else {
            s.normal_count += 1;
        }
        if relevant {
            s.relevant_change_count += 1;
        }
    }
    by_day.into_values().collect()
}

fn patient_observations<T: Scalar>(
    dataset: &Dataset<T>,
    patient_id: &str,
    filter: DayFilter,
    threshold: T,
) -> Result<Vec<(NaiveDate, ResultCategory, bool)>, AnalyticsError> {
    check_threshold(threshold)?;
    if dataset.patient(patient_id).is_none() {
        return Err(AnalyticsError::UnknownPatient(patient_id.to_owned()));
    }
    let results = dataset.patient_results(patient_id);
    let mut out = Vec::with_capacity(results.len());
    // Results are sorted by (test, day): walk one test run at a time.
    let mut start = 0;
    while start < results.len() {
        let test = &results[start].test;
        let end = start + results[start..].partition_point(|r| &r.test == test);
        let values: Vec<T> = results[start..end].iter().map(|r| r.value).collect();
        let flags = flag_relevant_changes(&values, threshold);
        for (r, flag) in results[start..end].iter().zip(flags) {
            if filter.contains(r.day) {
                out.push((r.day, dataset.category_of(r), flag));
            }
        }
        start = end;
    }
    Ok(out)
}

/// One summary per day with at least one result inside `filter`.
pub fn day_summaries<T: Scalar>(
    dataset: &Dataset<T>,
    patient_id: &str,
    filter: DayFilter,
    threshold: T,
) -> Result<Vec<DaySummary>, AnalyticsError> {
    Ok(summarize_days(patient_observations(dataset, patient_id, filter, threshold)?))
}

pub fn activity_series<T: Scalar>(
    dataset: &Dataset<T>,
    patient_id: &str,
    filter: DayFilter,
    threshold: T,
) -> Result<Vec<ActivityPoint>, AnalyticsError> {
    Ok(day_summaries(dataset, patient_id, filter, threshold)?
        .iter()
        .map(ActivityPoint::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn rate_of_change_examples() {
        assert_eq!(rate_of_change(50.0, 100.0), RateOfChange::Finite(100.0));
        assert_eq!(rate_of_change(100.0, 100.0), RateOfChange::Finite(0.0));
        // Independent ratio: 40 / 100 = 0.4, a 60% decrease.
        let expected = (40.0_f64 / 100.0 - 1.0) * 100.0;
        assert_eq!(rate_of_change(100.0, 40.0), RateOfChange::Finite(expected));
        assert!((expected + 60.0).abs() < 1e-12);
        assert_eq!(
            rate_of_change(Rational64::from_integer(100), Rational64::from_integer(40)),
            RateOfChange::Finite(Rational64::from_integer(-60))
        );
    }

    #[test]
    fn zero_baselines() {
        assert_eq!(rate_of_change(0.0, 0.0), RateOfChange::Finite(0.0));
        assert_eq!(rate_of_change(0.0, 3.0), RateOfChange::PosInfinite);
        assert_eq!(rate_of_change(0.0, -3.0), RateOfChange::NegInfinite);
    }

    #[test]
    fn flag_examples() {
        assert_eq!(flag_relevant_changes(&[5.0, 10.0], 100.0), [false, true]);
        assert_eq!(flag_relevant_changes(&[100.0, 150.0], 100.0), [false, false]);
        assert_eq!(flag_relevant_changes(&[0.0, 0.0, 3.0], 100.0), [false, false, true]);
        assert_eq!(flag_relevant_changes(&[10.0, 0.0], 100.0), [false, true]);
        assert!(flag_relevant_changes::<f64>(&[], 100.0).is_empty());
        assert_eq!(flag_relevant_changes(&[7.0], 100.0), [false]);
    }

    #[test]
    fn change_observation() {
        let obs = observe_change(100.0, 160.0, 50.0);
        assert!(obs.relevant);
        assert_eq!(obs.rc_percent.finite().map(|x: f64| x.round()), Some(60.0));
        assert!(!observe_change(100.0, 160.0, 100.0).relevant);
    }

    #[test]
    fn filter_bounds_are_inclusive() {
        let d = |n| NaiveDate::from_ymd_opt(2020, 1, n).unwrap();
        let f = DayFilter::between(d(2), d(4));
        assert!(!f.contains(d(1)));
        assert!(f.contains(d(2)) && f.contains(d(4)));
        assert!(!f.contains(d(5)));
        assert!(DayFilter::all().contains(d(1)));
    }

    #[test]
    fn summaries_count_categories() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let s = summarize_days([
            (d, ResultCategory::Normal, false),
            (d, ResultCategory::High, true),
            (d, ResultCategory::VeryLow, false),
        ]);
        assert_eq!(
            s,
            [DaySummary {
                day: d,
                test_count: 3,
                normal_count: 1,
                abnormal_count: 2,
                relevant_change_count: 1
            }]
        );
        assert!(summarize_days(std::iter::empty()).is_empty());
    }
}
