//! The clinical-path model: grouped test rows against day columns, with
//! categorized cells, day statuses and per-day summaries.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{flag_relevant_changes, summarize_days, ActivityPoint, DayFilter, DaySummary};
use crate::model::{DayStatus, GroupTable, ResultCategory, Sex};
use crate::scalar::Scalar;
use crate::store::Dataset;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimelineError {
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("date_from {from} is after date_to {to}")]
    InvertedWindow { from: NaiveDate, to: NaiveDate },
    #[error("threshold must be positive")]
    BadThreshold,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DayOrder {
    #[default]
    Ascending,
    Descending,
}

impl DayOrder {
    pub fn reversed(self) -> Self {
        match self {
            DayOrder::Ascending => DayOrder::Descending,
            DayOrder::Descending => DayOrder::Ascending,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathOptions {
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
    pub only_days_with_tests: bool,
    pub day_order: DayOrder,
    pub selected_tests: Option<BTreeSet<String>>,
    pub selected_groups: Option<BTreeSet<String>>,
}

impl PathOptions {
    pub fn validate(&self) -> Result<(), TimelineError> {
        match (self.date_from, self.date_to) {
            (Some(from), Some(to)) if from > to => Err(TimelineError::InvertedWindow { from, to }),
            _ => Ok(()),
        }
    }

    pub fn filter(&self) -> DayFilter {
        DayFilter {
            from: self.date_from,
            to: self.date_to,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientInfo {
    pub patient_id: String,
    pub sex: Sex,
    pub age: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub day: NaiveDate,
    pub status: DayStatus,
    /// The next column (in display order) is not the adjacent calendar day.
    pub gap_after: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub group: String,
    pub acronym: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell<T = f64> {
    pub row: usize,
    pub column: usize,
    pub value: T,
    pub category: ResultCategory,
    pub relevant_change: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalPath<T = f64> {
    pub patient: PatientInfo,
    pub day_order: DayOrder,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    /// Sparse cells sorted by (row, column).
    pub cells: Vec<Cell<T>>,
    /// Summaries of the visible cells, in column order.
    pub day_summaries: Vec<DaySummary>,
    pub activity: Vec<ActivityPoint>,
}

struct Entry<T> {
    test_index: usize,
    day: NaiveDate,
    value: T,
    category: ResultCategory,
    relevant: bool,
}

fn mark_gaps(columns: &mut [Column]) {
    let n = columns.len();
    for i in 0..n {
        columns[i].gap_after = i + 1 < n && (columns[i + 1].day - columns[i].day).num_days().abs() != 1;
    }
}

/// Builds the patient's clinical path.
///
/// Rows are the tests with a visible result, ordered by `groups` with
/// unlisted tests in a trailing alphabetical "Uncategorized" group. Columns
/// are either the days having a visible result or every calendar day between
/// the first and last of those. Relevant-change flags are computed on each
/// test's full history and then projected into the window.
pub fn build_clinical_path<T: Scalar>(
    dataset: &Dataset<T>,
    groups: &GroupTable,
    patient_id: &str,
    options: &PathOptions,
    threshold: T,
) -> Result<ClinicalPath<T>, TimelineError> {
    options.validate()?;
    if !(threshold > T::zero() && threshold.is_finite()) {
        return Err(TimelineError::BadThreshold);
    }
    let patient = dataset
        .patient(patient_id)
        .ok_or_else(|| TimelineError::UnknownPatient(patient_id.to_owned()))?;
    let filter = options.filter();

    let results = dataset.patient_results(patient_id);
    let mut tests: Vec<(&str, &str)> = Vec::new();
    let mut entries: Vec<Entry<T>> = Vec::new();
    let mut start = 0;
    while start < results.len() {
        let test = results[start].test.as_str();
        let end = start + results[start..].partition_point(|r| r.test == test);
        let run = &results[start..end];
        start = end;

        let selected = options.selected_tests.as_ref().is_none_or(|s| s.contains(test))
            && options
                .selected_groups
                .as_ref()
                .is_none_or(|s| s.contains(groups.group_name(test)));
        if !selected || !run.iter().any(|r| filter.contains(r.day)) {
            continue;
        }
        let values: Vec<T> = run.iter().map(|r| r.value).collect();
        let flags = flag_relevant_changes(&values, threshold);
        let test_index = tests.len();
        tests.push((test, run[0].unit.as_str()));
        for (r, relevant) in run.iter().zip(flags) {
            if filter.contains(r.day) {
                entries.push(Entry {
                    test_index,
                    day: r.day,
                    value: r.value,
                    category: dataset.category_of(r),
                    relevant,
                });
            }
        }
    }

    // Row order.
    let mut order: Vec<usize> = (0..tests.len()).collect();
    order.sort_by(|&a, &b| groups.sort_key(tests[a].0).cmp(&groups.sort_key(tests[b].0)));
    let mut row_of = vec![0; tests.len()];
    for (row, &ti) in order.iter().enumerate() {
        row_of[ti] = row;
    }
    let rows: Vec<Row> = order
        .iter()
        .map(|&ti| Row {
            group: groups.group_name(tests[ti].0).to_owned(),
            acronym: tests[ti].0.to_owned(),
            unit: tests[ti].1.to_owned(),
        })
        .collect();

    // Columns, ascending first.
    let days_with_tests: BTreeSet<NaiveDate> = entries.iter().map(|e| e.day).collect();
    let mut days: Vec<NaiveDate> = if options.only_days_with_tests {
        days_with_tests.iter().copied().collect()
    } else {
        match (days_with_tests.first(), days_with_tests.last()) {
            (Some(&first), Some(&last)) => first.iter_days().take_while(|d| *d <= last).collect(),
            _ => Vec::new(),
        }
    };
    if options.day_order == DayOrder::Descending {
        days.reverse();
    }
    let column_of: HashMap<NaiveDate, usize> = days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut columns: Vec<Column> = days
        .iter()
        .map(|&day| Column {
            day,
            status: patient.status_on(day),
            gap_after: false,
        })
        .collect();
    mark_gaps(&mut columns);

    let mut cells: Vec<Cell<T>> = entries
        .iter()
        .map(|e| Cell {
            row: row_of[e.test_index],
            column: column_of[&e.day],
            value: e.value,
            category: e.category,
            relevant_change: e.relevant,
        })
        .collect();
    cells.sort_by_key(|c| (c.row, c.column));

    let mut day_summaries = summarize_days(entries.iter().map(|e| (e.day, e.category, e.relevant)));
    if options.day_order == DayOrder::Descending {
        day_summaries.reverse();
    }
    let activity = day_summaries.iter().map(ActivityPoint::from).collect();

    Ok(ClinicalPath {
        patient: PatientInfo {
            patient_id: patient.patient_id.clone(),
            sex: patient.sex,
            age: patient.age,
        },
        day_order: options.day_order,
        columns,
        rows,
        cells,
        day_summaries,
        activity,
    })
}

/// Reverses the column order, re-keying cells and summaries to match.
pub fn toggle_day_order<T: Scalar>(mut path: ClinicalPath<T>) -> ClinicalPath<T> {
    let n = path.columns.len();
    path.columns.reverse();
    mark_gaps(&mut path.columns);
    for c in &mut path.cells {
        c.column = n - 1 - c.column;
    }
    path.cells.sort_by_key(|c| (c.row, c.column));
    path.day_summaries.reverse();
    path.activity.reverse();
    path.day_order = path.day_order.reversed();
    path
}

impl<T: Scalar> ClinicalPath<T> {
    pub fn cell(&self, row: usize, column: usize) -> Option<&Cell<T>> {
        self.cells
            .binary_search_by_key(&(row, column), |c| (c.row, c.column))
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Writes rows x columns of category codes, with a header of ISO dates.
    pub fn write_delimited<W: Write>(&self, mut out: W, separator: char) -> io::Result<()> {
        write!(out, "group{separator}test")?;
        for c in &self.columns {
            write!(out, "{separator}{}", c.day.format("%Y-%m-%d"))?;
        }
        writeln!(out)?;
        let mut cells = self.cells.iter().peekable();
        for (ri, row) in self.rows.iter().enumerate() {
            let mut codes = vec![""; self.columns.len()];
            while let Some(c) = cells.next_if(|c| c.row == ri) {
                codes[c.column] = c.category.code();
            }
            write!(out, "{}{separator}{}", row.group, row.acronym)?;
            for code in codes {
                write!(out, "{separator}{code}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
