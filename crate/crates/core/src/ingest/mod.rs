//! Raw export parsing, normalization to canonical tests and units, and
//! de-duplication to one result per patient, test and day.

mod rules;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DayStatus, LabResult, Patient, Sex};
use crate::scalar::Scalar;
use crate::store::Dataset;

pub use rules::{loose_key, name_key, unit_key, NormalizationRules, RulesError, TestRule};

/// Column count of a result file row.
pub const RESULT_COLUMNS: usize = 9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {source_name}: {source}")]
    Io {
        source_name: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Rules(#[from] RulesError),
}

/// One row of a result file, uninterpreted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub institution: String,
    pub patient_id: String,
    pub date_text: String,
    pub test_name_raw: String,
    pub analyte_raw: String,
    pub value_text: String,
    pub unit_text: String,
    pub ref_min_text: String,
    pub ref_max_text: String,
    /// 1-based line in the source file.
    pub line: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectionReason {
    MissingField,
    UnparseableValue,
    UnparseableDate,
    UnknownTest,
    UnknownUnit,
    MissingReference,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 6] = [
        RejectionReason::MissingField,
        RejectionReason::UnparseableValue,
        RejectionReason::UnparseableDate,
        RejectionReason::UnknownTest,
        RejectionReason::UnknownUnit,
        RejectionReason::MissingReference,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RejectionReason::MissingField => "MISSING_FIELD",
            RejectionReason::UnparseableValue => "UNPARSEABLE_VALUE",
            RejectionReason::UnparseableDate => "UNPARSEABLE_DATE",
            RejectionReason::UnknownTest => "UNKNOWN_TEST",
            RejectionReason::UnknownUnit => "UNKNOWN_UNIT",
            RejectionReason::MissingReference => "MISSING_REFERENCE",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub raw: RawRecord,
    pub reason: RejectionReason,
}

impl Rejection {
    fn new(raw: &RawRecord, reason: RejectionReason) -> Self {
        Self {
            raw: raw.clone(),
            reason,
        }
    }
}

fn read_rows<R: Read>(
    source: R,
    separator: u8,
    source_name: &str,
) -> Result<Vec<(u64, Vec<String>)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(separator)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                let fields = record
                    .iter()
                    .map(|f| String::from_utf8_lossy(f).into_owned())
                    .collect();
                rows.push((line, fields));
            }
            Err(e) => {
                let source = match e.into_kind() {
                    csv::ErrorKind::Io(err) => err,
                    other => io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}")),
                };
                return Err(IngestError::Io {
                    source_name: source_name.to_owned(),
                    source,
                });
            }
        }
    }
    Ok(rows)
}

/// Splits a delimited result file into raw records.
///
/// The first row is a header. Rows whose column count differs from
/// [`RESULT_COLUMNS`] are rejected as [`RejectionReason::MissingField`].
/// An empty `institution` column falls back to `institution`.
pub fn parse_raw_file<R: Read>(
    source: R,
    institution: &str,
    separator: u8,
) -> Result<(Vec<RawRecord>, Vec<Rejection>), IngestError> {
    let rows = read_rows(source, separator, institution)?;
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (line, fields) in rows {
        let get = |i: usize| fields.get(i).cloned().unwrap_or_default();
        let mut raw = RawRecord {
            patient_id: get(0),
            date_text: get(1),
            test_name_raw: get(2),
            analyte_raw: get(3),
            value_text: get(4),
            unit_text: get(5),
            ref_min_text: get(6),
            ref_max_text: get(7),
            institution: get(8),
            line,
        };
        if raw.institution.is_empty() {
            raw.institution = institution.to_owned();
        }
        if fields.len() == RESULT_COLUMNS {
            records.push(raw);
        } else {
            rejections.push(Rejection::new(&raw, RejectionReason::MissingField));
        }
    }
    Ok((records, rejections))
}

/// Parses a number written with either a decimal comma or a decimal point.
///
/// When both appear, the last one is the decimal mark and the other is a
/// digit grouping separator (`1.234,5` and `1,234.5` are both 1234.5).
pub fn parse_number<T: Scalar>(text: &str) -> Option<T> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let last_comma = compact.rfind(',');
    let last_dot = compact.rfind('.');
    let canonical = match (last_comma, last_dot) {
        (Some(c), Some(d)) => {
            let (decimal, grouping) = if c > d { (',', '.') } else { ('.', ',') };
            let stripped: String = compact.chars().filter(|&ch| ch != grouping).collect();
            if stripped.matches(decimal).count() != 1 {
                return None;
            }
            stripped.replace(decimal, ".")
        }
        (Some(_), None) => {
            if compact.matches(',').count() != 1 {
                return None;
            }
            compact.replace(',', ".")
        }
        _ => compact,
    };
    T::parse_decimal(&canonical)
}

/// Parses a day, ignoring any time-of-day suffix.
pub fn parse_day(text: &str, formats: &[String]) -> Option<NaiveDate> {
    let text = text.trim();
    let date_part = text.split_whitespace().next()?;
    let date_part = match date_part.split_once('T') {
        Some((d, _)) if d.contains('-') => d,
        _ => date_part,
    };
    formats
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(date_part, f).ok())
        .filter(|d| (1900..=2100).contains(&d.year()))
}

/// Resolves names, units and numbers of one raw record.
pub fn normalize_record<T: Scalar>(
    raw: &RawRecord,
    rules: &NormalizationRules,
) -> Result<LabResult<T>, Rejection> {
    use RejectionReason::*;
    let reject = |reason| Rejection::new(raw, reason);

    if raw.patient_id.trim().is_empty()
        || raw.date_text.trim().is_empty()
        || raw.value_text.trim().is_empty()
        || (raw.test_name_raw.trim().is_empty() && raw.analyte_raw.trim().is_empty())
    {
        return Err(reject(MissingField));
    }

    // The analyte is more specific than the test name (one panel, many analytes).
    let acronym = rules
        .resolve_test(&raw.analyte_raw)
        .or_else(|| rules.resolve_test(&raw.test_name_raw))
        .ok_or_else(|| reject(UnknownTest))?;
    let rule = rules.test(acronym).ok_or_else(|| reject(UnknownTest))?;

    let value: T = match rules.value_alias(&raw.value_text) {
        Some(alias) => T::parse_decimal(alias),
        None => parse_number(&raw.value_text),
    }
    .ok_or_else(|| reject(UnparseableValue))?;

    let factor: T = rule.factor(&raw.unit_text).ok_or_else(|| reject(UnknownUnit))?;

    let (ref_min, ref_max): (T, T) = match &rule.fixed_reference {
        Some((lo, hi)) => (
            T::parse_decimal(lo).ok_or_else(|| reject(MissingReference))?,
            T::parse_decimal(hi).ok_or_else(|| reject(MissingReference))?,
        ),
        None => {
            let lo: T = parse_number(&raw.ref_min_text).ok_or_else(|| reject(MissingReference))?;
            let hi: T = parse_number(&raw.ref_max_text).ok_or_else(|| reject(MissingReference))?;
            (lo * factor, hi * factor)
        }
    };
    if ref_min > ref_max {
        return Err(reject(MissingReference));
    }

    let day = parse_day(&raw.date_text, &rules.date_formats).ok_or_else(|| reject(UnparseableDate))?;

    let value = value * factor;
    if !value.is_finite() || !ref_min.is_finite() || !ref_max.is_finite() {
        return Err(reject(UnparseableValue));
    }

    Ok(LabResult {
        patient_id: raw.patient_id.trim().to_owned(),
        day,
        test: acronym.to_owned(),
        value,
        unit: rule.unit.clone(),
        ref_min,
        ref_max,
        institution: raw.institution.clone(),
    })
}

/// Renders a normalized result back as a raw record in canonical units.
/// Values without a finite decimal form (such as 1/3) are written rounded.
pub fn to_raw<T: Scalar>(result: &LabResult<T>) -> RawRecord {
    let text = |v: T| v.to_decimal_string().unwrap_or_else(|| v.to_f64_lossy().to_string());
    RawRecord {
        institution: result.institution.clone(),
        patient_id: result.patient_id.clone(),
        date_text: result.day.format("%Y-%m-%d").to_string(),
        test_name_raw: result.test.clone(),
        analyte_raw: String::new(),
        value_text: text(result.value),
        unit_text: result.unit.clone(),
        ref_min_text: text(result.ref_min),
        ref_max_text: text(result.ref_max),
        line: 0,
    }
}

/// A result dropped because a later record had the same patient, test and day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateEntry<T = f64> {
    pub dropped: LabResult<T>,
    /// Input position of the dropped record.
    pub dropped_index: usize,
    /// Input position of the record that was kept.
    pub kept_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateReport<T = f64> {
    pub entries: Vec<DuplicateEntry<T>>,
}

impl<T> Default for DuplicateReport<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T> DuplicateReport<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keeps one result per (patient, test, day), the last in input order, and
/// sorts by that key. Patients referenced by results get placeholder entries
/// and cuts are left empty.
pub fn clean_dataset<T: Scalar>(records: Vec<LabResult<T>>) -> (Dataset<T>, DuplicateReport<T>) {
    let mut indexed: Vec<(usize, LabResult<T>)> = records.into_iter().enumerate().collect();
    indexed.sort_by(|(ia, a), (ib, b)| a.key().cmp(&b.key()).then(ia.cmp(ib)));

    let mut kept: Vec<LabResult<T>> = Vec::with_capacity(indexed.len());
    let mut report = DuplicateReport::default();
    let mut iter = indexed.into_iter().peekable();
    while let Some((idx, result)) = iter.next() {
        let mut group = vec![(idx, result)];
        while let Some((_, next)) = iter.peek() {
            if next.key() != group[0].1.key() {
                break;
            }
            group.push(iter.next().unwrap());
        }
        let (kept_index, last) = group.pop().unwrap();
        for (dropped_index, dropped) in group {
            report.entries.push(DuplicateEntry {
                dropped,
                dropped_index,
                kept_index,
            });
        }
        kept.push(last);
    }

    let patients = kept
        .iter()
        .map(|r| r.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|id| (id.clone(), Patient::new(id)))
        .collect();
    let dataset = Dataset::from_parts(patients, kept, BTreeMap::new(), String::new())
        .expect("cleaned results satisfy dataset invariants");
    (dataset, report)
}

/// Writes the rejection report as delimited text with reason codes.
pub fn write_rejections<W: Write>(mut out: W, rejections: &[Rejection], separator: char) -> io::Result<()> {
    let s = separator;
    writeln!(
        out,
        "line{s}reason{s}institution{s}patient_id{s}date{s}test_name{s}analyte{s}value{s}unit{s}ref_min{s}ref_max"
    )?;
    for r in rejections {
        let raw = &r.raw;
        let clean = |v: &str| v.replace([separator, '\n', '\r'], " ");
        writeln!(
            out,
            "{}{s}{}{s}{}{s}{}{s}{}{s}{}{s}{}{s}{}{s}{}{s}{}{s}{}",
            raw.line,
            r.reason.code(),
            clean(&raw.institution),
            clean(&raw.patient_id),
            clean(&raw.date_text),
            clean(&raw.test_name_raw),
            clean(&raw.analyte_raw),
            clean(&raw.value_text),
            clean(&raw.unit_text),
            clean(&raw.ref_min_text),
            clean(&raw.ref_max_text),
        )?;
    }
    Ok(())
}

/// One row of the patient meta file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientMeta {
    pub patient_id: String,
    pub sex: Sex,
    pub age_or_birth_year: Option<AgeField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeField {
    Age(u32),
    BirthYear(i32),
}

/// A meta or outcome row that could not be used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideFileWarning {
    pub source: String,
    pub line: u64,
    pub message: String,
}

/// Parses `patient_id, sex, birth_year_or_age`. Values of 1800 or more are
/// birth years; anything else numeric is an age in years.
pub fn parse_patient_meta<R: Read>(
    source: R,
    source_name: &str,
    separator: u8,
    rules: &NormalizationRules,
) -> Result<(Vec<PatientMeta>, Vec<SideFileWarning>), IngestError> {
    let mut metas = Vec::new();
    let mut warnings = Vec::new();
    for (line, fields) in read_rows(source, separator, source_name)? {
        if fields.len() != 3 || fields[0].is_empty() {
            warnings.push(SideFileWarning {
                source: source_name.to_owned(),
                line,
                message: format!("expected 3 columns, found {}", fields.len()),
            });
            continue;
        }
        let age = fields[2].parse::<i64>().ok().and_then(|n| match n {
            1800..=2100 => Some(AgeField::BirthYear(n as i32)),
            0..=150 => Some(AgeField::Age(n as u32)),
            _ => None,
        });
        metas.push(PatientMeta {
            patient_id: fields[0].clone(),
            sex: rules.sex(&fields[1]).unwrap_or(Sex::Unknown),
            age_or_birth_year: age,
        });
    }
    Ok((metas, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeRow {
    pub patient_id: String,
    pub day: NaiveDate,
    pub status: DayStatus,
}

/// Parses `patient_id, date, status_text`; unmapped status text becomes `Unknown`.
pub fn parse_outcomes<R: Read>(
    source: R,
    source_name: &str,
    separator: u8,
    rules: &NormalizationRules,
) -> Result<(Vec<OutcomeRow>, Vec<SideFileWarning>), IngestError> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (line, fields) in read_rows(source, separator, source_name)? {
        let warn = |message: String| SideFileWarning {
            source: source_name.to_owned(),
            line,
            message,
        };
        if fields.len() != 3 || fields[0].is_empty() {
            warnings.push(warn(format!("expected 3 columns, found {}", fields.len())));
            continue;
        }
        let Some(day) = parse_day(&fields[1], &rules.date_formats) else {
            warnings.push(warn(format!("unparseable date {:?}", fields[1])));
            continue;
        };
        let status = rules.day_status(&fields[2]).unwrap_or_else(|| {
            warnings.push(warn(format!("unknown status {:?}", fields[2])));
            DayStatus::Unknown
        });
        rows.push(OutcomeRow {
            patient_id: fields[0].clone(),
            day,
            status,
        });
    }
    Ok((rows, warnings))
}

/// Merges meta and outcome rows into the dataset's patients. Later rows win.
/// Ages given as birth years are resolved against the year of the patient's
/// latest result or outcome day.
pub fn apply_side_files<T: Scalar>(dataset: &mut Dataset<T>, metas: &[PatientMeta], outcomes: &[OutcomeRow]) {
    let mut patients = dataset.patients().clone();
    for o in outcomes {
        patients
            .entry(o.patient_id.clone())
            .or_insert_with(|| Patient::new(o.patient_id.clone()))
            .day_status
            .insert(o.day, o.status);
    }
    for m in metas {
        let last_year = dataset
            .patient_results(&m.patient_id)
            .iter()
            .map(|r| r.day)
            .chain(
                patients
                    .get(&m.patient_id)
                    .into_iter()
                    .flat_map(|p| p.day_status.keys().copied()),
            )
            .max()
            .map(|d| d.year());
        let p = patients
            .entry(m.patient_id.clone())
            .or_insert_with(|| Patient::new(m.patient_id.clone()));
        p.sex = m.sex;
        p.age = match m.age_or_birth_year {
            Some(AgeField::Age(a)) => Some(a),
            Some(AgeField::BirthYear(y)) => last_year.and_then(|ly| u32::try_from(ly - y).ok()),
            None => None,
        };
    }
    dataset.replace_patients(patients);
}
