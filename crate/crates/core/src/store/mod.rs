//! The normalized dataset and its line-delimited JSON persistence.
//!
//! File layout, one JSON object per line:
//!
//! ```text
//! {"kind":"header","format":"clinpath-dataset","schema_version":"1.0","rules_version":"...","scalar":"f64","patients":2,"results":5,"cuts":3}
//! {"kind":"patient","patient_id":"p1","sex":"F","age":61,"day_status":{"2020-07-05":"Hospitalized"}}
//! {"kind":"result","patient_id":"p1","day":"2020-07-05","test":"Hb","value":10.6,...}
//! {"kind":"cuts","test":"Hb","low_cut":9.1,"high_cut":null}
//! ```
//!
//! Patients are ordered by id, results by (patient, test, day), cuts by test.
//! Cuts are stored rather than recomputed so categories stay stable across
//! partial re-ingests.

mod graph;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::categorize::{categorize_result, compute_cuts, ReferenceCuts};
use crate::model::{LabResult, Patient, ResultCategory};
use crate::scalar::Scalar;

pub use graph::{export_graph, write_graph, Graph, GraphEdge, GraphNode, NodeKind};
pub use synthetic::{generate_synthetic, FocusPatient, SyntheticError, SyntheticSpec};

pub const FORMAT_NAME: &str = "clinpath-dataset";
pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_MINOR: u32 = 0;

/// A broken dataset invariant, located by line (when read from a file) or by
/// result index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: Option<u64>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Corrupt { line: u64, message: String },
    #[error("unsupported schema version {found} (this build reads {SCHEMA_MAJOR}.x)")]
    Version { found: String },
    #[error("dataset stores {found} values, expected {expected}")]
    ScalarMismatch { found: String, expected: &'static str },
    #[error("dataset violates {} invariant(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    patients: BTreeMap<String, Patient>,
    results: Vec<LabResult<T>>,
    cuts: BTreeMap<String, ReferenceCuts<T>>,
    rules_version: String,
}

impl<T: Scalar> Default for Dataset<T> {
    fn default() -> Self {
        Self {
            patients: BTreeMap::new(),
            results: Vec::new(),
            cuts: BTreeMap::new(),
            rules_version: String::new(),
        }
    }
}

fn check_invariants<T: Scalar>(
    patients: &BTreeMap<String, Patient>,
    results: &[LabResult<T>],
    cuts: &BTreeMap<String, ReferenceCuts<T>>,
    result_lines: Option<&[u64]>,
) -> Vec<Violation> {
    let line_of = |i: usize| result_lines.map(|l| l[i]);
    let mut out = Vec::new();
    for (id, p) in patients {
        if id.is_empty() || *id != p.patient_id {
            out.push(Violation {
                line: None,
                message: format!("patient key {id:?} does not match patient_id {:?}", p.patient_id),
            });
        }
    }
    for (i, r) in results.iter().enumerate() {
        if !r.is_valid() {
            out.push(Violation {
                line: line_of(i),
                message: format!(
                    "result {} {} {} has empty ids, non-finite numbers or ref_min > ref_max",
                    r.patient_id, r.test, r.day
                ),
            });
        }
        if !patients.contains_key(&r.patient_id) {
            out.push(Violation {
                line: line_of(i),
                message: format!("result references unknown patient {:?}", r.patient_id),
            });
        }
        if i > 0 {
            let prev = results[i - 1].key();
            if prev == r.key() {
                out.push(Violation {
                    line: line_of(i),
                    message: format!("duplicate result for {} {} {}", r.patient_id, r.test, r.day),
                });
            } else if prev > r.key() {
                out.push(Violation {
                    line: line_of(i),
                    message: "results not sorted by (patient, test, day)".to_owned(),
                });
            }
        }
    }
    for (test, c) in cuts {
        if *test != c.test {
            out.push(Violation {
                line: None,
                message: format!("cuts key {test:?} does not match test {:?}", c.test),
            });
        }
        let bad = |v: Option<T>| v.is_some_and(|x| !x.is_finite());
        if bad(c.low_cut) || bad(c.high_cut) {
            out.push(Violation {
                line: None,
                message: format!("cuts for {test:?} are not finite"),
            });
        }
    }
    out
}

impl<T: Scalar> Dataset<T> {
    pub fn from_parts(
        patients: BTreeMap<String, Patient>,
        results: Vec<LabResult<T>>,
        cuts: BTreeMap<String, ReferenceCuts<T>>,
        rules_version: String,
    ) -> Result<Self, Vec<Violation>> {
        let violations = check_invariants(&patients, &results, &cuts, None);
        if !violations.is_empty() {
            return Err(violations);
        }
        Ok(Self {
            patients,
            results,
            cuts,
            rules_version,
        })
    }

    pub fn patients(&self) -> &BTreeMap<String, Patient> {
        &self.patients
    }

    pub fn patient(&self, id: &str) -> Option<&Patient> {
        self.patients.get(id)
    }

    pub fn results(&self) -> &[LabResult<T>] {
        &self.results
    }

    pub fn cuts(&self) -> &BTreeMap<String, ReferenceCuts<T>> {
        &self.cuts
    }

    pub fn rules_version(&self) -> &str {
        &self.rules_version
    }

    pub fn set_rules_version(&mut self, version: impl Into<String>) {
        self.rules_version = version.into();
    }

    /// Recomputes population cuts from the current results.
    pub fn recompute_cuts(&mut self) {
        self.cuts = compute_cuts(&self.results);
    }

    pub(crate) fn replace_patients(&mut self, patients: BTreeMap<String, Patient>) {
        debug_assert!(self.results.iter().all(|r| patients.contains_key(&r.patient_id)));
        self.patients = patients;
    }

    /// All results of one patient, sorted by (test, day).
    pub fn patient_results(&self, patient_id: &str) -> &[LabResult<T>] {
        let start = self.results.partition_point(|r| r.patient_id.as_str() < patient_id);
        let end = self.results.partition_point(|r| r.patient_id.as_str() <= patient_id);
        &self.results[start..end]
    }

    /// One patient's results for one test, sorted by day.
    pub fn test_results(&self, patient_id: &str, test: &str) -> &[LabResult<T>] {
        let rows = self.patient_results(patient_id);
        let start = rows.partition_point(|r| r.test.as_str() < test);
        let end = rows.partition_point(|r| r.test.as_str() <= test);
        &rows[start..end]
    }

    pub fn distinct_tests(&self) -> BTreeSet<&str> {
        self.results.iter().map(|r| r.test.as_str()).collect()
    }

    pub fn category_of(&self, result: &LabResult<T>) -> ResultCategory {
        categorize_result(result, &self.cuts).expect("stored results are valid")
    }

    /// Invariant violations of this dataset (empty for any constructed value).
    pub fn violations(&self) -> Vec<Violation> {
        check_invariants(&self.patients, &self.results, &self.cuts, None)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    schema_version: String,
    rules_version: String,
    scalar: String,
    patients: usize,
    results: usize,
    cuts: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line<T> {
    Header(Header),
    Patient(Patient),
    Result(LabResult<T>),
    Cuts(ReferenceCuts<T>),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LineRef<'a, T> {
    Header(&'a Header),
    Patient(&'a Patient),
    Result(&'a LabResult<T>),
    Cuts(&'a ReferenceCuts<T>),
}

fn write_line<W: Write, S: Serialize>(out: &mut W, value: &S) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(io::Error::other)?;
    out.write_all(b"\n")
}

/// Writes the dataset as line-delimited JSON.
pub fn save<T: Scalar, W: Write>(dataset: &Dataset<T>, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    let header = Header {
        format: FORMAT_NAME.to_owned(),
        schema_version: format!("{SCHEMA_MAJOR}.{SCHEMA_MINOR}"),
        rules_version: dataset.rules_version.clone(),
        scalar: T::TAG.to_owned(),
        patients: dataset.patients.len(),
        results: dataset.results.len(),
        cuts: dataset.cuts.len(),
    };
    write_line(&mut out, &LineRef::<T>::Header(&header))?;
    for p in dataset.patients.values() {
        write_line(&mut out, &LineRef::<T>::Patient(p))?;
    }
    for r in &dataset.results {
        write_line(&mut out, &LineRef::Result(r))?;
    }
    for c in dataset.cuts.values() {
        write_line(&mut out, &LineRef::Cuts(c))?;
    }
    out.flush()
}

/// Saves to `path` through a temporary sibling file, so a failed write never
/// leaves a partial dataset behind.
pub fn save_to_path<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> io::Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let result = fs::File::create(&tmp).and_then(|f| save(dataset, f));
    match result {
        Ok(()) => fs::rename(&tmp, path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Parsed file content before invariant checks.
struct RawDataset<T> {
    header: Header,
    patients: BTreeMap<String, Patient>,
    results: Vec<LabResult<T>>,
    result_lines: Vec<u64>,
    cuts: BTreeMap<String, ReferenceCuts<T>>,
}

fn read_raw<T: Scalar, R: Read>(source: R) -> Result<RawDataset<T>, StoreError> {
    let reader = BufReader::new(source);
    let mut header: Option<Header> = None;
    let mut patients = BTreeMap::new();
    let mut results = Vec::new();
    let mut result_lines = Vec::new();
    let mut cuts = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::Corrupt {
            line: line_no,
            message,
        };
        if header.is_none() {
            let h: Header = match serde_json::from_str::<serde_json::Value>(&line) {
                Ok(v) if v.get("kind").and_then(|k| k.as_str()) == Some("header") => {
                    serde_json::from_value(v).map_err(|e| corrupt(format!("bad header: {e}")))?
                }
                _ => return Err(corrupt("first line is not a dataset header".to_owned())),
            };
            if h.format != FORMAT_NAME {
                return Err(corrupt(format!("unknown format {:?}", h.format)));
            }
            let major = h.schema_version.split('.').next().and_then(|m| m.parse::<u32>().ok());
            if major != Some(SCHEMA_MAJOR) {
                return Err(StoreError::Version {
                    found: h.schema_version,
                });
            }
            if h.scalar != T::TAG {
                return Err(StoreError::ScalarMismatch {
                    found: h.scalar,
                    expected: T::TAG,
                });
            }
            header = Some(h);
            continue;
        }
        match serde_json::from_str::<Line<T>>(&line).map_err(|e| corrupt(e.to_string()))? {
            Line::Header(_) => return Err(corrupt("repeated header".to_owned())),
            Line::Patient(p) => {
                if patients.insert(p.patient_id.clone(), p).is_some() {
                    return Err(corrupt("repeated patient".to_owned()));
                }
            }
            Line::Result(r) => {
                results.push(r);
                result_lines.push(line_no);
            }
            Line::Cuts(c) => {
                if cuts.insert(c.test.clone(), c).is_some() {
                    return Err(corrupt("repeated cuts".to_owned()));
                }
            }
        }
    }
    let header = header.ok_or(StoreError::Corrupt {
        line: 1,
        message: "missing header".to_owned(),
    })?;
    if header.patients != patients.len() || header.results != results.len() || header.cuts != cuts.len() {
        return Err(StoreError::Corrupt {
            line: result_lines.last().copied().unwrap_or(1),
            message: format!(
                "header announces {}/{}/{} patients/results/cuts, file holds {}/{}/{} (truncated?)",
                header.patients,
                header.results,
                header.cuts,
                patients.len(),
                results.len(),
                cuts.len()
            ),
        });
    }
    Ok(RawDataset {
        header,
        patients,
        results,
        result_lines,
        cuts,
    })
}

/// Reads a dataset written by [`save`], checking version and invariants.
pub fn load<T: Scalar, R: Read>(source: R) -> Result<Dataset<T>, StoreError> {
    let raw = read_raw::<T, R>(source)?;
    let violations = check_invariants(&raw.patients, &raw.results, &raw.cuts, Some(&raw.result_lines));
    if !violations.is_empty() {
        return Err(StoreError::Invalid(violations));
    }
    Ok(Dataset {
        patients: raw.patients,
        results: raw.results,
        cuts: raw.cuts,
        rules_version: raw.header.rules_version,
    })
}

pub fn load_from_path<T: Scalar>(path: &Path) -> Result<Dataset<T>, StoreError> {
    load(fs::File::open(path)?)
}

/// The scalar tag from a dataset header, read without loading the rest.
pub fn scalar_tag<R: Read>(source: R) -> Result<String, StoreError> {
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: &str| StoreError::Corrupt {
            line: i as u64 + 1,
            message: message.to_owned(),
        };
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|_| corrupt("first line is not a dataset header"))?;
        if v.get("kind").and_then(|k| k.as_str()) != Some("header") {
            return Err(corrupt("first line is not a dataset header"));
        }
        return v
            .get("scalar")
            .and_then(|s| s.as_str())
            .map(str::to_owned)
            .ok_or_else(|| corrupt("header has no scalar tag"));
    }
    Err(StoreError::Corrupt {
        line: 1,
        message: "missing header".to_owned(),
    })
}

/// Every problem in a dataset file: a parse failure stops at the first bad
/// line, otherwise all invariant violations are listed.
pub fn validate<T: Scalar, R: Read>(source: R) -> Result<Vec<Violation>, StoreError> {
    let raw = read_raw::<T, R>(source)?;
    Ok(check_invariants(&raw.patients, &raw.results, &raw.cuts, Some(&raw.result_lines)))
}
