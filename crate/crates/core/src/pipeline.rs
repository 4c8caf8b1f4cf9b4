//! End-to-end ingest: parse -> normalize -> clean -> merge side files -> cuts.

use std::collections::BTreeMap;
use std::io::Read;
use std::thread;

use crate::ingest::{
    apply_side_files, clean_dataset, normalize_record, parse_outcomes, parse_patient_meta, parse_raw_file,
    DuplicateReport, IngestError, NormalizationRules, Rejection, RejectionReason, SideFileWarning,
};
use crate::scalar::Scalar;
use crate::store::Dataset;

/// A named input stream. For result files the name doubles as the fallback
/// institution.
pub struct InputSource {
    pub name: String,
    pub reader: Box<dyn Read + Send>,
}

impl InputSource {
    pub fn new(name: impl Into<String>, reader: impl Read + Send + 'static) -> Self {
        Self {
            name: name.into(),
            reader: Box::new(reader),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestReport<T = f64> {
    /// Data rows read from result files, malformed ones included.
    pub records_in: usize,
    pub kept: usize,
    pub rejections: Vec<Rejection>,
    pub duplicates: DuplicateReport<T>,
    pub warnings: Vec<SideFileWarning>,
}

impl<T> Default for IngestReport<T> {
    fn default() -> Self {
        Self {
            records_in: 0,
            kept: 0,
            rejections: Vec::new(),
            duplicates: DuplicateReport::default(),
            warnings: Vec::new(),
        }
    }
}

impl<T> IngestReport<T> {
    pub fn rejected(&self) -> usize {
        self.rejections.len()
    }

    pub fn rejected_by_reason(&self) -> BTreeMap<RejectionReason, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rejections {
            *counts.entry(r.reason).or_insert(0) += 1;
        }
        counts
    }

    /// `records_in == kept + rejected + duplicates`.
    pub fn is_conserved(&self) -> bool {
        self.records_in == self.kept + self.rejections.len() + self.duplicates.len()
    }
}

/// Runs the full ingest. Result files are parsed on one thread each; their
/// outputs are concatenated in input order, so the result never depends on
/// scheduling.
pub fn run_ingest<T: Scalar>(
    results: Vec<InputSource>,
    metas: Vec<InputSource>,
    outcomes: Vec<InputSource>,
    rules: &NormalizationRules,
    separator: u8,
) -> Result<(Dataset<T>, IngestReport<T>), IngestError> {
    type Parsed<T> = Result<(usize, Vec<crate::model::LabResult<T>>, Vec<Rejection>), IngestError>;
    let parsed: Vec<Parsed<T>> = thread::scope(|scope| {
        let handles: Vec<_> = results
            .into_iter()
            .map(|src| {
                scope.spawn(move || {
                    let (raws, mut rejections) = parse_raw_file(src.reader, &src.name, separator)?;
                    let rows = raws.len() + rejections.len();
                    let mut kept = Vec::with_capacity(raws.len());
                    for raw in &raws {
                        match normalize_record::<T>(raw, rules) {
                            Ok(r) => kept.push(r),
                            Err(rej) => rejections.push(rej),
                        }
                    }
                    rejections.sort_by_key(|r| r.raw.line);
                    Ok((rows, kept, rejections))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    });

    let mut report = IngestReport::<T>::default();
    let mut normalized = Vec::new();
    for p in parsed {
        let (rows, kept, rejections) = p?;
        report.records_in += rows;
        normalized.extend(kept);
        report.rejections.extend(rejections);
    }

    let (mut dataset, duplicates) = clean_dataset(normalized);
    report.duplicates = duplicates;
    report.kept = dataset.results().len();

    let mut all_metas = Vec::new();
    for src in metas {
        let (m, w) = parse_patient_meta(src.reader, &src.name, separator, rules)?;
        all_metas.extend(m);
        report.warnings.extend(w);
    }
    let mut all_outcomes = Vec::new();
    for src in outcomes {
        let (o, w) = parse_outcomes(src.reader, &src.name, separator, rules)?;
        all_outcomes.extend(o);
        report.warnings.extend(w);
    }
    apply_side_files(&mut dataset, &all_metas, &all_outcomes);
    dataset.recompute_cuts();
    dataset.set_rules_version(rules.version.clone());
    Ok((dataset, report))
}
