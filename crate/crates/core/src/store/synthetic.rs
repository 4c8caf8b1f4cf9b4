//! Seeded synthetic datasets with controllable out-of-range fractions.
//!
//! All values and reference bounds are generated as scaled integers, so the
//! category of every generated result is the same for any scalar type.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::Dataset;
use crate::ingest::NormalizationRules;
use crate::model::{default_group_table, DayStatus, LabResult, Patient, Sex};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// One long-history patient, generated first as `P000000`.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusPatient {
    pub n_tests: usize,
    pub n_days: u32,
    /// Probability that a given test is measured on a given day.
    pub density: f64,
}

impl FocusPatient {
    /// 46 tests over 448 days at a density giving close to 10,000 results.
    pub fn large() -> Self {
        Self {
            n_tests: 46,
            n_days: 448,
            density: 0.485,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub tests: Vec<String>,
    pub day_span: u32,
    pub seed: u64,
    /// Fraction of results generated outside their reference range.
    pub out_of_range_fraction: f64,
    /// Per (test, day) measurement probability for ordinary patients.
    pub test_density: f64,
    pub start: NaiveDate,
    pub focus_patient: Option<FocusPatient>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 20,
            tests: default_test_list(),
            day_span: 60,
            seed: 0,
            out_of_range_fraction: 0.3,
            test_density: 0.1,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            focus_patient: None,
        }
    }
}

/// All canonical tests in display order, ungrouped numeric COVID assays last.
pub fn default_test_list() -> Vec<String> {
    let mut tests: Vec<String> = default_group_table()
        .groups()
        .iter()
        .flat_map(|g| g.acronyms.iter().cloned())
        .collect();
    tests.extend(
        ["covid_igg_num", "covid_iga_num", "covid_igm_num", "covid_soro_num"].map(String::from),
    );
    tests
}

struct Profile {
    lo: f64,
    hi: f64,
    decimals: u32,
    unit: &'static str,
    binary: bool,
}

fn profile(test: &str) -> Profile {
    let p = |lo, hi, decimals, unit| Profile {
        lo,
        hi,
        decimals,
        unit,
        binary: false,
    };
    match test {
        "RBC" => p(4.0, 5.4, 2, "x10^6/mm3"),
        "Hb" => p(12.0, 16.0, 1, "g/dL"),
        "HCT" => p(36.0, 46.0, 1, "%"),
        "MCV" => p(80.0, 96.0, 1, "fL"),
        "MCH" => p(27.0, 33.0, 1, "pg"),
        "MCHC" => p(32.0, 36.0, 1, "g/dL"),
        "RDW" => p(11.5, 14.5, 1, "%"),
        "WBC" => p(4000.0, 11000.0, 0, "/mm3"),
        "PLT" => p(150000.0, 450000.0, 0, "/mm3"),
        "MPV" => p(7.5, 11.5, 1, "fL"),
        "aPTT" => p(25.0, 35.0, 1, "s"),
        "PT" => p(11.0, 13.5, 1, "s"),
        "ALT" | "AST" => p(10.0, 40.0, 0, "U/L"),
        "ALP" => p(40.0, 130.0, 0, "U/L"),
        "GGT" => p(8.0, 61.0, 0, "U/L"),
        "TBIL" => p(0.3, 1.2, 2, "mg/dL"),
        "albumin" => p(3.5, 5.2, 1, "g/dL"),
        "creatinine" => p(0.6, 1.2, 2, "mg/dL"),
        "urea" => p(15.0, 45.0, 0, "mg/dL"),
        "eGFR" => p(90.0, 120.0, 0, "mL/min/1.73m2"),
        "Na+" => p(135.0, 145.0, 0, "mEq/L"),
        "K+" => p(3.5, 5.1, 1, "mEq/L"),
        "Cl-" => p(98.0, 107.0, 0, "mEq/L"),
        "pH" => p(7.32, 7.43, 2, ""),
        "CRP" => p(0.1, 1.0, 2, "mg/dL"),
        "D-D" => p(100.0, 500.0, 0, "ng/mL"),
        "glucose" => p(70.0, 99.0, 0, "mg/dL"),
        "ferritin" => p(15.0, 150.0, 0, "ug/L"),
        t if t.starts_with("covid_") && !t.ends_with("_num") => Profile {
            lo: 0.0,
            hi: 0.0,
            decimals: 0,
            unit: "",
            binary: true,
        },
        _ => p(10.0, 20.0, 1, ""),
    }
}

/// Per-institution multipliers on reference bounds, so ranges vary per record.
const INSTITUTIONS: [(&str, f64); 5] = [
    ("HF1", 1.0),
    ("HF2", 0.97),
    ("HF3", 1.03),
    ("HF4", 0.95),
    ("HF5", 1.05),
];

fn validate(spec: &SyntheticSpec) -> Result<(), SyntheticError> {
    let bad = |m: &str| Err(SyntheticError::InvalidSpec(m.to_owned()));
    if !(0.0..=1.0).contains(&spec.out_of_range_fraction) {
        return bad("out_of_range_fraction must be within [0, 1]");
    }
    if !(spec.test_density > 0.0 && spec.test_density <= 1.0) {
        return bad("test_density must be within (0, 1]");
    }
    if spec.day_span == 0 {
        return bad("day_span must be positive");
    }
    if spec.tests.is_empty() && (spec.n_patients > 0 || spec.focus_patient.is_some()) {
        return bad("at least one test is required");
    }
    if spec.tests.iter().collect::<BTreeSet<_>>().len() != spec.tests.len() {
        return bad("tests must be distinct");
    }
    if let Some(f) = &spec.focus_patient {
        if f.n_tests == 0 || f.n_tests > spec.tests.len() {
            return bad("focus patient n_tests must be within 1..=tests.len()");
        }
        if f.n_days == 0 || !(f.density > 0.0 && f.density <= 1.0) {
            return bad("focus patient needs n_days > 0 and density within (0, 1]");
        }
    }
    Ok(())
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    spec: &'a SyntheticSpec,
    rules: NormalizationRules,
}

impl Generator<'_> {
    /// Scaled-integer (value, ref_min, ref_max) for one record.
    fn measurement(&mut self, profile: &Profile, ref_scale: f64) -> (i64, i64, i64) {
        let oor = self.spec.out_of_range_fraction;
        if profile.binary {
            let positive = self.rng.random_bool(oor);
            return (positive as i64, 0, 0);
        }
        let scale = 10f64.powi(profile.decimals as i32);
        let lo = (profile.lo * ref_scale * scale).round() as i64;
        let hi = ((profile.hi * ref_scale * scale).round() as i64).max(lo + 1);
        let out = oor > 0.0 && self.rng.random_bool(oor);
        if !out {
            return (self.rng.random_range(lo..=hi), lo, hi);
        }
        let low_side = lo > 1 && self.rng.random_bool(0.5);
        let value = if low_side {
            let floor = ((lo as f64) * 0.3).floor() as i64;
            self.rng.random_range(floor.max(0)..lo)
        } else {
            let ceil = ((hi as f64) * 2.5).ceil() as i64;
            self.rng.random_range(hi + 1..=ceil.max(hi + 2))
        };
        (value, lo, hi)
    }

    fn status_walk(&mut self, days: &BTreeSet<NaiveDate>) -> BTreeMap<NaiveDate, DayStatus> {
        let mut status = DayStatus::OutpatientCare;
        let mut out = BTreeMap::new();
        for (i, &d) in days.iter().enumerate() {
            if i > 0 && self.rng.random_bool(0.15) {
                status = match self.rng.random_range(0..3) {
                    0 => DayStatus::Hospitalized,
                    1 => DayStatus::OutpatientCare,
                    _ => DayStatus::ExternalService,
                };
            }
            out.insert(d, status);
        }
        if let Some(&last) = days.iter().next_back() {
            if days.len() > 1 {
                let end = if self.rng.random_bool(0.1) {
                    DayStatus::Died
                } else {
                    DayStatus::Discharged
                };
                out.insert(last, end);
            }
        }
        out
    }

    fn patient<T: Scalar>(
        &mut self,
        id: String,
        tests: &[String],
        first_day: NaiveDate,
        n_days: u32,
        density: f64,
        results: &mut Vec<LabResult<T>>,
    ) -> Patient {
        let mut patient = Patient::new(id.clone());
        patient.sex = if self.rng.random_bool(0.5) { Sex::F } else { Sex::M };
        patient.age = Some(self.rng.random_range(18..=95));
        let institution = self.rng.random_range(0..INSTITUTIONS.len());
        let mut days_with_tests = BTreeSet::new();
        for offset in 0..n_days {
            let day = first_day + Days::new(offset as u64);
            for test in tests {
                if !self.rng.random_bool(density) {
                    continue;
                }
                // Mostly the patient's home institution, sometimes another one.
                let inst = if self.rng.random_bool(0.8) {
                    institution
                } else {
                    self.rng.random_range(0..INSTITUTIONS.len())
                };
                let (inst_name, ref_scale) = INSTITUTIONS[inst];
                let profile = profile(test);
                let (v, lo, hi) = self.measurement(&profile, ref_scale);
                let d = profile.decimals;
                // Canonical unit from the built-in rules, so exports re-ingest cleanly.
                let unit = self.rules.test(test).map_or(profile.unit, |r| r.unit.as_str());
                results.push(LabResult {
                    patient_id: id.clone(),
                    day,
                    test: test.clone(),
                    value: T::from_scaled(v, d).expect("generated value fits"),
                    unit: unit.to_owned(),
                    ref_min: T::from_scaled(lo, d).expect("generated bound fits"),
                    ref_max: T::from_scaled(hi, d).expect("generated bound fits"),
                    institution: inst_name.to_owned(),
                });
                days_with_tests.insert(day);
            }
        }
        patient.day_status = self.status_walk(&days_with_tests);
        patient
    }
}

/// Builds a reproducible dataset; the same spec always yields the same data.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>, SyntheticError> {
    validate(spec)?;
    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        spec,
        rules: NormalizationRules::default_rules(),
    };
    let mut patients = BTreeMap::new();
    let mut results = Vec::new();

    if let Some(focus) = &spec.focus_patient {
        let tests = &spec.tests[..focus.n_tests];
        let p = gen.patient("P000000".to_owned(), tests, spec.start, focus.n_days, focus.density, &mut results);
        patients.insert(p.patient_id.clone(), p);
    }
    for i in 0..spec.n_patients {
        let id = format!("P{:06}", i + 1);
        let n_tests = gen.rng.random_range(1..=spec.tests.len().min(12));
        let mut tests: Vec<String> = Vec::with_capacity(n_tests);
        while tests.len() < n_tests {
            let t = &spec.tests[gen.rng.random_range(0..spec.tests.len())];
            if !tests.contains(t) {
                tests.push(t.clone());
            }
        }
        let offset = gen.rng.random_range(0..spec.day_span);
        let first = spec.start + Days::new(offset as u64);
        let len = gen.rng.random_range(1..=spec.day_span - offset);
        let p = gen.patient(id, &tests, first, len, spec.test_density, &mut results);
        patients.insert(p.patient_id.clone(), p);
    }

    results.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut dataset = Dataset::from_parts(patients, results, BTreeMap::new(), "synthetic".to_owned())
        .map_err(|v| SyntheticError::InvalidSpec(v[0].message.clone()))?;
    dataset.recompute_cuts();
    Ok(dataset)
}
