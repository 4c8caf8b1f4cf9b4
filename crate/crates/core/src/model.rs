//! Shared domain types and the canonical test-group ordering.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Name of the trailing group that collects tests absent from the group table.
pub const UNCATEGORIZED: &str = "Uncategorized";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Sex {
    F,
    M,
    #[default]
    Unknown,
}

/// Care context of a patient on one calendar day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum DayStatus {
    Hospitalized,
    ExternalService,
    OutpatientCare,
    Discharged,
    Died,
    #[default]
    Unknown,
}

impl DayStatus {
    pub const ALL: [DayStatus; 6] = [
        DayStatus::Hospitalized,
        DayStatus::ExternalService,
        DayStatus::OutpatientCare,
        DayStatus::Discharged,
        DayStatus::Died,
        DayStatus::Unknown,
    ];

    pub fn default_color(self) -> &'static str {
        match self {
            DayStatus::Hospitalized => "#d62728",
            DayStatus::ExternalService => "#2ca02c",
            DayStatus::OutpatientCare => "#1f77b4",
            DayStatus::Discharged => "#f2c80f",
            DayStatus::Died => "#ff7f0e",
            DayStatus::Unknown => "#9e9e9e",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    #[serde(default)]
    pub sex: Sex,
    /// Age in whole years, `None` when unknown.
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub day_status: BTreeMap<NaiveDate, DayStatus>,
}

impl Patient {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            sex: Sex::Unknown,
            age: None,
            day_status: BTreeMap::new(),
        }
    }

    pub fn status_on(&self, day: NaiveDate) -> DayStatus {
        self.day_status.get(&day).copied().unwrap_or_default()
    }
}

/// One normalized measurement: a single test for a patient on a calendar day,
/// in canonical units, carrying its own reference range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabResult<T = f64> {
    pub patient_id: String,
    pub day: NaiveDate,
    pub test: String,
    pub value: T,
    pub unit: String,
    pub ref_min: T,
    pub ref_max: T,
    pub institution: String,
}

impl<T: Scalar> LabResult<T> {
    /// Key under which a dataset keeps at most one result.
    pub fn key(&self) -> (&str, &str, NaiveDate) {
        (&self.patient_id, &self.test, self.day)
    }

    pub fn is_valid(&self) -> bool {
        !self.patient_id.is_empty()
            && !self.test.is_empty()
            && self.value.is_finite()
            && self.ref_min.is_finite()
            && self.ref_max.is_finite()
            && self.ref_min <= self.ref_max
    }
}

/// Five abnormality bands, ordered from very low to very high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResultCategory {
    VeryLow,
    Low,
    Normal,
    High,
    VeryHigh,
}

impl ResultCategory {
    pub const ALL: [ResultCategory; 5] = [
        ResultCategory::VeryLow,
        ResultCategory::Low,
        ResultCategory::Normal,
        ResultCategory::High,
        ResultCategory::VeryHigh,
    ];

    /// Symbol identifier the UI draws for this band.
    pub fn symbol(self) -> &'static str {
        match self {
            ResultCategory::VeryLow => "double-down",
            ResultCategory::Low => "down",
            ResultCategory::Normal => "neutral",
            ResultCategory::High => "up",
            ResultCategory::VeryHigh => "double-up",
        }
    }

    /// Short code used in delimited exports.
    pub fn code(self) -> &'static str {
        match self {
            ResultCategory::VeryLow => "VL",
            ResultCategory::Low => "L",
            ResultCategory::Normal => "N",
            ResultCategory::High => "H",
            ResultCategory::VeryHigh => "VH",
        }
    }

    /// Cold-to-warm palette.
    pub fn default_color(self) -> &'static str {
        match self {
            ResultCategory::VeryLow => "#2166ac",
            ResultCategory::Low => "#67a9cf",
            ResultCategory::Normal => "#4d9221",
            ResultCategory::High => "#ef8a62",
            ResultCategory::VeryHigh => "#b2182b",
        }
    }

    pub fn is_abnormal(self) -> bool {
        self != ResultCategory::Normal
    }
}

impl fmt::Display for ResultCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Position of a category in the total order, `VeryLow -> 0` through `VeryHigh -> 4`.
pub fn category_of_order(category: ResultCategory) -> u8 {
    category as u8
}

pub fn category_from_order(order: u8) -> Option<ResultCategory> {
    ResultCategory::ALL.get(order as usize).copied()
}

/// Percentage change between two consecutive results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateOfChange<T> {
    Finite(T),
    /// Change from a zero baseline to a positive value.
    PosInfinite,
    /// Change from a zero baseline to a negative value.
    NegInfinite,
}

impl<T: Scalar> RateOfChange<T> {
    pub fn is_infinite(self) -> bool {
        !matches!(self, RateOfChange::Finite(_))
    }

    /// `|rc| >= threshold`; infinite changes always qualify.
    pub fn meets(self, threshold_percent: T) -> bool {
        match self {
            RateOfChange::Finite(rc) => rc.abs() >= threshold_percent,
            _ => true,
        }
    }

    pub fn finite(self) -> Option<T> {
        match self {
            RateOfChange::Finite(rc) => Some(rc),
            _ => None,
        }
    }
}

/// A consecutive pair of results for one test and whether their change is relevant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeObservation<T = f64> {
    pub v_earlier: T,
    pub v_later: T,
    pub rc_percent: RateOfChange<T>,
    pub relevant: bool,
    pub threshold_percent: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestGroup {
    pub name: String,
    pub rank: u32,
    pub acronyms: Vec<String>,
}

/// Where a test sits in the vertical ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupPosition<'a> {
    pub group: &'a str,
    pub group_index: usize,
    pub row: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupTableError {
    #[error("acronym {acronym:?} listed in both {first:?} and {second:?}")]
    DuplicateAcronym {
        acronym: String,
        first: String,
        second: String,
    },
    #[error("rank {0} used by more than one group")]
    DuplicateRank(u32),
    #[error("group name {0:?} is reserved or repeated")]
    BadGroupName(String),
    #[error("invalid group table file: {0}")]
    Parse(String),
}

/// Ordered groups of tests, general-first to specialty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupTable {
    groups: Vec<TestGroup>,
    index: HashMap<String, (usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct GroupTableFile {
    #[serde(rename = "group", default)]
    groups: Vec<TestGroup>,
}

impl GroupTable {
    /// Validates uniqueness and sorts groups by rank.
    pub fn new(mut groups: Vec<TestGroup>) -> Result<Self, GroupTableError> {
        groups.sort_by_key(|g| g.rank);
        for pair in groups.windows(2) {
            if pair[0].rank == pair[1].rank {
                return Err(GroupTableError::DuplicateRank(pair[0].rank));
            }
        }
        let mut names = std::collections::HashSet::new();
        let mut index: HashMap<String, (usize, usize)> = HashMap::new();
        for (gi, group) in groups.iter().enumerate() {
            if group.name.trim().is_empty() || group.name == UNCATEGORIZED || !names.insert(&group.name) {
                return Err(GroupTableError::BadGroupName(group.name.clone()));
            }
            for (row, acronym) in group.acronyms.iter().enumerate() {
                if let Some(&(other, _)) = index.get(acronym) {
                    return Err(GroupTableError::DuplicateAcronym {
                        acronym: acronym.clone(),
                        first: groups[other].name.clone(),
                        second: group.name.clone(),
                    });
                }
                index.insert(acronym.clone(), (gi, row));
            }
        }
        Ok(Self { groups, index })
    }

    pub fn groups(&self) -> &[TestGroup] {
        &self.groups
    }

    pub fn lookup(&self, acronym: &str) -> Option<GroupPosition<'_>> {
        self.index.get(acronym).map(|&(gi, row)| GroupPosition {
            group: &self.groups[gi].name,
            group_index: gi,
            row,
        })
    }

    pub fn group_name<'a>(&'a self, acronym: &str) -> &'a str {
        self.lookup(acronym).map_or(UNCATEGORIZED, |p| p.group)
    }

    /// Total sort key for rows: group position, row within group, then name
    /// (uncategorized tests sort last, alphabetically).
    pub fn sort_key<'a>(&self, acronym: &'a str) -> (usize, usize, &'a str) {
        match self.index.get(acronym) {
            Some(&(gi, row)) => (gi, row, acronym),
            None => (usize::MAX, 0, acronym),
        }
    }

    /// Parses a TOML group list:
    ///
    /// ```toml
    /// [[group]]
    /// name = "Red Series Hemogram"
    /// rank = 0
    /// acronyms = ["RBC", "Hb", "HCT"]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, GroupTableError> {
        let file: GroupTableFile =
            toml::from_str(text).map_err(|e| GroupTableError::Parse(e.to_string()))?;
        Self::new(file.groups)
    }

    pub fn to_toml_string(&self) -> String {
        let file = GroupTableFile {
            groups: self.groups.clone(),
        };
        toml::to_string(&file).expect("group table serializes")
    }
}

const DEFAULT_GROUPS: &[(&str, &[&str])] = &[
    (
        "Red Series Hemogram",
        &["RBC", "Hb", "HCT", "MCV", "MCH", "MCHC", "RDW"],
    ),
    (
        "White Series Hemogram",
        &[
            "WBC",
            "basophil#",
            "basophil%",
            "eos#",
            "eos%",
            "lymphocyte#",
            "lymphocyte%",
            "monocyte#",
            "monocyte%",
            "neutrophil#",
            "neutrophil%",
        ],
    ),
    ("Hemogram - Platelets", &["PLT"]),
    ("Medium Platelet Volume", &["MPV"]),
    (
        "Liver Function / Coagulation Factors",
        &[
            "aPTT", "AT", "PT", "TT", "ALP", "ALT", "AST", "BILC", "BILU", "PT%", "D-D",
            "fibrinogen", "GGT", "TBIL", "albumin",
        ],
    ),
    ("Liver Function", &["eGFR", "creatinine", "urea"]),
    (
        "Ion Evaluation",
        &["Ca", "Ca++", "Ca++F", "Cl-", "HCO3-", "K+", "Na+", "pH"],
    ),
    ("Cardio Evaluation", &["cTnI", "hs-cTnT", "NT-proBNP"]),
    (
        "Inflammatory Evaluation",
        &["CRP", "PCT", "ESR", "globulin", "IL-6", "IL-10", "TNF", "LDH"],
    ),
    ("Endocrine Evaluation", &["glucose", "HbA1c", "TSH", "PTH"]),
    ("General Evaluation", &["cholesterol", "ferritin", "protein"]),
    (
        "COVID",
        &["covid_pcr", "covid_iga", "covid_soro", "covid_igg", "covid_igm"],
    ),
];

/// The built-in ordering, general hemogram first through COVID last.
///
/// Spelling variants from the source tables are canonicalized: `VCM` is
/// `MCV`, `cTnT` is `hs-cTnT`, `TNFa` is `TNF`.
pub fn default_group_table() -> GroupTable {
    let groups = DEFAULT_GROUPS
        .iter()
        .enumerate()
        .map(|(rank, (name, acronyms))| TestGroup {
            name: (*name).to_owned(),
            rank: rank as u32,
            acronyms: acronyms.iter().map(|a| (*a).to_owned()).collect(),
        })
        .collect();
    GroupTable::new(groups).expect("built-in group table is consistent")
}
