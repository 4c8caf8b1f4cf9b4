//! Normalization rules: test synonyms, unit factors, date formats and
//! textual value mappings, loaded from a versioned TOML file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::model::{DayStatus, Sex};
use crate::scalar::Scalar;

const DEFAULT_RULES: &str = include_str!("../../rules/default_rules.toml");

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("cannot read rules file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid rules file: {0}")]
    Parse(String),
    #[error("test {acronym:?}: unit factor {factor:?} for {unit:?} must be a positive decimal")]
    BadFactor {
        acronym: String,
        unit: String,
        factor: String,
    },
    #[error("name {name:?} maps to both {first:?} and {second:?}")]
    ConflictingSynonym {
        name: String,
        first: String,
        second: String,
    },
    #[error("test {0:?} defined twice")]
    DuplicateTest(String),
    #[error("fixed reference for {0:?} is not a valid range")]
    BadReference(String),
}

/// Lookup key for names: lowercase, accents and whitespace removed,
/// punctuation kept (`Ca` and `Ca++` are different tests).
pub fn name_key(raw: &str) -> String {
    raw.nfd()
        .filter(|c| !is_combining_mark(*c) && !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Looser key with punctuation removed too; only used when unambiguous.
pub fn loose_key(raw: &str) -> String {
    name_key(raw).chars().filter(|c| c.is_alphanumeric()).collect()
}

pub fn unit_key(raw: &str) -> String {
    raw.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            'µ' | 'μ' => 'u',
            '³' => '3',
            '²' => '2',
            other => other,
        })
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_combining_mark(c: char) -> bool {
    matches!(c as u32, 0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DecimalValue {
    Number(f64),
    Text(String),
}

impl DecimalValue {
    fn into_text(self) -> String {
        match self {
            DecimalValue::Number(v) => v.to_string(),
            DecimalValue::Text(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestRuleFile {
    acronym: String,
    #[serde(default)]
    unit: String,
    #[serde(default)]
    synonyms: Vec<String>,
    #[serde(default)]
    units: BTreeMap<String, DecimalValue>,
    #[serde(default)]
    reference: Option<[DecimalValue; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    version: String,
    #[serde(default)]
    date_formats: Vec<String>,
    #[serde(default)]
    status: BTreeMap<String, DayStatus>,
    #[serde(default)]
    sex: BTreeMap<String, Sex>,
    #[serde(default)]
    values: BTreeMap<String, DecimalValue>,
    #[serde(default, rename = "test")]
    tests: Vec<TestRuleFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRule {
    pub acronym: String,
    pub unit: String,
    /// Normalized raw unit -> decimal factor text converting into `unit`.
    pub unit_factors: HashMap<String, String>,
    /// Range applied to every record of this test (binary detection tests).
    pub fixed_reference: Option<(String, String)>,
}

impl TestRule {
    /// Factor for a raw unit string; the canonical unit always has factor 1.
    pub fn factor<T: Scalar>(&self, raw_unit: &str) -> Option<T> {
        let key = unit_key(raw_unit);
        if key == unit_key(&self.unit) {
            return Some(T::one());
        }
        self.unit_factors.get(&key).and_then(|f| T::parse_decimal(f))
    }
}

#[derive(Debug, Clone)]
pub struct NormalizationRules {
    pub version: String,
    pub date_formats: Vec<String>,
    tests: BTreeMap<String, TestRule>,
    exact: HashMap<String, String>,
    loose: HashMap<String, Option<String>>,
    status: HashMap<String, DayStatus>,
    sex: HashMap<String, Sex>,
    values: HashMap<String, String>,
}

impl NormalizationRules {
    /// The bundled rules covering the 73 canonical tests.
    pub fn default_rules() -> Self {
        Self::from_toml_str(DEFAULT_RULES).expect("bundled rules are valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path).map_err(|source| RulesError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RulesError> {
        let file: RulesFile = toml::from_str(text).map_err(|e| RulesError::Parse(e.to_string()))?;
        let mut rules = NormalizationRules {
            version: file.version,
            date_formats: if file.date_formats.is_empty() {
                vec!["%d/%m/%Y".into(), "%Y-%m-%d".into()]
            } else {
                file.date_formats
            },
            tests: BTreeMap::new(),
            exact: HashMap::new(),
            loose: HashMap::new(),
            status: file.status.into_iter().map(|(k, v)| (name_key(&k), v)).collect(),
            sex: file.sex.into_iter().map(|(k, v)| (name_key(&k), v)).collect(),
            values: HashMap::new(),
        };
        for (text, value) in file.values {
            let value = value.into_text();
            if f64::parse_decimal(&value).is_none() {
                return Err(RulesError::Parse(format!("value alias {text:?} is not a decimal")));
            }
            rules.values.insert(name_key(&text), value);
        }
        for t in file.tests {
            let mut unit_factors = HashMap::new();
            for (unit, factor) in t.units {
                let factor = factor.into_text();
                match f64::parse_decimal(&factor) {
                    Some(f) if f > 0.0 => {
                        unit_factors.insert(unit_key(&unit), factor);
                    }
                    _ => {
                        return Err(RulesError::BadFactor {
                            acronym: t.acronym,
                            unit,
                            factor,
                        })
                    }
                }
            }
            let fixed_reference = match t.reference {
                Some([lo, hi]) => {
                    let (lo, hi) = (lo.into_text(), hi.into_text());
                    match (f64::parse_decimal(&lo), f64::parse_decimal(&hi)) {
                        (Some(a), Some(b)) if a <= b => Some((lo, hi)),
                        _ => return Err(RulesError::BadReference(t.acronym)),
                    }
                }
                None => None,
            };
            let acronym = t.acronym.clone();
            rules.add_name(&acronym, &acronym)?;
            for syn in &t.synonyms {
                rules.add_name(syn, &acronym)?;
            }
            let rule = TestRule {
                acronym: acronym.clone(),
                unit: t.unit,
                unit_factors,
                fixed_reference,
            };
            if rules.tests.insert(acronym.clone(), rule).is_some() {
                return Err(RulesError::DuplicateTest(acronym));
            }
        }
        Ok(rules)
    }

    fn add_name(&mut self, name: &str, acronym: &str) -> Result<(), RulesError> {
        let key = name_key(name);
        if let Some(existing) = self.exact.get(&key) {
            if existing != acronym {
                return Err(RulesError::ConflictingSynonym {
                    name: name.to_owned(),
                    first: existing.clone(),
                    second: acronym.to_owned(),
                });
            }
        }
        self.exact.insert(key, acronym.to_owned());
        let loose = loose_key(name);
        if !loose.is_empty() {
            self.loose
                .entry(loose)
                .and_modify(|e| {
                    if e.as_deref() != Some(acronym) {
                        *e = None;
                    }
                })
                .or_insert_with(|| Some(acronym.to_owned()));
        }
        Ok(())
    }

    /// Resolves a raw test or analyte name to its canonical acronym.
    pub fn resolve_test(&self, raw: &str) -> Option<&str> {
        let key = name_key(raw);
        if key.is_empty() {
            return None;
        }
        if let Some(a) = self.exact.get(&key) {
            return Some(a);
        }
        self.loose.get(&loose_key(raw)).and_then(|a| a.as_deref())
    }

    pub fn test(&self, acronym: &str) -> Option<&TestRule> {
        self.tests.get(acronym)
    }

    pub fn tests(&self) -> impl Iterator<Item = &TestRule> {
        self.tests.values()
    }

    /// Decimal text for a textual result such as "detectado".
    pub fn value_alias(&self, raw: &str) -> Option<&str> {
        self.values.get(&name_key(raw)).map(String::as_str)
    }

    pub fn day_status(&self, raw: &str) -> Option<DayStatus> {
        self.status.get(&name_key(raw)).copied()
    }

    pub fn sex(&self, raw: &str) -> Option<Sex> {
        self.sex.get(&name_key(raw)).copied()
    }
}
