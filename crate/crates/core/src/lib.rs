//! Lab-result normalization, five-band categorization, relevant-change
//! flagging and per-patient clinical-path timelines.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the common
//! instantiations. `f64` is the default everywhere, [`Rational64`] gives exact
//! arithmetic for audits and cross-checks.

pub mod analytics;
pub mod categorize;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod store;
pub mod timeline;

pub use num_rational::Rational64;
pub use scalar::Scalar;

pub use analytics::{DayFilter, DaySummary, SeriesPoint, TestSeries};
pub use categorize::{categorize, compute_cuts, ReferenceCuts};
pub use model::{
    category_of_order, default_group_table, DayStatus, GroupTable, LabResult, Patient, RateOfChange, ResultCategory,
    Sex, TestGroup,
};
pub use store::Dataset;
pub use timeline::{build_clinical_path, toggle_day_order, ClinicalPath, DayOrder, PathOptions};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type ExactDataset = Dataset<Rational64>;

pub type LabResult64 = LabResult<f64>;
pub type ExactLabResult = LabResult<Rational64>;

pub type ReferenceCuts64 = ReferenceCuts<f64>;
pub type ExactReferenceCuts = ReferenceCuts<Rational64>;

pub type ClinicalPath64 = ClinicalPath<f64>;
pub type ExactClinicalPath = ClinicalPath<Rational64>;

pub type TestSeries64 = TestSeries<f64>;
