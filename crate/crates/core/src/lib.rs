//! Cross-lingual consistency measurement and consensus preference mining.
//!
//! Languages act as raters over parallel multiple-choice questions. Invalid
//! or missing answers become one-off singleton categories so that the
//! singleton Fleiss kappa penalises them without discarding samples.
//!
//! - [`model`]: samples, verdicts, contingency tables
//! - [`metrics`] and [`bootstrap`]: kappa, companion metrics, variance
//! - [`ingest`]: dataset and response-log loading, answer parsing, splits
//! - [`consensus`]: strict-majority consensus and preference-pair batches
//! - [`analysis`]: resource-order curves, audits, layer-wise analyses,
//!   steering vectors

pub mod analysis;
pub mod bootstrap;
pub mod consensus;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod seed;

pub use error::{AnalysisError, IngestError, MetricError, ModelError};
pub use metrics::{MetricKind, MetricReport, Score};
pub use model::{
    build_contingency, classify_equal, Category, ContingencyTable, CountryCode, Dataset,
    LanguageCode, LanguageSet, McqSample, MissingPolicy, OptionEntry, ResponseRecord, Verdict,
    VerdictEntry, VerdictGroup,
};
