use std::collections::BTreeMap;

use cci_core::analysis::{ResourceRanking, StereotypeMap};
use cci_core::{CountryCode, LanguageCode, MissingPolicy};
use serde::Deserialize;

/// Optional run configuration. Command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub languages: Option<Vec<LanguageCode>>,
    /// Named language groups measured separately, e.g. `All`,
    /// `HigherResource`, `LowerResource`.
    pub language_groups: Option<BTreeMap<String, Vec<LanguageCode>>>,
    /// Web-crawl share per language, in percent.
    pub resource_ranking: Option<ResourceRanking>,
    pub stereotypes: Option<StereotypeMap>,
    pub answer_fields: Option<Vec<String>>,
    pub missing_policy: Option<MissingPolicy>,
    pub bootstrap_iterations: Option<usize>,
    /// Countries treated as seen in knowledge audits.
    pub seen_countries: Option<Vec<CountryCode>>,
}
