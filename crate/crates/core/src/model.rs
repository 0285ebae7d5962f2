//! Shared data model: languages, countries, MCQ samples, verdicts and the
//! per-group contingency table every metric is computed from.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Lowercase two- or three-letter language identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        let ok = (2..=3).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase());
        if ok {
            Ok(Self(code))
        } else {
            Err(ModelError::InvalidLanguage(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LanguageCode> for String {
    fn from(value: LanguageCode) -> Self {
        value.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Uppercase two-letter country identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CountryCode(String);

impl CountryCode {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        if code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase()) {
            Ok(Self(code))
        } else {
            Err(ModelError::InvalidCountry(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CountryCode {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CountryCode> for String {
    fn from(value: CountryCode) -> Self {
        value.0
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The ordered set of languages (raters) of a run. Always holds at least two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LanguageCode>", into = "Vec<LanguageCode>")]
pub struct LanguageSet(Vec<LanguageCode>);

impl LanguageSet {
    pub fn new(languages: Vec<LanguageCode>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for lang in &languages {
            if !seen.insert(lang.clone()) {
                return Err(ModelError::DuplicateLanguage(lang.to_string()));
            }
        }
        if languages.len() < 2 {
            return Err(ModelError::LanguageSetTooSmall(languages.len()));
        }
        Ok(Self(languages))
    }

    /// Parses a comma-separated list such as `en,es,zh`.
    pub fn parse(list: &str) -> Result<Self, ModelError> {
        let langs = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(LanguageCode::new)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(langs)
    }

    /// English, Spanish, Chinese, Arabic, Indonesian, Korean, Greek, Persian.
    pub fn default_eight() -> Self {
        Self::parse("en,es,zh,ar,id,ko,el,fa").expect("static language list")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, lang: &LanguageCode) -> bool {
        self.0.contains(lang)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LanguageCode> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[LanguageCode] {
        &self.0
    }

    /// Sub-set in the given order; every language must belong to `self`.
    pub fn subset(&self, languages: &[LanguageCode]) -> Result<Self, ModelError> {
        for lang in languages {
            if !self.contains(lang) {
                return Err(ModelError::UnknownLanguage {
                    language: lang.to_string(),
                });
            }
        }
        Self::new(languages.to_vec())
    }
}

impl TryFrom<Vec<LanguageCode>> for LanguageSet {
    type Error = ModelError;
    fn try_from(value: Vec<LanguageCode>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LanguageSet> for Vec<LanguageCode> {
    fn from(value: LanguageSet) -> Self {
        value.0
    }
}

/// One answer option of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionEntry {
    pub key: char,
    pub text: String,
    pub country: CountryCode,
}

/// One question in one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqSample {
    pub sample_id: String,
    pub supersample_id: String,
    pub parallel_group_id: String,
    pub language: LanguageCode,
    pub question: String,
    pub options: Vec<OptionEntry>,
}

impl McqSample {
    /// Checks the per-sample invariants against a language-set size.
    pub fn validate(&self, max_options: usize) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidSample {
            sample_id: self.sample_id.clone(),
            reason,
        };
        if self.sample_id.is_empty() {
            return Err(bad("empty sample id".into()));
        }
        let count = self.options.len();
        if count < 2 || count > max_options {
            return Err(bad(format!(
                "has {count} options, expected between 2 and {max_options}"
            )));
        }
        for (idx, opt) in self.options.iter().enumerate() {
            let expected = (b'A' + idx as u8) as char;
            if opt.key != expected {
                return Err(bad(format!(
                    "option {idx} has key {:?}, expected {expected:?}",
                    opt.key
                )));
            }
            if opt.text.trim().is_empty() {
                return Err(bad(format!("option {} has empty text", opt.key)));
            }
        }
        Ok(())
    }

    pub fn option(&self, key: char) -> Option<&OptionEntry> {
        self.options.iter().find(|o| o.key == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.key)
    }
}

/// The translations of one question variant across languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelGroup {
    pub id: String,
    pub supersample_id: String,
    /// language -> index into [`Dataset::samples`]
    pub members: BTreeMap<LanguageCode, usize>,
}

/// A validated collection of samples indexed by id and parallel group.
#[derive(Debug, Clone)]
pub struct Dataset {
    languages: LanguageSet,
    samples: Vec<McqSample>,
    by_id: HashMap<String, usize>,
    groups: BTreeMap<String, ParallelGroup>,
}

impl Dataset {
    pub fn new(samples: Vec<McqSample>, languages: LanguageSet) -> Result<Self, ModelError> {
        let mut by_id = HashMap::with_capacity(samples.len());
        let mut groups: BTreeMap<String, ParallelGroup> = BTreeMap::new();
        for (idx, sample) in samples.iter().enumerate() {
            if !languages.contains(&sample.language) {
                return Err(ModelError::UnknownLanguage {
                    language: sample.language.to_string(),
                });
            }
            sample.validate(languages.len())?;
            if by_id.insert(sample.sample_id.clone(), idx).is_some() {
                return Err(ModelError::DuplicateSample(sample.sample_id.clone()));
            }
            let group = groups
                .entry(sample.parallel_group_id.clone())
                .or_insert_with(|| ParallelGroup {
                    id: sample.parallel_group_id.clone(),
                    supersample_id: sample.supersample_id.clone(),
                    members: BTreeMap::new(),
                });
            let inconsistent = |reason: String| ModelError::InconsistentGroup {
                group: sample.parallel_group_id.clone(),
                reason,
            };
            if group.supersample_id != sample.supersample_id {
                return Err(inconsistent(format!(
                    "sample {} belongs to supersample {} but the group belongs to {}",
                    sample.sample_id, sample.supersample_id, group.supersample_id
                )));
            }
            if let Some(&first) = group.members.values().next() {
                let reference = &samples[first];
                let lhs: Vec<(char, &CountryCode)> =
                    reference.options.iter().map(|o| (o.key, &o.country)).collect();
                let rhs: Vec<(char, &CountryCode)> =
                    sample.options.iter().map(|o| (o.key, &o.country)).collect();
                if lhs != rhs {
                    return Err(inconsistent(format!(
                        "options of {} ({}) disagree with {} ({}) on keys or countries",
                        sample.sample_id, sample.language, reference.sample_id, reference.language
                    )));
                }
            }
            if group.members.insert(sample.language.clone(), idx).is_some() {
                return Err(inconsistent(format!(
                    "two samples in language {}",
                    sample.language
                )));
            }
        }
        Ok(Self {
            languages,
            samples,
            by_id,
            groups,
        })
    }

    pub fn languages(&self) -> &LanguageSet {
        &self.languages
    }

    pub fn samples(&self) -> &[McqSample] {
        &self.samples
    }

    pub fn sample(&self, sample_id: &str) -> Option<&McqSample> {
        self.by_id.get(sample_id).map(|&i| &self.samples[i])
    }

    pub fn groups(&self) -> impl Iterator<Item = &ParallelGroup> {
        self.groups.values()
    }

    pub fn group(&self, id: &str) -> Option<&ParallelGroup> {
        self.groups.get(id)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sample(&self, group: &ParallelGroup, lang: &LanguageCode) -> Option<&McqSample> {
        group.members.get(lang).map(|&i| &self.samples[i])
    }

    /// Groups lacking a sample for at least one configured language, with
    /// the missing languages.
    pub fn incomplete_groups(&self) -> Vec<(String, Vec<LanguageCode>)> {
        self.groups
            .values()
            .filter_map(|g| {
                let missing: Vec<_> = self
                    .languages
                    .iter()
                    .filter(|l| !g.members.contains_key(*l))
                    .cloned()
                    .collect();
                (!missing.is_empty()).then(|| (g.id.clone(), missing))
            })
            .collect()
    }

    pub fn supersample_ids(&self) -> BTreeSet<&str> {
        self.groups.values().map(|g| g.supersample_id.as_str()).collect()
    }
}

/// One raw model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub sample_id: String,
    pub language: LanguageCode,
    #[serde(default, rename = "persona")]
    pub persona_country: Option<CountryCode>,
    pub raw_output: String,
}

/// Classified outcome of one response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Valid { key: char },
    Singleton { token: String },
    #[serde(rename = "missing")]
    MissingSingleton { token: String },
}

impl Verdict {
    pub fn valid_key(&self) -> Option<char> {
        match self {
            Verdict::Valid { key } => Some(*key),
            _ => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid { .. })
    }

    pub fn category(&self) -> Category {
        match self {
            Verdict::Valid { key } => Category::Valid(*key),
            Verdict::Singleton { token } | Verdict::MissingSingleton { token } => {
                Category::Singleton(token.clone())
            }
        }
    }
}

/// Whether a missing singleton or an invalid response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingletonKind {
    Invalid,
    Missing,
    Undecodable,
}

impl SingletonKind {
    fn as_str(self) -> &'static str {
        match self {
            SingletonKind::Invalid => "invalid",
            SingletonKind::Missing => "missing",
            SingletonKind::Undecodable => "undecodable",
        }
    }
}

const TOKEN_SEP: char = '\u{2225}';

/// Builds the globally unique category token for one singleton assignment.
pub fn singleton_token(
    id: &str,
    language: &LanguageCode,
    persona: Option<&CountryCode>,
    kind: SingletonKind,
) -> String {
    let persona = persona.map_or("-", CountryCode::as_str);
    format!(
        "{id}{TOKEN_SEP}{language}{TOKEN_SEP}{persona}{TOKEN_SEP}{}",
        kind.as_str()
    )
}

/// Equality kernel shared by the agreement metrics: singletons equal nothing.
pub fn classify_equal(a: &Verdict, b: &Verdict) -> bool {
    matches!((a, b), (Verdict::Valid { key: x }, Verdict::Valid { key: y }) if x == y)
}

/// A verdict attached to the response it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub sample_id: String,
    pub language: LanguageCode,
    #[serde(default)]
    pub persona: Option<CountryCode>,
    pub verdict: Verdict,
}

/// How a (group, language) cell without any response is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Score the cell as a unique missing-response singleton.
    #[default]
    Singleton,
    /// Exclude the whole parallel group and report it.
    DropGroup,
}

impl std::str::FromStr for MissingPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "singleton" => Ok(Self::Singleton),
            "drop" | "drop-group" => Ok(Self::DropGroup),
            other => Err(format!("unknown missing policy {other:?}")),
        }
    }
}

/// Per-language verdicts of one parallel group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictGroup {
    pub parallel_group_id: String,
    pub verdicts: BTreeMap<LanguageCode, Verdict>,
}

impl VerdictGroup {
    /// Keeps only the listed languages.
    pub fn restrict(&self, languages: &[LanguageCode]) -> VerdictGroup {
        VerdictGroup {
            parallel_group_id: self.parallel_group_id.clone(),
            verdicts: languages
                .iter()
                .filter_map(|l| self.verdicts.get(l).map(|v| (l.clone(), v.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedGroup {
    pub parallel_group_id: String,
    pub missing_languages: Vec<LanguageCode>,
}

/// Output of [`collate_parallel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collation {
    pub persona: Option<CountryCode>,
    pub groups: Vec<VerdictGroup>,
    pub dropped: Vec<DroppedGroup>,
}

/// Arranges verdicts of one persona slice into complete per-group maps.
///
/// Only groups with at least one verdict are retained. Entries in languages
/// outside `languages` are ignored, which lets callers collate a language
/// sub-group directly.
pub fn collate_parallel(
    dataset: &Dataset,
    verdicts: &[VerdictEntry],
    languages: &LanguageSet,
    policy: MissingPolicy,
) -> Result<Collation, ModelError> {
    let personas: BTreeSet<Option<&CountryCode>> =
        verdicts.iter().map(|v| v.persona.as_ref()).collect();
    if personas.len() > 1 {
        return Err(ModelError::MixedPersonas(
            personas
                .iter()
                .map(|p| p.map_or_else(|| "none".to_string(), |c| c.to_string()))
                .collect(),
        ));
    }
    let persona = personas.into_iter().next().flatten().cloned();

    let mut cells: BTreeMap<&str, BTreeMap<LanguageCode, Verdict>> = BTreeMap::new();
    for entry in verdicts {
        if !languages.contains(&entry.language) {
            continue;
        }
        let sample = dataset
            .sample(&entry.sample_id)
            .ok_or_else(|| ModelError::UnknownSample {
                sample_id: entry.sample_id.clone(),
            })?;
        if sample.language != entry.language {
            return Err(ModelError::InvalidSample {
                sample_id: entry.sample_id.clone(),
                reason: format!(
                    "verdict tagged {} but the sample is in {}",
                    entry.language, sample.language
                ),
            });
        }
        if let Verdict::Valid { key } = entry.verdict {
            if sample.option(key).is_none() {
                return Err(ModelError::UnknownOption {
                    sample_id: entry.sample_id.clone(),
                    language: entry.language.to_string(),
                    key,
                });
            }
        }
        let row = cells.entry(sample.parallel_group_id.as_str()).or_default();
        if row.insert(entry.language.clone(), entry.verdict.clone()).is_some() {
            return Err(ModelError::DuplicateVerdict {
                sample_id: entry.sample_id.clone(),
                language: entry.language.to_string(),
            });
        }
    }

    let mut groups = Vec::with_capacity(cells.len());
    let mut dropped = Vec::new();
    for (group_id, mut row) in cells {
        let group = dataset.group(group_id).expect("group of a known sample");
        let missing: Vec<LanguageCode> = languages
            .iter()
            .filter(|l| !row.contains_key(*l))
            .cloned()
            .collect();
        if !missing.is_empty() {
            match policy {
                MissingPolicy::DropGroup => {
                    dropped.push(DroppedGroup {
                        parallel_group_id: group_id.to_string(),
                        missing_languages: missing,
                    });
                    continue;
                }
                MissingPolicy::Singleton => {
                    for lang in missing {
                        let id = dataset
                            .group_sample(group, &lang)
                            .map_or(group_id, |s| s.sample_id.as_str());
                        let token =
                            singleton_token(id, &lang, persona.as_ref(), SingletonKind::Missing);
                        row.insert(lang, Verdict::MissingSingleton { token });
                    }
                }
            }
        }
        groups.push(VerdictGroup {
            parallel_group_id: group_id.to_string(),
            verdicts: row,
        });
    }
    Ok(Collation {
        persona,
        groups,
        dropped,
    })
}

/// A category of the extended answer space: a valid option key or a
/// one-off singleton token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Valid(char),
    Singleton(String),
}

impl Category {
    pub fn is_singleton(&self) -> bool {
        matches!(self, Category::Singleton(_))
    }
}

/// One row of the table: the category counts of a single parallel group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    counts: BTreeMap<Category, usize>,
    assignments: Vec<Category>,
}

impl Row {
    /// Builds a row from one assignment per rater.
    pub fn from_assignments(assignments: Vec<Category>) -> Self {
        let mut counts = BTreeMap::new();
        for cat in &assignments {
            *counts.entry(cat.clone()).or_insert(0) += 1;
        }
        Self {
            counts,
            assignments,
        }
    }

    /// Builds a row from counts; the assignment order is category order.
    pub fn from_counts(counts: BTreeMap<Category, usize>) -> Self {
        let counts: BTreeMap<_, _> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        let assignments = counts
            .iter()
            .flat_map(|(cat, &c)| std::iter::repeat_n(cat.clone(), c))
            .collect();
        Self {
            counts,
            assignments,
        }
    }

    pub fn counts(&self) -> &BTreeMap<Category, usize> {
        &self.counts
    }

    /// Per-rater assignments, in language-set order when built from groups.
    pub fn assignments(&self) -> &[Category] {
        &self.assignments
    }

    pub fn raters(&self) -> usize {
        self.assignments.len()
    }

    pub fn singleton_count(&self) -> usize {
        self.assignments.iter().filter(|c| c.is_singleton()).count()
    }
}

/// Counts `n_ij` of raters assigning category `j` to row `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    raters: usize,
    ids: Vec<String>,
    rows: Vec<Row>,
}

impl ContingencyTable {
    /// Validates row sums and singleton uniqueness.
    pub fn new(raters: usize, ids: Vec<String>, rows: Vec<Row>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyTable);
        }
        if raters < 2 {
            return Err(ModelError::LanguageSetTooSmall(raters));
        }
        debug_assert_eq!(ids.len(), rows.len());
        let mut seen = HashSet::new();
        for (idx, row) in rows.iter().enumerate() {
            if row.raters() != raters {
                return Err(ModelError::RowSum {
                    row: idx,
                    sum: row.raters(),
                    expected: raters,
                });
            }
            for (cat, &count) in &row.counts {
                if let Category::Singleton(token) = cat {
                    if count != 1 || !seen.insert(token.as_str()) {
                        return Err(ModelError::SingletonReused(token.clone()));
                    }
                }
            }
        }
        Ok(Self { raters, ids, rows })
    }

    /// Convenience constructor from count maps; rows are labelled by index.
    pub fn from_counts(
        raters: usize,
        rows: Vec<BTreeMap<Category, usize>>,
    ) -> Result<Self, ModelError> {
        let ids = (0..rows.len()).map(|i| format!("row{i}")).collect();
        Self::new(raters, ids, rows.into_iter().map(Row::from_counts).collect())
    }

    /// One row per group, assignments in `languages` order.
    pub fn from_groups(groups: &[VerdictGroup], languages: &LanguageSet) -> Result<Self, ModelError> {
        let mut ids = Vec::with_capacity(groups.len());
        let mut rows = Vec::with_capacity(groups.len());
        for group in groups {
            let assignments = languages
                .iter()
                .filter_map(|l| group.verdicts.get(l).map(Verdict::category))
                .collect();
            ids.push(group.parallel_group_id.clone());
            rows.push(Row::from_assignments(assignments));
        }
        Self::new(languages.len(), ids, rows)
    }

    /// Number of rows, `N`.
    pub fn samples(&self) -> usize {
        self.rows.len()
    }

    /// Raters per row, `n`.
    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Total singleton assignments, `M_U`.
    pub fn singleton_count(&self) -> usize {
        self.rows.iter().map(Row::singleton_count).sum()
    }

    /// Rows without any singleton assignment.
    pub fn singleton_free(&self) -> Option<Self> {
        let (ids, rows): (Vec<_>, Vec<_>) = self
            .ids
            .iter()
            .zip(&self.rows)
            .filter(|(_, r)| r.singleton_count() == 0)
            .map(|(i, r)| (i.clone(), r.clone()))
            .unzip();
        (!rows.is_empty()).then_some(Self {
            raters: self.raters,
            ids,
            rows,
        })
    }
}

/// Collates and tabulates one persona slice.
pub fn build_contingency(
    dataset: &Dataset,
    verdicts: &[VerdictEntry],
    languages: &LanguageSet,
    policy: MissingPolicy,
) -> Result<ContingencyTable, ModelError> {
    let collation = collate_parallel(dataset, verdicts, languages, policy)?;
    ContingencyTable::from_groups(&collation.groups, languages)
}
