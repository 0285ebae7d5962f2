//! Loading parallel MCQ datasets and response logs, classifying raw outputs
//! into verdicts, and splitting at supersample granularity.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{IngestError, ModelError};
use crate::model::{
    singleton_token, Collation, CountryCode, Dataset, LanguageCode, LanguageSet, McqSample,
    OptionEntry, ResponseRecord, SingletonKind, Verdict, VerdictEntry,
};
use crate::seed;

pub use crate::model::collate_parallel;

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Iterates non-blank lines as `(1-based line number, text)`.
pub(crate) fn lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, String), IngestError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(idx, line)| match line {
            Ok(text) if text.trim().is_empty() => None,
            Ok(text) => Some(Ok((idx + 1, text))),
            Err(e) => Some(Err(IngestError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })),
        })
}

pub(crate) fn parse_line<T: for<'de> Deserialize<'de>>(
    line: usize,
    text: &str,
) -> Result<T, IngestError> {
    serde_json::from_str(text).map_err(|e| IngestError::Malformed {
        line,
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct RawOption {
    key: String,
    text: String,
    country: String,
}

#[derive(Deserialize)]
struct RawSample {
    sample_id: String,
    supersample_id: String,
    parallel_group_id: String,
    language: String,
    question: String,
    options: Vec<RawOption>,
}

impl RawSample {
    fn into_sample(self, line: usize) -> Result<McqSample, IngestError> {
        let malformed = |message: String| IngestError::Malformed { line, message };
        let language = LanguageCode::new(self.language).map_err(|e| malformed(e.to_string()))?;
        let options = self
            .options
            .into_iter()
            .map(|o| {
                let mut chars = o.key.chars();
                let key = match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_uppercase() => c,
                    _ => return Err(malformed(format!("option key {:?} is not a letter", o.key))),
                };
                let country =
                    CountryCode::new(o.country).map_err(|e| malformed(e.to_string()))?;
                Ok(OptionEntry {
                    key,
                    text: o.text,
                    country,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(McqSample {
            sample_id: self.sample_id,
            supersample_id: self.supersample_id,
            parallel_group_id: self.parallel_group_id,
            language,
            question: self.question,
            options,
        })
    }
}

/// Reads a line-delimited dataset and validates every sample and group.
pub fn read_dataset<R: BufRead>(reader: R, languages: &LanguageSet) -> Result<Dataset, IngestError> {
    let mut samples = Vec::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let raw: RawSample = parse_line(line, &text)?;
        let sample = raw.into_sample(line)?;
        if !languages.contains(&sample.language) {
            return Err(IngestError::Malformed {
                line,
                message: ModelError::UnknownLanguage {
                    language: sample.language.to_string(),
                }
                .to_string(),
            });
        }
        sample.validate(languages.len()).map_err(|e| IngestError::Malformed {
            line,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(Dataset::new(samples, languages.clone())?)
}

pub fn load_dataset(path: impl AsRef<Path>, languages: &LanguageSet) -> Result<Dataset, IngestError> {
    read_dataset(open(path.as_ref())?, languages)
}

/// Optional first line of a response log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogMetadata {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub run_tag: Option<String>,
    #[serde(default)]
    pub prompt_format: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponseLog {
    pub metadata: LogMetadata,
    pub records: Vec<ResponseRecord>,
}

impl ResponseLog {
    /// Distinct persona slices in first-seen order.
    pub fn personas(&self) -> Vec<Option<CountryCode>> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.persona_country) {
                seen.push(r.persona_country.clone());
            }
        }
        seen
    }
}

/// Reads a response log. A first line without `sample_id` is metadata.
pub fn read_responses<R: BufRead>(reader: R) -> Result<ResponseLog, IngestError> {
    let mut log = ResponseLog::default();
    let mut keys = HashSet::new();
    for (pos, item) in lines(reader).enumerate() {
        let (line, text) = item?;
        if pos == 0 {
            let value: serde_json::Value = parse_line(line, &text)?;
            if value.get("sample_id").is_none() {
                log.metadata = serde_json::from_value(value).map_err(|e| IngestError::Malformed {
                    line,
                    message: e.to_string(),
                })?;
                continue;
            }
        }
        let record: ResponseRecord = parse_line(line, &text)?;
        let key = (
            record.sample_id.clone(),
            record.language.clone(),
            record.persona_country.clone(),
        );
        if !keys.insert(key) {
            return Err(IngestError::DuplicateResponse {
                sample_id: record.sample_id,
                language: record.language.to_string(),
                persona: record
                    .persona_country
                    .map_or_else(|| "none".into(), |c| c.to_string()),
            });
        }
        log.records.push(record);
    }
    Ok(log)
}

pub fn load_responses(path: impl AsRef<Path>) -> Result<ResponseLog, IngestError> {
    read_responses(open(path.as_ref())?)
}

/// Field names tried, in order, on the first JSON object of an output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseConfig {
    pub answer_fields: Vec<String>,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            answer_fields: vec!["answer_choice".into(), "answer".into()],
        }
    }
}

/// Canonical composition, case folding and trimming.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase().trim().to_string()
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    raw.match_indices('{').find_map(|(pos, _)| {
        let mut stream =
            serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(serde_json::Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn match_candidate(candidate: &str, sample: &McqSample) -> Option<char> {
    let trimmed = candidate.trim();
    let mut chars = trimmed.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if sample.option(c).is_some() {
            return Some(c);
        }
    }
    let needle = normalize_text(trimmed);
    let mut hits = sample
        .options
        .iter()
        .filter(|o| normalize_text(&o.text) == needle)
        .map(|o| o.key);
    match (hits.next(), hits.next()) {
        (Some(key), None) => Some(key),
        _ => None,
    }
}

/// Classifies one raw output against its sample.
///
/// The answer candidate is the configured field of the first JSON object in
/// the output, or the whole output when there is none. It is matched first
/// against option keys, then against normalised option texts. Anything that
/// does not resolve to exactly one option is a singleton.
pub fn parse_response(record: &ResponseRecord, sample: &McqSample, config: &ParseConfig) -> Verdict {
    debug_assert_eq!(record.sample_id, sample.sample_id);
    let from_json = first_json_object(&record.raw_output).and_then(|obj| {
        config
            .answer_fields
            .iter()
            .find_map(|f| obj.get(f).and_then(|v| v.as_str()).map(str::to_owned))
    });
    let candidate = from_json.as_deref().unwrap_or(&record.raw_output);
    match match_candidate(candidate, sample) {
        Some(key) => Verdict::Valid { key },
        None => Verdict::Singleton {
            token: singleton_token(
                &record.sample_id,
                &record.language,
                record.persona_country.as_ref(),
                SingletonKind::Invalid,
            ),
        },
    }
}

/// Parses every record of a log against the dataset.
pub fn parse_log(
    log: &ResponseLog,
    dataset: &Dataset,
    config: &ParseConfig,
) -> Result<Vec<VerdictEntry>, ModelError> {
    log.records
        .par_iter()
        .map(|record| {
            let sample = dataset
                .sample(&record.sample_id)
                .ok_or_else(|| ModelError::UnknownSample {
                    sample_id: record.sample_id.clone(),
                })?;
            if sample.language != record.language {
                return Err(ModelError::InvalidSample {
                    sample_id: record.sample_id.clone(),
                    reason: format!(
                        "response tagged {} but the sample is in {}",
                        record.language, sample.language
                    ),
                });
            }
            Ok(VerdictEntry {
                sample_id: record.sample_id.clone(),
                language: record.language.clone(),
                persona: record.persona_country.clone(),
                verdict: parse_response(record, sample, config),
            })
        })
        .collect()
}

/// Splits verdict entries into persona slices, in first-seen order.
pub fn slice_by_persona(entries: &[VerdictEntry]) -> Vec<(Option<CountryCode>, Vec<VerdictEntry>)> {
    let mut slices: Vec<(Option<CountryCode>, Vec<VerdictEntry>)> = Vec::new();
    for entry in entries {
        match slices.iter_mut().find(|(p, _)| *p == entry.persona) {
            Some((_, v)) => v.push(entry.clone()),
            None => slices.push((entry.persona.clone(), vec![entry.clone()])),
        }
    }
    slices
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub valid: usize,
    pub invalid: usize,
    pub missing: usize,
}

impl VerdictCounts {
    pub fn total(&self) -> usize {
        self.valid + self.invalid + self.missing
    }

    /// (valid, invalid, missing) fractions; they sum to 1 when non-empty.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let t = self.total().max(1) as f64;
        (
            self.valid as f64 / t,
            self.invalid as f64 / t,
            self.missing as f64 / t,
        )
    }
}

/// Per-language verdict kinds of a collated persona slice.
pub fn verdict_accounting(collation: &Collation) -> BTreeMap<LanguageCode, VerdictCounts> {
    let mut out: BTreeMap<LanguageCode, VerdictCounts> = BTreeMap::new();
    for group in &collation.groups {
        for (lang, verdict) in &group.verdicts {
            let c = out.entry(lang.clone()).or_default();
            match verdict {
                Verdict::Valid { .. } => c.valid += 1,
                Verdict::Singleton { .. } => c.invalid += 1,
                Verdict::MissingSingleton { .. } => c.missing += 1,
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];
}

/// Supersample-level partition assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Partition>,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub counts: BTreeMap<Partition, usize>,
}

impl SplitAssignment {
    pub fn partition_of_sample(&self, sample: &McqSample) -> Option<Partition> {
        self.assignment.get(&sample.supersample_id).copied()
    }
}

/// Largest-remainder apportionment of `total` items by `ratios`.
fn apportion(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * total as f64);
    let mut sizes = quotas.map(|q| ((q + 1e-9).floor() as usize).min(total));
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - sizes[a] as f64;
        let fb = quotas[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &idx in order.iter().cycle().take(total.saturating_sub(assigned)) {
        sizes[idx] += 1;
    }
    sizes
}

/// Seeded shuffle of sorted supersample ids, sliced by cumulative ratios.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, IngestError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(IngestError::BadRatios(ratios));
    }
    let mut ids: Vec<&str> = dataset.supersample_ids().into_iter().collect();
    let partitions = ratios.iter().filter(|r| **r > 0.0).count();
    if ids.len() < partitions {
        return Err(IngestError::TooFewSupersamples {
            supersamples: ids.len(),
            partitions,
        });
    }
    ids.shuffle(&mut seed::stream(seed, &["split"]));
    let sizes = apportion(ids.len(), ratios);
    let mut assignment = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut rest = ids.as_slice();
    for (partition, size) in Partition::ALL.into_iter().zip(sizes) {
        let (head, tail) = rest.split_at(size);
        for id in head {
            assignment.insert(id.to_string(), partition);
        }
        counts.insert(partition, size);
        rest = tail;
    }
    Ok(SplitAssignment {
        assignment,
        ratios,
        seed,
        counts,
    })
}
