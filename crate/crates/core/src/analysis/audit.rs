//! Cultural-bias, persona-adherence and knowledge audits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, ModelError};
use crate::model::{CountryCode, Dataset, Verdict, VerdictEntry};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionRates {
    /// Share of valid verdicts choosing an option annotated with each country.
    pub rates: BTreeMap<CountryCode, f64>,
    pub valid: usize,
    pub invalid: usize,
    pub missing: usize,
    pub singleton_fraction: f64,
}

/// Country selection rates over the valid verdicts of one slice.
pub fn country_selection_rates(
    entries: &[VerdictEntry],
    dataset: &Dataset,
) -> Result<SelectionRates, ModelError> {
    let mut counts: BTreeMap<CountryCode, usize> = BTreeMap::new();
    let mut out = SelectionRates::default();
    for entry in entries {
        match &entry.verdict {
            Verdict::Valid { key } => {
                let sample = dataset
                    .sample(&entry.sample_id)
                    .ok_or_else(|| ModelError::UnknownSample {
                        sample_id: entry.sample_id.clone(),
                    })?;
                let opt = sample.option(*key).ok_or_else(|| ModelError::UnknownOption {
                    sample_id: entry.sample_id.clone(),
                    language: entry.language.to_string(),
                    key: *key,
                })?;
                *counts.entry(opt.country.clone()).or_insert(0) += 1;
                out.valid += 1;
            }
            Verdict::Singleton { .. } => out.invalid += 1,
            Verdict::MissingSingleton { .. } => out.missing += 1,
        }
    }
    out.rates = counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / out.valid as f64))
        .collect();
    let total = out.valid + out.invalid + out.missing;
    if total > 0 {
        out.singleton_fraction = (out.invalid + out.missing) as f64 / total as f64;
    }
    Ok(out)
}

/// Absolute per-country difference between two rate maps; a country
/// absent from one side counts as rate 0 there.
pub fn selection_rate_deltas(
    a: &SelectionRates,
    b: &SelectionRates,
) -> BTreeMap<CountryCode, f64> {
    let countries: BTreeSet<&CountryCode> = a.rates.keys().chain(b.rates.keys()).collect();
    countries
        .into_iter()
        .map(|c| {
            let x = a.rates.get(c).copied().unwrap_or(0.0);
            let y = b.rates.get(c).copied().unwrap_or(0.0);
            (c.clone(), (x - y).abs())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Accuracy {
    fn record(&mut self, hit: bool) {
        self.total += 1;
        if hit {
            self.correct += 1;
        }
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersonaAccuracy {
    pub overall: Accuracy,
    pub per_persona: BTreeMap<CountryCode, Accuracy>,
}

/// Fraction of answers whose option country equals the persona country.
/// Singleton verdicts count as mismatches.
pub fn persona_match_accuracy(
    entries: &[VerdictEntry],
    dataset: &Dataset,
) -> Result<PersonaAccuracy, AnalysisError> {
    let mut out = PersonaAccuracy::default();
    for entry in entries {
        let persona = entry
            .persona
            .as_ref()
            .ok_or_else(|| AnalysisError::MissingPersona {
                sample_id: entry.sample_id.clone(),
            })?;
        let hit = match entry.verdict {
            Verdict::Valid { key } => {
                let sample = dataset
                    .sample(&entry.sample_id)
                    .ok_or_else(|| ModelError::UnknownSample {
                        sample_id: entry.sample_id.clone(),
                    })?;
                sample.option(key).is_some_and(|o| &o.country == persona)
            }
            _ => false,
        };
        out.overall.record(hit);
        out.per_persona.entry(persona.clone()).or_default().record(hit);
    }
    Ok(out)
}

/// Reference answer for a knowledge-audit sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub sample_id: String,
    pub key: char,
    pub country: CountryCode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeAudit {
    pub overall: Accuracy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen: Option<Accuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen: Option<Accuracy>,
}

/// Exact-match accuracy against gold keys, split by whether the gold
/// country is among `seen_countries`. Empty groups are omitted.
pub fn knowledge_audit(
    entries: &[VerdictEntry],
    gold: &BTreeMap<String, GoldAnswer>,
    seen_countries: &BTreeSet<CountryCode>,
) -> Result<KnowledgeAudit, AnalysisError> {
    let mut out = KnowledgeAudit::default();
    let (mut seen, mut unseen) = (Accuracy::default(), Accuracy::default());
    for entry in entries {
        let answer = gold
            .get(&entry.sample_id)
            .ok_or_else(|| AnalysisError::MissingGold(entry.sample_id.clone()))?;
        let hit = entry.verdict.valid_key() == Some(answer.key);
        out.overall.record(hit);
        if seen_countries.contains(&answer.country) {
            seen.record(hit);
        } else {
            unseen.record(hit);
        }
    }
    out.seen = (seen.total > 0).then_some(seen);
    out.unseen = (unseen.total > 0).then_some(unseen);
    Ok(out)
}
