//! Cross-lingual consensus mining into language-balanced, parallel-batched
//! preference pairs.
//!
//! The pipeline runs in four steps: strict-majority consensus per parallel
//! group, one preference pair per language, undersampling of
//! consensus-contributing pairs, and grouping into complete parallel
//! batches. Every random choice is keyed by stable identifiers, so the
//! output is a pure function of its inputs and the seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Dataset, LanguageCode, LanguageSet, McqSample, Verdict, VerdictGroup};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stance", rename_all = "snake_case")]
pub enum Stance {
    Agreed,
    Diverged { key: char },
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub parallel_group_id: String,
    pub consensus_key: Option<char>,
    /// Stance of each language relative to the consensus. Without a
    /// consensus every valid answer is reported as diverged.
    pub stances: BTreeMap<LanguageCode, Stance>,
}

/// Finds the valid key held by strictly more than half of the languages.
/// A language absent from the group counts as invalid.
pub fn extract_consensus(group: &VerdictGroup, languages: &LanguageSet) -> ConsensusOutcome {
    let n = languages.len();
    let mut tally: BTreeMap<char, usize> = BTreeMap::new();
    for lang in languages.iter() {
        if let Some(Verdict::Valid { key }) = group.verdicts.get(lang) {
            *tally.entry(*key).or_insert(0) += 1;
        }
    }
    let consensus_key = tally
        .iter()
        .find(|(_, &count)| 2 * count > n)
        .map(|(&key, _)| key);
    let stances = languages
        .iter()
        .map(|lang| {
            let stance = match group.verdicts.get(lang) {
                Some(Verdict::Valid { key }) if Some(*key) == consensus_key => Stance::Agreed,
                Some(Verdict::Valid { key }) => Stance::Diverged { key: *key },
                _ => Stance::Invalid,
            };
            (lang.clone(), stance)
        })
        .collect();
    ConsensusOutcome {
        parallel_group_id: group.parallel_group_id.clone(),
        consensus_key,
        stances,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionSource {
    /// The language's own non-consensus answer.
    Divergent,
    /// Drawn uniformly from the non-consensus options.
    SampledUniform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub parallel_group_id: String,
    pub language: LanguageCode,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_key: char,
    pub rejected_key: char,
    pub rejection_source: RejectionSource,
    pub contributes_to_consensus: bool,
}

/// Question followed by one `KEY. text` line per option, in key order.
pub fn render_prompt(sample: &McqSample) -> String {
    let mut out = sample.question.clone();
    for opt in &sample.options {
        out.push('\n');
        out.push(opt.key);
        out.push_str(". ");
        out.push_str(&opt.text);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoConsensus,
    MissingSample,
    NoRejectableOption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub parallel_group_id: String,
    pub reason: SkipReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageCode>,
}

/// Builds one pair per language for a group with a consensus.
///
/// Diverged languages reject their own answer. Agreed and invalid languages
/// reject an option drawn uniformly from those whose key differs from the
/// consensus (and whose text differs from the chosen text).
pub fn build_preference_pairs(
    dataset: &Dataset,
    outcome: &ConsensusOutcome,
    languages: &LanguageSet,
    seed: u64,
) -> Result<Vec<PreferencePair>, SkippedGroup> {
    let group_id = outcome.parallel_group_id.as_str();
    let skip = |reason, language: Option<&LanguageCode>| SkippedGroup {
        parallel_group_id: group_id.to_string(),
        reason,
        language: language.cloned(),
    };
    let Some(consensus) = outcome.consensus_key else {
        return Err(skip(SkipReason::NoConsensus, None));
    };
    let group = dataset
        .group(group_id)
        .ok_or_else(|| skip(SkipReason::MissingSample, None))?;

    let mut pairs = Vec::with_capacity(languages.len());
    for lang in languages.iter() {
        let sample = dataset
            .group_sample(group, lang)
            .ok_or_else(|| skip(SkipReason::MissingSample, Some(lang)))?;
        let chosen = sample
            .option(consensus)
            .ok_or_else(|| skip(SkipReason::MissingSample, Some(lang)))?;
        let stance = outcome.stances.get(lang).copied().unwrap_or(Stance::Invalid);

        let divergent = match stance {
            Stance::Diverged { key } => sample.option(key).filter(|o| o.text != chosen.text),
            _ => None,
        };
        let (rejected, source) = match divergent {
            Some(opt) => (opt, RejectionSource::Divergent),
            None => {
                let candidates: Vec<_> = sample
                    .options
                    .iter()
                    .filter(|o| o.key != consensus && o.text != chosen.text)
                    .collect();
                if candidates.is_empty() {
                    return Err(skip(SkipReason::NoRejectableOption, Some(lang)));
                }
                let mut rng = seed::stream(seed, &["reject", group_id, lang.as_str()]);
                let pick = candidates[rng.gen_range(0..candidates.len())];
                (pick, RejectionSource::SampledUniform)
            }
        };
        pairs.push(PreferencePair {
            parallel_group_id: group_id.to_string(),
            language: lang.clone(),
            prompt: render_prompt(sample),
            chosen: chosen.text.clone(),
            rejected: rejected.text.clone(),
            chosen_key: chosen.key,
            rejected_key: rejected.key,
            rejection_source: source,
            contributes_to_consensus: stance == Stance::Agreed,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceMode {
    /// Drop individual contributing pairs down to the per-language minimum.
    #[default]
    PerPair,
    /// Drop whole groups, never pushing a language below the minimum.
    PerGroup,
}

impl std::str::FromStr for BalanceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-pair" => Ok(Self::PerPair),
            "per-group" => Ok(Self::PerGroup),
            other => Err(format!("unknown balance mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceOutcome {
    pub retained: Vec<PreferencePair>,
    pub minimum: usize,
    pub contributing_before: BTreeMap<LanguageCode, usize>,
    pub contributing_after: BTreeMap<LanguageCode, usize>,
    pub dropped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn contributing_counts<'a>(
    pairs: impl IntoIterator<Item = &'a PreferencePair>,
    languages: &LanguageSet,
) -> BTreeMap<LanguageCode, usize> {
    let mut counts: BTreeMap<LanguageCode, usize> =
        languages.iter().map(|l| (l.clone(), 0)).collect();
    for p in pairs {
        if p.contributes_to_consensus {
            if let Some(c) = counts.get_mut(&p.language) {
                *c += 1;
            }
        }
    }
    counts
}

fn language_rank(languages: &LanguageSet) -> BTreeMap<&LanguageCode, usize> {
    languages.iter().enumerate().map(|(i, l)| (l, i)).collect()
}

/// Undersamples consensus-contributing pairs so every language contributes
/// the same number of times. Non-contributing pairs are kept. The result is
/// ordered by group id, then language-set order.
pub fn balance_undersample(
    pairs: Vec<PreferencePair>,
    languages: &LanguageSet,
    seed: u64,
    mode: BalanceMode,
) -> BalanceOutcome {
    let before = contributing_counts(&pairs, languages);
    let minimum = before.values().copied().min().unwrap_or(0);
    let warning = (minimum == 0 && before.values().any(|&c| c > 0)).then(|| {
        "some language never contributes to a consensus; all contributing pairs dropped".to_string()
    });
    let total = pairs.len();

    let mut retained: Vec<PreferencePair> = match mode {
        BalanceMode::PerPair => {
            let mut keep: HashSet<(String, LanguageCode)> = HashSet::new();
            for lang in languages.iter() {
                let mut ids: Vec<&str> = pairs
                    .iter()
                    .filter(|p| p.contributes_to_consensus && &p.language == lang)
                    .map(|p| p.parallel_group_id.as_str())
                    .collect();
                ids.sort_unstable();
                ids.shuffle(&mut seed::stream(seed, &["balance", lang.as_str()]));
                keep.extend(ids.into_iter().take(minimum).map(|id| (id.to_string(), lang.clone())));
            }
            pairs
                .into_iter()
                .filter(|p| {
                    !p.contributes_to_consensus
                        || keep.contains(&(p.parallel_group_id.clone(), p.language.clone()))
                })
                .collect()
        }
        BalanceMode::PerGroup => {
            let mut by_group: BTreeMap<String, Vec<PreferencePair>> = BTreeMap::new();
            for p in pairs {
                by_group.entry(p.parallel_group_id.clone()).or_default().push(p);
            }
            let mut order: Vec<String> = by_group.keys().cloned().collect();
            order.shuffle(&mut seed::stream(seed, &["balance-group"]));
            let mut counts = before.clone();
            for id in order {
                let contributing: Vec<LanguageCode> = by_group[&id]
                    .iter()
                    .filter(|p| p.contributes_to_consensus)
                    .map(|p| p.language.clone())
                    .collect();
                let droppable = !contributing.is_empty()
                    && contributing.iter().all(|l| counts.get(l).is_some_and(|&c| c > minimum));
                if droppable {
                    for l in &contributing {
                        *counts.get_mut(l).expect("counted language") -= 1;
                    }
                    by_group.remove(&id);
                }
            }
            by_group.into_values().flatten().collect()
        }
    };

    let rank = language_rank(languages);
    retained.sort_by(|a, b| {
        a.parallel_group_id
            .cmp(&b.parallel_group_id)
            .then(rank.get(&a.language).cmp(&rank.get(&b.language)))
    });
    let after = contributing_counts(&retained, languages);
    BalanceOutcome {
        dropped: total - retained.len(),
        retained,
        minimum,
        contributing_before: before,
        contributing_after: after,
        warning,
    }
}

/// The same query in every configured language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelBatch {
    pub parallel_group_id: String,
    pub pairs: Vec<PreferencePair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orphan {
    pub parallel_group_id: String,
    pub present_languages: Vec<LanguageCode>,
    pub reason: String,
}

/// Groups retained pairs into complete batches; incomplete groups are
/// returned as orphans.
pub fn emit_parallel_batches(
    retained: &[PreferencePair],
    languages: &LanguageSet,
) -> (Vec<ParallelBatch>, Vec<Orphan>) {
    let mut by_group: BTreeMap<&str, Vec<&PreferencePair>> = BTreeMap::new();
    for p in retained {
        by_group.entry(p.parallel_group_id.as_str()).or_default().push(p);
    }
    let rank = language_rank(languages);
    let mut batches = Vec::new();
    let mut orphans = Vec::new();
    for (id, mut pairs) in by_group {
        pairs.sort_by_key(|p| rank.get(&p.language).copied().unwrap_or(usize::MAX));
        let present: BTreeSet<&LanguageCode> = pairs.iter().map(|p| &p.language).collect();
        let complete = pairs.len() == languages.len()
            && present.len() == languages.len()
            && languages.iter().all(|l| present.contains(l));
        if complete {
            batches.push(ParallelBatch {
                parallel_group_id: id.to_string(),
                pairs: pairs.into_iter().cloned().collect(),
            });
        } else {
            orphans.push(Orphan {
                parallel_group_id: id.to_string(),
                present_languages: pairs.iter().map(|p| p.language.clone()).collect(),
                reason: format!("{} of {} languages retained", present.len(), languages.len()),
            });
        }
    }
    (batches, orphans)
}

/// Wire format of one emitted pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub language: LanguageCode,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub rejection_source: RejectionSource,
    pub contributes: bool,
}

/// Wire format of one batch line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub parallel_group_id: String,
    pub pairs: Vec<PairRecord>,
}

impl From<&ParallelBatch> for BatchRecord {
    fn from(batch: &ParallelBatch) -> Self {
        BatchRecord {
            parallel_group_id: batch.parallel_group_id.clone(),
            pairs: batch
                .pairs
                .iter()
                .map(|p| PairRecord {
                    language: p.language.clone(),
                    prompt: p.prompt.clone(),
                    chosen: p.chosen.clone(),
                    rejected: p.rejected.clone(),
                    rejection_source: p.rejection_source,
                    contributes: p.contributes_to_consensus,
                })
                .collect(),
        }
    }
}

/// Serialises batches as line-delimited JSON.
pub fn batches_to_jsonl(batches: &[ParallelBatch]) -> String {
    let mut out = String::new();
    for batch in batches {
        out.push_str(&serde_json::to_string(&BatchRecord::from(batch)).expect("serialisable batch"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineReport {
    pub groups: usize,
    pub consensus_groups: usize,
    pub pairs_built: usize,
    pub batches: usize,
    pub skipped: Vec<SkippedGroup>,
    pub orphans: Vec<Orphan>,
    pub minimum: usize,
    pub contributing_before: BTreeMap<LanguageCode, usize>,
    pub contributing_after: BTreeMap<LanguageCode, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MineOutput {
    pub outcomes: Vec<ConsensusOutcome>,
    pub batches: Vec<ParallelBatch>,
    pub report: MineReport,
}

/// Runs consensus extraction, pair construction, balancing and batching.
pub fn mine(
    dataset: &Dataset,
    groups: &[VerdictGroup],
    languages: &LanguageSet,
    seed: u64,
    mode: BalanceMode,
) -> MineOutput {
    let per_group: Vec<(ConsensusOutcome, Result<Vec<PreferencePair>, SkippedGroup>)> = groups
        .par_iter()
        .map(|g| {
            let outcome = extract_consensus(g, languages);
            let pairs = build_preference_pairs(dataset, &outcome, languages, seed);
            (outcome, pairs)
        })
        .collect();

    let mut outcomes = Vec::with_capacity(per_group.len());
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (outcome, result) in per_group {
        match result {
            Ok(p) => pairs.extend(p),
            Err(s) => skipped.push(s),
        }
        outcomes.push(outcome);
    }
    let pairs_built = pairs.len();
    let balance = balance_undersample(pairs, languages, seed, mode);
    let (batches, orphans) = emit_parallel_batches(&balance.retained, languages);
    let report = MineReport {
        groups: groups.len(),
        consensus_groups: outcomes.iter().filter(|o| o.consensus_key.is_some()).count(),
        pairs_built,
        batches: batches.len(),
        skipped,
        orphans,
        minimum: balance.minimum,
        contributing_before: balance.contributing_before,
        contributing_after: balance.contributing_after,
        warning: balance.warning,
    };
    MineOutput {
        outcomes,
        batches,
        report,
    }
}
