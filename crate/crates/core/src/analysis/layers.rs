//! Layer-wise analyses over early-decoding dumps: stereotype frequency,
//! per-country slopes and per-layer singleton kappa.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::analysis::ols::{fit_line, LinearFit};
use crate::error::{AnalysisError, IngestError, ModelError};
use crate::ingest::{lines, parse_line};
use crate::metrics::{singleton_fleiss_kappa, Score};
use crate::model::{
    collate_parallel, singleton_token, ContingencyTable, CountryCode, Dataset, LanguageCode,
    LanguageSet, MissingPolicy, SingletonKind, Verdict, VerdictEntry,
};

/// First line of a layer dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDumpHeader {
    pub model: String,
    /// Number of transformer blocks; layers are indexed `0..depth`.
    pub depth: usize,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPredictionRecord {
    pub sample_id: String,
    pub language: LanguageCode,
    pub layer: usize,
    pub predicted_key: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDump {
    pub header: LayerDumpHeader,
    pub records: Vec<LayerPredictionRecord>,
}

impl LayerDump {
    pub fn new(
        header: LayerDumpHeader,
        records: Vec<LayerPredictionRecord>,
    ) -> Result<Self, AnalysisError> {
        if let Some(r) = records.iter().find(|r| r.layer >= header.depth) {
            return Err(AnalysisError::LayerOutOfRange {
                layer: r.layer,
                depth: header.depth,
            });
        }
        Ok(Self { header, records })
    }

    pub fn layers(&self) -> BTreeSet<usize> {
        self.records.iter().map(|r| r.layer).collect()
    }

    pub fn languages(&self) -> BTreeSet<&LanguageCode> {
        self.records.iter().map(|r| &r.language).collect()
    }
}

pub fn read_layer_dump<R: BufRead>(reader: R) -> Result<LayerDump, IngestError> {
    let mut items = lines(reader);
    let (line, text) = items.next().transpose()?.ok_or(IngestError::Malformed {
        line: 1,
        message: "missing header line".into(),
    })?;
    let header: LayerDumpHeader = parse_line(line, &text)?;
    let mut records = Vec::new();
    for item in items {
        let (line, text) = item?;
        let record: LayerPredictionRecord = parse_line(line, &text)?;
        if record.layer >= header.depth {
            return Err(IngestError::Malformed {
                line,
                message: format!("layer {} outside declared depth {}", record.layer, header.depth),
            });
        }
        records.push(record);
    }
    Ok(LayerDump { header, records })
}

/// Each language's stereotypical country.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StereotypeMap(pub BTreeMap<LanguageCode, CountryCode>);

impl StereotypeMap {
    /// Native countries of the eight default languages.
    pub fn default_eight() -> Self {
        let pairs = [
            ("en", "US"),
            ("es", "MX"),
            ("zh", "CN"),
            ("ar", "DZ"),
            ("id", "ID"),
            ("ko", "KR"),
            ("el", "GR"),
            ("fa", "IR"),
        ];
        Self(
            pairs
                .into_iter()
                .map(|(l, c)| {
                    (
                        LanguageCode::new(l).expect("static code"),
                        CountryCode::new(c).expect("static code"),
                    )
                })
                .collect(),
        )
    }

    pub fn get(&self, lang: &LanguageCode) -> Result<&CountryCode, AnalysisError> {
        self.0
            .get(lang)
            .ok_or_else(|| AnalysisError::StereotypeMissing(lang.to_string()))
    }

    /// Errors unless every language of `languages` has an entry.
    pub fn check_total(&self, languages: &LanguageSet) -> Result<(), AnalysisError> {
        languages.iter().try_for_each(|l| self.get(l).map(|_| ()))
    }
}

/// The country a layer prediction commits to, or `None` when undecodable
/// (no key, or a key the sample does not offer).
fn predicted_country<'a>(
    record: &LayerPredictionRecord,
    dataset: &'a Dataset,
) -> Result<Option<&'a CountryCode>, AnalysisError> {
    let sample = dataset
        .sample(&record.sample_id)
        .ok_or_else(|| ModelError::UnknownSample {
            sample_id: record.sample_id.clone(),
        })?;
    Ok(record
        .predicted_key
        .and_then(|k| sample.option(k))
        .map(|o| &o.country))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFrequency {
    pub language: LanguageCode,
    pub layer: usize,
    pub total: usize,
    pub decodable: usize,
    pub stereotype_hits: usize,
    /// Percentage of decodable predictions naming the stereotypical
    /// country; `None` when nothing at this layer was decodable.
    pub frequency_pct: Option<f64>,
    pub undecodable_pct: f64,
}

/// Per (language, layer) share of predictions that land on the language's
/// stereotypical country.
pub fn layer_stereotype_frequency(
    dump: &LayerDump,
    dataset: &Dataset,
    stereotypes: &StereotypeMap,
) -> Result<Vec<LayerFrequency>, AnalysisError> {
    // (total, decodable, hits)
    let mut cells: BTreeMap<(LanguageCode, usize), (usize, usize, usize)> = BTreeMap::new();
    for record in &dump.records {
        let target = stereotypes.get(&record.language)?;
        let country = predicted_country(record, dataset)?;
        let cell = cells
            .entry((record.language.clone(), record.layer))
            .or_default();
        cell.0 += 1;
        if let Some(c) = country {
            cell.1 += 1;
            if c == target {
                cell.2 += 1;
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((language, layer), (total, decodable, hits))| LayerFrequency {
            language,
            layer,
            total,
            decodable,
            stereotype_hits: hits,
            frequency_pct: (decodable > 0).then(|| 100.0 * hits as f64 / decodable as f64),
            undecodable_pct: 100.0 * (total - decodable) as f64 / total as f64,
        })
        .collect())
}

/// language -> country -> [(layer, percentage of decodable predictions)].
pub type CountryFrequencies = BTreeMap<LanguageCode, BTreeMap<CountryCode, Vec<(usize, f64)>>>;

/// Prediction frequency of every dataset country per language and layer.
/// Layers where a language has no decodable prediction contribute no point.
pub fn layer_country_frequencies(
    dump: &LayerDump,
    dataset: &Dataset,
) -> Result<CountryFrequencies, AnalysisError> {
    let countries: BTreeSet<&CountryCode> = dataset
        .samples()
        .iter()
        .flat_map(|s| s.options.iter().map(|o| &o.country))
        .collect();
    let mut cells: BTreeMap<(&LanguageCode, usize), (usize, BTreeMap<&CountryCode, usize>)> =
        BTreeMap::new();
    for record in &dump.records {
        if let Some(country) = predicted_country(record, dataset)? {
            let cell = cells.entry((&record.language, record.layer)).or_default();
            cell.0 += 1;
            *cell.1.entry(country).or_insert(0) += 1;
        }
    }
    let mut out: CountryFrequencies = BTreeMap::new();
    for ((lang, layer), (decodable, hits)) in cells {
        let per_country = out.entry(lang.clone()).or_default();
        for country in &countries {
            let pct = 100.0 * hits.get(country).copied().unwrap_or(0) as f64 / decodable as f64;
            per_country
                .entry((*country).clone())
                .or_default()
                .push((layer, pct));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub language: LanguageCode,
    pub country: CountryCode,
    #[serde(flatten)]
    pub fit: LinearFit,
}

/// OLS fits of frequency (percentage points) against layer index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlopeTable {
    pub entries: Vec<SlopeEntry>,
}

impl SlopeTable {
    pub fn get(&self, language: &LanguageCode, country: &CountryCode) -> Option<&LinearFit> {
        self.entries
            .iter()
            .find(|e| &e.language == language && &e.country == country)
            .map(|e| &e.fit)
    }

    /// For each country, the language under which its slope is largest.
    pub fn argmax_language(&self) -> BTreeMap<CountryCode, LanguageCode> {
        let mut best: BTreeMap<&CountryCode, &SlopeEntry> = BTreeMap::new();
        for e in &self.entries {
            let slot = best.entry(&e.country).or_insert(e);
            if e.fit.slope > slot.fit.slope {
                *slot = e;
            }
        }
        best.into_iter()
            .map(|(c, e)| (c.clone(), e.language.clone()))
            .collect()
    }
}

/// Fits one line per (language, country).
pub fn fit_country_slopes(frequencies: &CountryFrequencies) -> Result<SlopeTable, AnalysisError> {
    let mut entries = Vec::new();
    for (language, per_country) in frequencies {
        for (country, points) in per_country {
            let xy: Vec<(f64, f64)> = points.iter().map(|&(l, f)| (l as f64, f)).collect();
            entries.push(SlopeEntry {
                language: language.clone(),
                country: country.clone(),
                fit: fit_line(&xy)?,
            });
        }
    }
    Ok(SlopeTable { entries })
}

/// Verdicts implied by one layer's predictions. Keys outside the sample's
/// options become invalid singletons, absent keys undecodable singletons.
pub fn layer_verdicts(
    dump: &LayerDump,
    dataset: &Dataset,
    layer: usize,
) -> Result<Vec<VerdictEntry>, AnalysisError> {
    dump.records
        .iter()
        .filter(|r| r.layer == layer)
        .map(|r| {
            let sample = dataset
                .sample(&r.sample_id)
                .ok_or_else(|| ModelError::UnknownSample {
                    sample_id: r.sample_id.clone(),
                })?;
            let verdict = match r.predicted_key {
                Some(key) if sample.option(key).is_some() => Verdict::Valid { key },
                Some(_) => Verdict::Singleton {
                    token: singleton_token(&r.sample_id, &r.language, None, SingletonKind::Invalid),
                },
                None => Verdict::MissingSingleton {
                    token: singleton_token(
                        &r.sample_id,
                        &r.language,
                        None,
                        SingletonKind::Undecodable,
                    ),
                },
            };
            Ok(VerdictEntry {
                sample_id: r.sample_id.clone(),
                language: r.language.clone(),
                persona: None,
                verdict,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKappa {
    pub layer: usize,
    pub group: String,
    pub kappa_s: Score,
    pub samples: usize,
    pub singletons: usize,
}

/// Singleton kappa per layer and language group.
///
/// With no groups given, one group `all` holds every dataset language that
/// occurs in the dump. Absent (group, language) cells are missing
/// singletons.
pub fn layer_wise_kappa(
    dump: &LayerDump,
    dataset: &Dataset,
    groups: &[(String, LanguageSet)],
) -> Result<Vec<LayerKappa>, AnalysisError> {
    let default_group;
    let groups = if groups.is_empty() {
        let present = dump.languages();
        let langs: Vec<LanguageCode> = dataset
            .languages()
            .iter()
            .filter(|l| present.contains(l))
            .cloned()
            .collect();
        default_group = [("all".to_string(), LanguageSet::new(langs)?)];
        &default_group[..]
    } else {
        groups
    };
    let mut out = Vec::new();
    for layer in dump.layers() {
        let entries = layer_verdicts(dump, dataset, layer)?;
        for (name, languages) in groups {
            let collation = collate_parallel(dataset, &entries, languages, MissingPolicy::Singleton)?;
            if collation.groups.is_empty() {
                continue;
            }
            let table = ContingencyTable::from_groups(&collation.groups, languages)?;
            out.push(LayerKappa {
                layer,
                group: name.clone(),
                kappa_s: singleton_fleiss_kappa(&table),
                samples: table.samples(),
                singletons: table.singleton_count(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{country, dataset, lang};

    fn header(depth: usize) -> LayerDumpHeader {
        LayerDumpHeader {
            model: "m".into(),
            depth,
            format: "logit-lens".into(),
        }
    }

    fn rec(group: &str, language: &str, layer: usize, key: Option<char>) -> LayerPredictionRecord {
        LayerPredictionRecord {
            sample_id: format!("{group}-{language}"),
            language: lang(language),
            layer,
            predicted_key: key,
        }
    }

    fn es_dataset() -> Dataset {
        let langs = LanguageSet::parse("en,es").unwrap();
        dataset(&["g1", "g2", "g3", "g4"], &langs, &["US", "MX"])
    }

    #[test]
    fn stereotype_share_at_one_layer() {
        let ds = es_dataset();
        let dump = LayerDump::new(
            header(32),
            vec![
                rec("g1", "es", 30, Some('B')),
                rec("g2", "es", 30, Some('B')),
                rec("g3", "es", 30, Some('A')),
                rec("g4", "es", 30, Some('B')),
                rec("g1", "es", 31, None),
                rec("g2", "es", 31, None),
            ],
        )
        .unwrap();
        let freqs = layer_stereotype_frequency(&dump, &ds, &StereotypeMap::default_eight()).unwrap();
        assert_eq!(freqs[0].layer, 30);
        assert_eq!(freqs[0].frequency_pct, Some(75.0));
        assert_eq!(freqs[0].undecodable_pct, 0.0);
        assert_eq!(freqs[1].frequency_pct, None);
        assert_eq!(freqs[1].undecodable_pct, 100.0);
    }

    #[test]
    fn dump_header_and_depth() {
        let text = concat!(
            r#"{"model":"m","depth":4,"format":"logit-lens"}"#,
            "\n",
            r#"{"sample_id":"g1-en","language":"en","layer":3,"predicted_key":"A"}"#,
            "\n",
            r#"{"sample_id":"g1-es","language":"es","layer":0,"predicted_key":null}"#,
            "\n"
        );
        let dump = read_layer_dump(text.as_bytes()).unwrap();
        assert_eq!(dump.header.depth, 4);
        assert_eq!(dump.records[1].predicted_key, None);
        let bad = text.replace("\"layer\":3", "\"layer\":4");
        assert!(matches!(
            read_layer_dump(bad.as_bytes()),
            Err(IngestError::Malformed { line: 2, .. })
        ));
        assert!(LayerDump::new(header(2), vec![rec("g1", "en", 2, None)]).is_err());
    }

    #[test]
    fn country_frequencies_and_slopes() {
        let ds = es_dataset();
        // MX share rises 0%, 50%, 100% over three layers
        let mut records = Vec::new();
        for (layer, mx) in [(0, 0), (1, 2), (2, 4)] {
            for (i, g) in ["g1", "g2", "g3", "g4"].iter().enumerate() {
                records.push(rec(g, "es", layer, Some(if i < mx { 'B' } else { 'A' })));
            }
        }
        let dump = LayerDump::new(header(3), records).unwrap();
        let freqs = layer_country_frequencies(&dump, &ds).unwrap();
        let table = fit_country_slopes(&freqs).unwrap();
        let mx = table.get(&lang("es"), &country("MX")).unwrap();
        assert!((mx.slope - 50.0).abs() < 1e-9);
        let us = table.get(&lang("es"), &country("US")).unwrap();
        assert!((us.slope + 50.0).abs() < 1e-9);
        assert_eq!(table.argmax_language()[&country("MX")], lang("es"));
    }

    #[test]
    fn slope_needs_two_layers() {
        let ds = es_dataset();
        let dump = LayerDump::new(header(3), vec![rec("g1", "es", 0, Some('A'))]).unwrap();
        let freqs = layer_country_frequencies(&dump, &ds).unwrap();
        assert!(matches!(fit_country_slopes(&freqs), Err(AnalysisError::TooFewPoints(1))));
    }

    #[test]
    fn layer_kappa_per_layer() {
        let ds = es_dataset();
        let mut records = Vec::new();
        for g in ["g1", "g2", "g3", "g4"] {
            records.push(rec(g, "en", 0, Some('A')));
            records.push(rec(g, "es", 0, Some('B')));
        }
        for (g, k) in [("g1", 'A'), ("g2", 'B'), ("g3", 'A'), ("g4", 'B')] {
            records.push(rec(g, "en", 1, Some(k)));
            records.push(rec(g, "es", 1, Some(k)));
        }
        let dump = LayerDump::new(header(2), records).unwrap();
        let curve = layer_wise_kappa(&dump, &ds, &[]).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].kappa_s, Score::Value(-1.0));
        assert_eq!(curve[1].kappa_s, Score::Value(1.0));
    }

    #[test]
    fn single_language_dump_is_rejected() {
        let ds = es_dataset();
        let dump = LayerDump::new(header(2), vec![rec("g1", "es", 0, Some('A'))]).unwrap();
        assert!(matches!(
            layer_wise_kappa(&dump, &ds, &[]),
            Err(AnalysisError::Model(ModelError::LanguageSetTooSmall(1)))
        ));
    }
}
