//! Test-only oracles and synthetic data generators.
//!
//! Nothing here calls into the metric kernels under test: the oracle
//! enumerates rater pairs and builds marginals over explicit category
//! labels, with every singleton given its own label.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use cci_core::model::{Category, ContingencyTable, OptionEntry, Row};
use cci_core::{CountryCode, Dataset, LanguageCode, LanguageSet, McqSample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// One row of raw assignments: `Some(v)` a valid category, `None` a singleton.
pub type Assignments = Vec<Vec<Option<u8>>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random table: `rows` rows of `raters` assignments over `categories`
/// valid labels, each assignment a singleton with probability `error`.
pub fn random_assignments(
    rng: &mut impl Rng,
    rows: usize,
    raters: usize,
    categories: u8,
    error: f64,
) -> Assignments {
    (0..rows)
        .map(|_| {
            (0..raters)
                .map(|_| {
                    if rng.gen_bool(error) {
                        None
                    } else {
                        Some(rng.gen_range(0..categories))
                    }
                })
                .collect()
        })
        .collect()
}

pub fn to_table(assignments: &Assignments) -> ContingencyTable {
    let raters = assignments[0].len();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (i, row) in assignments.iter().enumerate() {
        let cats = row
            .iter()
            .enumerate()
            .map(|(l, a)| match a {
                Some(v) => Category::Valid((b'A' + v) as char),
                None => Category::Singleton(format!("r{i}-l{l}")),
            })
            .collect();
        rows.push(Row::from_assignments(cats));
        ids.push(format!("g{i}"));
    }
    ContingencyTable::new(raters, ids, rows).expect("valid random table")
}

#[derive(Debug, Clone, Copy)]
pub struct OracleAgreement {
    pub p_o: f64,
    pub p_e_all: f64,
    pub p_e_valid: f64,
    pub singletons: usize,
}

/// Brute force: ordered rater pairs for `P_o`, explicit labelled marginals
/// for `P_e`.
pub fn oracle(assignments: &Assignments) -> OracleAgreement {
    let n_rows = assignments.len();
    let raters = assignments[0].len();
    let mut agreeing = 0usize;
    let mut marginals: HashMap<String, usize> = HashMap::new();
    let mut singletons = 0;
    for (i, row) in assignments.iter().enumerate() {
        for l in 0..raters {
            for m in 0..raters {
                if l != m {
                    if let (Some(a), Some(b)) = (row[l], row[m]) {
                        if a == b {
                            agreeing += 1;
                        }
                    }
                }
            }
            let label = match row[l] {
                Some(v) => format!("valid:{v}"),
                None => {
                    singletons += 1;
                    format!("singleton:{i}:{l}")
                }
            };
            *marginals.entry(label).or_insert(0) += 1;
        }
    }
    let total = (n_rows * raters) as f64;
    let p_o = agreeing as f64 / (n_rows * raters * (raters - 1)) as f64;
    let mut p_e_all = 0.0;
    let mut p_e_valid = 0.0;
    for (label, count) in &marginals {
        let p = *count as f64 / total;
        p_e_all += p * p;
        if label.starts_with("valid:") {
            p_e_valid += p * p;
        }
    }
    OracleAgreement {
        p_o,
        p_e_all,
        p_e_valid,
        singletons,
    }
}

/// `None` when the oracle considers kappa undefined.
pub fn oracle_kappa(p_o: f64, p_e: f64) -> Option<f64> {
    (1.0 - p_e >= 1e-12).then(|| (p_o - p_e) / (1.0 - p_e))
}

pub fn lang(code: &str) -> LanguageCode {
    LanguageCode::new(code).unwrap()
}

pub fn country(code: &str) -> CountryCode {
    CountryCode::new(code).unwrap()
}

pub const EIGHT_COUNTRIES: [&str; 8] = ["US", "MX", "CN", "DZ", "ID", "KR", "GR", "IR"];

/// A parallel dataset over the eight default languages. Group `g` belongs to
/// supersample `g / subsamples_per_super`; options carry the countries
/// starting at offset `g` so different groups map keys to different
/// countries.
pub fn parallel_dataset(groups: usize, options: usize, subsamples_per_super: usize) -> Dataset {
    let languages = LanguageSet::default_eight();
    let mut samples = Vec::new();
    for g in 0..groups {
        for l in languages.iter() {
            samples.push(McqSample {
                sample_id: format!("s{g:05}-{l}"),
                supersample_id: format!("ss{:05}", g / subsamples_per_super),
                parallel_group_id: format!("g{g:05}"),
                language: l.clone(),
                question: format!("[{l}] question {g}"),
                options: (0..options)
                    .map(|k| OptionEntry {
                        key: (b'A' + k as u8) as char,
                        text: format!("[{l}] answer {g}/{k}"),
                        country: country(EIGHT_COUNTRIES[(g + k) % 8]),
                    })
                    .collect(),
            });
        }
    }
    Dataset::new(samples, languages).expect("synthetic dataset")
}

/// Count of each valid key in a group, recomputed from scratch.
pub fn recount(verdicts: &BTreeMap<LanguageCode, cci_core::Verdict>) -> BTreeMap<char, usize> {
    let mut out = BTreeMap::new();
    for v in verdicts.values() {
        if let cci_core::Verdict::Valid { key } = v {
            *out.entry(*key).or_insert(0) += 1;
        }
    }
    out
}

/// Responses over a [`parallel_dataset`]: each group has a latent answer,
/// language `i` diverges from it with probability `0.05 + 0.05 * i`, and
/// any response is unparseable with probability `singleton_rate`. Outputs
/// alternate between JSON, bare keys and option text.
pub fn synthetic_responses(
    dataset: &Dataset,
    seed: u64,
    singleton_rate: f64,
) -> cci_core::ingest::ResponseLog {
    let mut rng = rng(seed);
    let mut records = Vec::new();
    let languages: Vec<LanguageCode> = dataset.languages().iter().cloned().collect();
    for group in dataset.groups() {
        let first = dataset.group_sample(group, &languages[0]).unwrap();
        let options = first.options.len();
        let latent = rng.gen_range(0..options);
        for (i, lang) in languages.iter().enumerate() {
            let sample = dataset.group_sample(group, lang).unwrap();
            let raw = if rng.gen_bool(singleton_rate) {
                "I would rather not pick one of these.".to_string()
            } else {
                let k = if rng.gen_bool(0.05 + 0.05 * i as f64) {
                    (latent + rng.gen_range(1..options)) % options
                } else {
                    latent
                };
                let opt = &sample.options[k];
                match rng.gen_range(0..3) {
                    0 => format!(r#"{{"answer_choice": "{}"}}"#, opt.key),
                    1 => opt.key.to_string(),
                    _ => format!("  {}  ", opt.text.to_uppercase()),
                }
            };
            records.push(cci_core::ResponseRecord {
                sample_id: sample.sample_id.clone(),
                language: lang.clone(),
                persona_country: None,
                raw_output: raw,
            });
        }
    }
    cci_core::ingest::ResponseLog {
        metadata: Default::default(),
        records,
    }
}
