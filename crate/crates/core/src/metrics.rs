//! Agreement and consistency metrics over a [`ContingencyTable`].
//!
//! All agreement sums are accumulated as exact integers and divided once, so
//! two tables with the same count structure produce bit-identical values
//! regardless of row order or singleton token names.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Category, ContingencyTable, Row};

/// Below this value of `1 - P_e` kappa is reported as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// A metric value that may be undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    /// Chance agreement is 1 and kappa is undefined.
    Degenerate,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Score::Degenerate)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v:.4}"),
            Score::Degenerate => f.write_str("degenerate"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Value(v) => serializer.serialize_f64(*v),
            Score::Degenerate => serializer.serialize_str("degenerate"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScoreVisitor;
        impl Visitor<'_> for ScoreVisitor {
            type Value = Score;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"degenerate\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Score, E> {
                Ok(Score::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Score, E> {
                Ok(Score::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Score, E> {
                Ok(Score::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Score, E> {
                if v == "degenerate" {
                    Ok(Score::Degenerate)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        deserializer.deserialize_any(ScoreVisitor)
    }
}

/// Exact integer sums behind `P_o` and `P_e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgreementSums {
    pub samples: u64,
    pub raters: u64,
    /// `sum_i sum_j n_ij (n_ij - 1)` over every category.
    pub pair_sum: u64,
    /// `sum_v c_v^2` where `c_v` is the marginal count of valid category `v`.
    pub valid_square_sum: u128,
    /// `M_U`, the number of singleton assignments.
    pub singletons: u64,
}

impl AgreementSums {
    /// Accumulates sums over rows with `raters` assignments each.
    ///
    /// Every singleton occurrence is its own category, so it adds exactly
    /// 1 to the squared-marginal sum; table construction guarantees this.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a Row>, raters: usize) -> Self {
        let mut samples = 0u64;
        let mut pair_sum = 0u64;
        let mut singletons = 0u64;
        let mut marginals: BTreeMap<char, u64> = BTreeMap::new();
        for row in rows {
            samples += 1;
            for (cat, &count) in row.counts() {
                let count = count as u64;
                pair_sum += count * (count - 1);
                match cat {
                    Category::Valid(key) => *marginals.entry(*key).or_insert(0) += count,
                    Category::Singleton(_) => singletons += count,
                }
            }
        }
        let valid_square_sum = marginals.values().map(|&c| (c as u128) * (c as u128)).sum();
        Self {
            samples,
            raters: raters as u64,
            pair_sum,
            valid_square_sum,
            singletons,
        }
    }

    pub fn from_table(table: &ContingencyTable) -> Self {
        Self::from_rows(table.rows(), table.raters())
    }

    fn assignments(&self) -> f64 {
        (self.samples * self.raters) as f64
    }

    /// Observed agreement; identical over `V'` and `V` because singleton
    /// pairs vanish.
    pub fn observed(&self) -> f64 {
        let denom = self.samples * self.raters * (self.raters - 1);
        self.pair_sum as f64 / denom as f64
    }

    /// Expected agreement over `V' = V ∪ U`.
    pub fn expected_singleton(&self) -> f64 {
        let total = self.assignments();
        (self.valid_square_sum + self.singletons as u128) as f64 / (total * total)
    }

    /// Expected agreement over valid categories with the full `N·n`
    /// denominator.
    pub fn expected_valid(&self) -> f64 {
        let total = self.assignments();
        self.valid_square_sum as f64 / (total * total)
    }

    pub fn kappa_singleton(&self) -> Score {
        kappa(self.observed(), self.expected_singleton())
    }

    pub fn kappa_valid(&self) -> Score {
        kappa(self.observed(), self.expected_valid())
    }
}

/// `(P_o - P_e) / (1 - P_e)`, or degenerate when `1 - P_e` vanishes.
pub fn kappa(observed: f64, expected: f64) -> Score {
    let denom = 1.0 - expected;
    if denom < DEGENERATE_EPS {
        Score::Degenerate
    } else {
        Score::Value((observed - expected) / denom)
    }
}

/// Singleton Fleiss kappa over the extended category space.
pub fn singleton_fleiss_kappa(table: &ContingencyTable) -> Score {
    AgreementSums::from_table(table).kappa_singleton()
}

/// Fleiss kappa over valid categories only, keeping the `N·n` denominator
/// (singleton assignments count towards the total but carry no category).
pub fn fleiss_kappa_valid(table: &ContingencyTable) -> Score {
    AgreementSums::from_table(table).kappa_valid()
}

/// Classic Fleiss kappa on the rows that contain no singleton at all.
pub fn fleiss_kappa_valid_renormalized(table: &ContingencyTable) -> Score {
    match table.singleton_free() {
        Some(sub) => AgreementSums::from_table(&sub).kappa_valid(),
        None => Score::Degenerate,
    }
}

fn agree(a: &Category, b: &Category) -> bool {
    !a.is_singleton() && a == b
}

/// Mean pairwise agreement across raters, enumerating every pair.
pub fn soft_consistency(table: &ContingencyTable) -> f64 {
    let n = table.raters() as u64;
    let mut agreeing = 0u64;
    for row in table.rows() {
        let a = row.assignments();
        for l in 0..a.len() {
            for m in (l + 1)..a.len() {
                if agree(&a[l], &a[m]) {
                    agreeing += 1;
                }
            }
        }
    }
    let denom = table.samples() as u64 * n * (n - 1);
    (2 * agreeing) as f64 / denom as f64
}

/// Fraction of rows where every rater gave the same valid answer.
pub fn hard_consistency(table: &ContingencyTable) -> f64 {
    let unanimous = table
        .rows()
        .iter()
        .filter(|row| row.assignments().windows(2).all(|w| agree(&w[0], &w[1])))
        .count();
    unanimous as f64 / table.samples() as f64
}

/// Mean share of the most frequent answer per row.
pub fn mode_frequency(table: &ContingencyTable) -> f64 {
    let total: usize = table
        .rows()
        .iter()
        .map(|row| row.counts().values().copied().max().unwrap_or(0))
        .sum();
    total as f64 / (table.samples() * table.raters()) as f64
}

/// Singleton assignments over all `N·n` assignments.
pub fn error_rate(table: &ContingencyTable) -> f64 {
    table.singleton_count() as f64 / (table.samples() * table.raters()) as f64
}

/// Gap between singleton and valid expected agreement, and the value the
/// singleton marginals predict for it, `M_U / (N·n)^2`.
pub fn convergence_gap(table: &ContingencyTable) -> (f64, f64) {
    let sums = AgreementSums::from_table(table);
    let gap = sums.expected_singleton() - sums.expected_valid();
    let total = sums.assignments();
    (gap, sums.singletons as f64 / (total * total))
}

/// Every metric for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kappa_s: Score,
    pub kappa_valid: Score,
    pub soft: f64,
    pub hard: f64,
    pub mode_freq: f64,
    pub error_rate: f64,
    pub p_o: f64,
    pub p_e_s: f64,
    pub p_e_valid: f64,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "n")]
    pub raters: usize,
}

impl MetricReport {
    pub fn from_table(table: &ContingencyTable) -> Self {
        let sums = AgreementSums::from_table(table);
        Self {
            kappa_s: sums.kappa_singleton(),
            kappa_valid: sums.kappa_valid(),
            soft: soft_consistency(table),
            hard: hard_consistency(table),
            mode_freq: mode_frequency(table),
            error_rate: error_rate(table),
            p_o: sums.observed(),
            p_e_s: sums.expected_singleton(),
            p_e_valid: sums.expected_valid(),
            samples: table.samples(),
            raters: table.raters(),
        }
    }
}

/// Metric selector for curves and sliced reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    KappaS,
    KappaValid,
    Soft,
    Hard,
    Mode,
    Error,
}

impl MetricKind {
    pub fn compute(self, table: &ContingencyTable) -> Score {
        match self {
            MetricKind::KappaS => singleton_fleiss_kappa(table),
            MetricKind::KappaValid => fleiss_kappa_valid(table),
            MetricKind::Soft => Score::Value(soft_consistency(table)),
            MetricKind::Hard => Score::Value(hard_consistency(table)),
            MetricKind::Mode => Score::Value(mode_frequency(table)),
            MetricKind::Error => Score::Value(error_rate(table)),
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kappa-s" | "kappa_s" => Ok(Self::KappaS),
            "kappa-valid" | "kappa_valid" => Ok(Self::KappaValid),
            "soft" => Ok(Self::Soft),
            "hard" => Ok(Self::Hard),
            "mode" => Ok(Self::Mode),
            "error" => Ok(Self::Error),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}
