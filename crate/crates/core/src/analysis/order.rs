//! Consistency as languages join the pool in resource order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::metrics::{MetricKind, Score};
use crate::model::{ContingencyTable, LanguageCode, LanguageSet, VerdictGroup};

/// Languages ordered by their share of a web-crawl corpus, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<LanguageCode, f64>", into = "BTreeMap<LanguageCode, f64>")]
pub struct ResourceRanking(Vec<(LanguageCode, f64)>);

impl ResourceRanking {
    /// Accepts entries in any order; shares must be distinct and nonnegative.
    pub fn new(mut entries: Vec<(LanguageCode, f64)>) -> Result<Self, AnalysisError> {
        if let Some((lang, share)) = entries.iter().find(|(_, s)| !s.is_finite() || *s < 0.0) {
            return Err(AnalysisError::BadRanking(format!("{lang} has share {share}")));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        if let Some(w) = entries.windows(2).find(|w| w[0].1 <= w[1].1) {
            return Err(AnalysisError::BadRanking(format!(
                "{} and {} share {}",
                w[0].0, w[1].0, w[0].1
            )));
        }
        Ok(Self(entries))
    }

    /// Crawl shares (percent) that are publicly stated for three of the
    /// default languages; the rest must come from configuration.
    pub fn known_shares() -> Self {
        let entries = [("es", 4.47), ("id", 1.01), ("fa", 0.88)]
            .into_iter()
            .map(|(l, s)| (LanguageCode::new(l).expect("static code"), s))
            .collect();
        Self::new(entries).expect("static ranking")
    }

    pub fn entries(&self) -> &[(LanguageCode, f64)] {
        &self.0
    }

    /// Configured languages in the requested order.
    pub fn order(
        &self,
        languages: &LanguageSet,
        direction: Direction,
    ) -> Result<Vec<LanguageCode>, AnalysisError> {
        if let Some(missing) = languages
            .iter()
            .find(|l| !self.0.iter().any(|(r, _)| r == *l))
        {
            return Err(AnalysisError::RankingIncomplete(missing.to_string()));
        }
        let mut ordered: Vec<LanguageCode> = self
            .0
            .iter()
            .filter(|(l, _)| languages.contains(l))
            .map(|(l, _)| l.clone())
            .collect();
        if direction == Direction::LowerToHigher {
            ordered.reverse();
        }
        Ok(ordered)
    }
}

impl TryFrom<BTreeMap<LanguageCode, f64>> for ResourceRanking {
    type Error = AnalysisError;
    fn try_from(value: BTreeMap<LanguageCode, f64>) -> Result<Self, Self::Error> {
        Self::new(value.into_iter().collect())
    }
}

impl From<ResourceRanking> for BTreeMap<LanguageCode, f64> {
    fn from(value: ResourceRanking) -> Self {
        value.0.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherToLower,
    LowerToHigher,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high2low" => Ok(Self::HigherToLower),
            "low2high" => Ok(Self::LowerToHigher),
            other => Err(format!("unknown direction {other:?} (high2low|low2high)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub pool_size: usize,
    pub languages: Vec<LanguageCode>,
    pub value: Score,
}

/// Metric over the first `k` ranked languages for `k = 2..=n`.
///
/// `groups` must already be collated over the full language set.
pub fn incremental_consistency(
    groups: &[VerdictGroup],
    languages: &LanguageSet,
    ranking: &ResourceRanking,
    direction: Direction,
    metric: MetricKind,
) -> Result<Vec<CurvePoint>, AnalysisError> {
    let order = ranking.order(languages, direction)?;
    let mut curve = Vec::with_capacity(order.len().saturating_sub(1));
    for k in 2..=order.len() {
        let pool = LanguageSet::new(order[..k].to_vec())?;
        let restricted: Vec<VerdictGroup> = groups.iter().map(|g| g.restrict(&order[..k])).collect();
        let table = ContingencyTable::from_groups(&restricted, &pool)?;
        curve.push(CurvePoint {
            pool_size: k,
            languages: order[..k].to_vec(),
            value: metric.compute(&table),
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::lang;
    use crate::model::Verdict;

    fn ranking(pairs: &[(&str, f64)]) -> ResourceRanking {
        ResourceRanking::new(pairs.iter().map(|(l, s)| (lang(l), *s)).collect()).unwrap()
    }

    #[test]
    fn known_shares_order() {
        let r = ResourceRanking::known_shares();
        let langs = LanguageSet::parse("fa,id,es").unwrap();
        let order = r.order(&langs, Direction::HigherToLower).unwrap();
        assert_eq!(order, vec![lang("es"), lang("id"), lang("fa")]);
        let rev = r.order(&langs, Direction::LowerToHigher).unwrap();
        assert_eq!(rev, vec![lang("fa"), lang("id"), lang("es")]);
    }

    #[test]
    fn ranking_validation() {
        assert!(ResourceRanking::new(vec![(lang("en"), -1.0)]).is_err());
        assert!(ResourceRanking::new(vec![(lang("en"), 1.0), (lang("es"), 1.0)]).is_err());
        let r = ranking(&[("en", 40.0), ("es", 4.47)]);
        let langs = LanguageSet::parse("en,es,fa").unwrap();
        assert_eq!(
            r.order(&langs, Direction::HigherToLower),
            Err(AnalysisError::RankingIncomplete("fa".into()))
        );
        let json: ResourceRanking = serde_json::from_str(r#"{"fa":0.88,"es":4.47}"#).unwrap();
        assert_eq!(json.entries()[0].0, lang("es"));
    }

    #[test]
    fn endpoints_agree() {
        let langs = LanguageSet::parse("en,es,fa").unwrap();
        let r = ranking(&[("en", 40.0), ("es", 4.47), ("fa", 0.88)]);
        let mk = |id: &str, keys: [char; 3]| VerdictGroup {
            parallel_group_id: id.into(),
            verdicts: langs
                .iter()
                .zip(keys)
                .map(|(l, k)| (l.clone(), Verdict::Valid { key: k }))
                .collect(),
        };
        let groups = vec![mk("g1", ['A', 'A', 'B']), mk("g2", ['B', 'B', 'B']), mk("g3", ['A', 'C', 'A'])];
        for metric in [MetricKind::KappaS, MetricKind::Soft, MetricKind::Hard, MetricKind::Mode] {
            let hi = incremental_consistency(&groups, &langs, &r, Direction::HigherToLower, metric).unwrap();
            let lo = incremental_consistency(&groups, &langs, &r, Direction::LowerToHigher, metric).unwrap();
            assert_eq!(hi.len(), 2);
            assert_eq!(hi.last().unwrap().value, lo.last().unwrap().value);
            assert_eq!(hi[0].languages, vec![lang("en"), lang("es")]);
        }
    }
}
