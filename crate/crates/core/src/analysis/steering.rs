//! Persona steering vectors as mean activation differences.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, IngestError};
use crate::ingest::{lines, parse_line};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    With,
    Without,
}

/// Final-token residual activation of one prompt at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub prompt_id: String,
    pub variant: Variant,
    pub layer: usize,
    pub activation: Vec<f64>,
}

pub fn read_activations<R: BufRead>(reader: R) -> Result<Vec<ActivationRecord>, IngestError> {
    lines(reader)
        .map(|item| {
            let (line, text) = item?;
            parse_line(line, &text)
        })
        .collect()
}

fn mean(rows: &[&[f64]], label: &'static str) -> Result<Vec<f64>, AnalysisError> {
    let first = rows.first().ok_or(AnalysisError::EmptyActivations(label))?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for row in rows {
        if row.len() != dim {
            return Err(AnalysisError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Componentwise `mean(with) - mean(without)`.
pub fn steering_vector(with: &[&[f64]], without: &[&[f64]]) -> Result<Vec<f64>, AnalysisError> {
    let a = mean(with, "with")?;
    let b = mean(without, "without")?;
    if a.len() != b.len() {
        return Err(AnalysisError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// One steering vector per layer. Records are split by their `variant`
/// field; `layers` restricts the output when given.
pub fn steering_by_layer(
    records: &[ActivationRecord],
    layers: Option<&[usize]>,
) -> Result<BTreeMap<usize, Vec<f64>>, AnalysisError> {
    let mut by_layer: BTreeMap<usize, (Vec<&[f64]>, Vec<&[f64]>)> = BTreeMap::new();
    for r in records {
        if layers.is_some_and(|ls| !ls.contains(&r.layer)) {
            continue;
        }
        let slot = by_layer.entry(r.layer).or_default();
        match r.variant {
            Variant::With => slot.0.push(&r.activation),
            Variant::Without => slot.1.push(&r.activation),
        }
    }
    if let Some(ls) = layers {
        for l in ls {
            by_layer.entry(*l).or_default();
        }
    }
    by_layer
        .into_iter()
        .map(|(layer, (with, without))| Ok((layer, steering_vector(&with, &without)?)))
        .collect()
}
