//! Activation-probability entropy.
//!
//! A neuron's firing probabilities across labels are normalized into a
//! distribution; its score is the Shannon entropy (natural log) of that
//! distribution. Low scores mean the neuron fires for few labels.

use num_traits::Float;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::stats::StatsTable;

/// Divides by the sum. `None` when every entry is zero (a dead neuron).
pub fn normalize<T: Float>(raw: &[T]) -> Option<Vec<T>> {
    let sum = raw.iter().fold(T::zero(), |acc, &p| acc + p);
    if sum <= T::zero() {
        return None;
    }
    Some(raw.iter().map(|&p| p / sum).collect())
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy<T: Float>(dist: &[T]) -> T {
    dist.iter()
        .filter(|&&p| p > T::zero())
        .fold(T::zero(), |acc, &p| acc - p * p.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRecord {
    pub neuron: NeuronId,
    pub raw_probs: Vec<f64>,
    /// Empty for dead neurons.
    pub normalized: Vec<f64>,
    /// `+inf` for dead neurons.
    pub score: f64,
    pub dead: bool,
}

impl EntropyRecord {
    pub fn from_probs(neuron: NeuronId, raw_probs: Vec<f64>) -> Self {
        match normalize(&raw_probs) {
            Some(normalized) => Self {
                neuron,
                score: entropy(&normalized),
                raw_probs,
                normalized,
                dead: false,
            },
            None => Self {
                neuron,
                raw_probs,
                normalized: Vec::new(),
                score: f64::INFINITY,
                dead: true,
            },
        }
    }

    pub fn max_prob(&self) -> f64 {
        self.raw_probs.iter().copied().fold(0.0, f64::max)
    }
}

/// Entropy records for every neuron of a table, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub labels: Vec<String>,
    pub model_fingerprint: String,
    pub records: Vec<EntropyRecord>,
}

pub fn score_all(table: &StatsTable, labels: &[String]) -> Result<Scores> {
    if labels.is_empty() {
        return Err(Error::Empty("label subset for scoring".into()));
    }
    let idx = labels
        .iter()
        .map(|l| {
            let i = table.label_index(l)?;
            if table.token_count(i) == 0 {
                Err(Error::ZeroTokenCount(l.clone()))
            } else {
                Ok(i)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let d_ff = table.d_ff();
    let records = (0..table.n_layers() * d_ff)
        .into_par_iter()
        .map(|flat| {
            let n = NeuronId::new(flat / d_ff, flat % d_ff);
            EntropyRecord::from_probs(n, table.probabilities_at(&idx, n))
        })
        .collect();
    Ok(Scores {
        labels: labels.to_vec(),
        model_fingerprint: table.model_fingerprint().to_owned(),
        records,
    })
}
