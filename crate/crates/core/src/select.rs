//! Lowest-entropy selection of label-specific neurons.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::LabelKind;
use crate::entropy::Scores;
use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::sets::{NeuronSet, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Share of all neurons in the model to keep, in `(0, 1]`.
    pub fraction: f64,
    /// Minimum firing probability, for eligibility and label assignment.
    pub activation_floor: f64,
    pub kind: LabelKind,
    /// Keep every eligible neuron scoring at most this value instead of
    /// applying `fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_override: Option<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            activation_floor: 0.9,
            kind: LabelKind::Language,
            tau_override: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction must be in (0, 1], got {}", self.fraction)));
        }
        if !(0.0..=1.0).contains(&self.activation_floor) {
            return Err(Error::Config(format!(
                "activation floor must be in [0, 1], got {}",
                self.activation_floor
            )));
        }
        if let Some(t) = self.tau_override {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("tau must be a non-negative number, got {t}")));
            }
        }
        Ok(())
    }
}

/// `ceil(fraction * total)`, forgiving float representation error so that
/// e.g. `0.03 * 1000` yields 30.
pub fn target_size(fraction: f64, total: usize) -> usize {
    let x = fraction * total as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub model_fingerprint: String,
    pub config: SelectionConfig,
    /// Entropy of the last selected neuron; `None` when nothing was selected.
    pub tau: Option<f64>,
    pub target_size: usize,
    pub union_size: usize,
    pub counts: BTreeMap<String, usize>,
    pub sets: BTreeMap<String, Vec<NeuronId>>,
}

impl SelectionResult {
    pub fn neuron_set(&self, label: &str) -> Option<NeuronSet> {
        let provenance = match self.config.kind {
            LabelKind::Language => Provenance::Language,
            LabelKind::Culture => Provenance::Culture,
        };
        self.sets.get(label).map(|ids| {
            NeuronSet::new(
                ids.iter().copied(),
                provenance,
                vec![label.to_owned()],
                &self.model_fingerprint,
            )
        })
    }

    pub fn neuron_sets(&self) -> BTreeMap<String, NeuronSet> {
        self.sets
            .keys()
            .map(|l| (l.clone(), self.neuron_set(l).expect("key exists")))
            .collect()
    }
}

/// Candidates are live neurons whose largest firing probability reaches the
/// floor. The `ceil(fraction * n_neurons)` lowest scores win, ties broken by
/// `(layer, index)`; each winner joins every label at or above the floor.
/// An empty candidate pool yields an empty result.
pub fn select(scores: &Scores, config: &SelectionConfig) -> Result<SelectionResult> {
    config.validate()?;
    if scores.records.is_empty() {
        return Err(Error::Empty("no entropy records".into()));
    }
    let floor = config.activation_floor;
    let mut candidates: Vec<_> = scores
        .records
        .iter()
        .filter(|r| !r.dead && r.max_prob() >= floor)
        .collect();
    candidates.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.neuron.cmp(&b.neuron)));

    let target = target_size(config.fraction, scores.records.len());
    let chosen: Vec<_> = match config.tau_override {
        Some(t) => candidates.into_iter().take_while(|r| r.score <= t).collect(),
        None => candidates.into_iter().take(target).collect(),
    };

    let mut sets: BTreeMap<String, Vec<NeuronId>> =
        scores.labels.iter().map(|l| (l.clone(), Vec::new())).collect();
    let mut union = BTreeSet::new();
    for r in &chosen {
        for (label, &p) in scores.labels.iter().zip(&r.raw_probs) {
            if p >= floor {
                sets.get_mut(label).expect("label present").push(r.neuron);
                union.insert(r.neuron);
            }
        }
    }
    sets.values_mut().for_each(|v| v.sort_unstable());
    Ok(SelectionResult {
        model_fingerprint: scores.model_fingerprint.clone(),
        config: config.clone(),
        tau: chosen.last().map(|r| r.score),
        target_size: target,
        union_size: union.len(),
        counts: sets.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        sets,
    })
}
