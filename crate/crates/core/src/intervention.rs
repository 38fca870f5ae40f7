//! Ablation by gate masking and perplexity evaluation on held-out streams.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::model::{Model, NeuronId, NeuronMask};
use crate::scalar::Scalar;
use crate::sets::{NeuronSet, Provenance};

/// `exp` of the mean token NLL over `stream`. Documents are split into
/// chunks of at most `max_seq_len` that are scored independently; the first
/// token of every chunk has no context and is not scored.
pub fn perplexity<T: Scalar>(model: &Model<T>, stream: &TokenStream, mask: Option<&NeuronMask>) -> Result<f64> {
    let (sum, count) = nll_sum(model, stream, mask)?;
    Ok((sum / count as f64).exp())
}

/// Total NLL and number of scored positions, summed in stream order.
pub fn nll_sum<T: Scalar>(model: &Model<T>, stream: &TokenStream, mask: Option<&NeuronMask>) -> Result<(f64, usize)> {
    if stream.is_empty() {
        return Err(Error::Empty("cannot evaluate perplexity on an empty stream".into()));
    }
    if let Some(short) = stream.documents().position(|d| d.len() < 2) {
        return Err(Error::Empty(format!("document {short} has fewer than 2 tokens")));
    }
    let chunks: Vec<&[u32]> = stream
        .sequences(model.spec().max_seq_len)
        .map(|(c, _)| c)
        .filter(|c| c.len() >= 2)
        .collect();
    let parts = chunks
        .par_iter()
        .map(|c| model.token_nlls(c, mask))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut count = 0;
    for nlls in &parts {
        sum += nlls.iter().sum::<f64>();
        count += nlls.len();
    }
    Ok((sum, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomControl {
    pub replicates: usize,
    pub seed: u64,
    /// Sample only from neurons outside every identified set.
    pub exclude_identified: bool,
    /// Neurons per replicate; defaults to the mean ablated set size, rounded.
    #[serde(default)]
    pub size: Option<usize>,
}

impl Default for RandomControl {
    fn default() -> Self {
        Self {
            replicates: 5,
            seed: 0,
            exclude_identified: false,
            size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    /// Named sets, one matrix row each, in order.
    pub sets: Vec<(String, NeuronSet)>,
    pub eval_labels: Vec<String>,
    pub random: Option<RandomControl>,
    /// Neurons withheld from random sampling under exclusion. Defaults to the
    /// union of `sets`.
    pub identified: Option<NeuronSet>,
}

impl InterventionSpec {
    pub fn new(sets: Vec<(String, NeuronSet)>, eval_labels: Vec<String>) -> Self {
        Self {
            sets,
            eval_labels,
            random: None,
            identified: None,
        }
    }

    pub fn with_random(mut self, random: RandomControl) -> Self {
        self.random = Some(random);
        self
    }

    pub fn validate(&self, model_fingerprint: &str) -> Result<()> {
        if self.eval_labels.is_empty() {
            return Err(Error::Config("no evaluation labels".into()));
        }
        for s in self.sets.iter().map(|(_, s)| s).chain(&self.identified) {
            if s.model_fingerprint != model_fingerprint {
                return Err(Error::FingerprintMismatch(
                    model_fingerprint.to_owned(),
                    s.model_fingerprint.clone(),
                ));
            }
        }
        if let Some(r) = &self.random {
            if r.replicates == 0 {
                return Err(Error::Config("random control needs at least one replicate".into()));
            }
        }
        Ok(())
    }

    fn random_size(&self, r: &RandomControl) -> usize {
        r.size.unwrap_or_else(|| {
            if self.sets.is_empty() {
                0
            } else {
                let total: usize = self.sets.iter().map(|(_, s)| s.len()).sum();
                (total as f64 / self.sets.len() as f64).round() as usize
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RowKind {
    Set,
    Random { replicate: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplRow {
    pub name: String,
    pub kind: RowKind,
    pub size: usize,
    /// Ablated perplexity per column.
    pub ablated: Vec<f64>,
    pub delta: Vec<f64>,
    pub ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSummary {
    pub size: usize,
    pub exclude_identified: bool,
    pub seeds: Vec<u64>,
    pub mean_ratio: Vec<f64>,
    pub max_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplMatrix {
    pub model_fingerprint: String,
    pub columns: Vec<String>,
    pub baseline: Vec<f64>,
    /// Held-out stream length per column.
    pub tokens: Vec<usize>,
    /// Scored positions per column.
    pub scored: Vec<usize>,
    pub rows: Vec<PplRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSummary>,
}

impl PplMatrix {
    pub fn row(&self, name: &str) -> Option<&PplRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn column(&self, label: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == label)
    }

    pub fn ratio(&self, row: &str, column: &str) -> Option<f64> {
        Some(self.row(row)?.ratio[self.column(column)?])
    }

    pub fn random_rows(&self) -> impl Iterator<Item = &PplRow> {
        self.rows.iter().filter(|r| matches!(r.kind, RowKind::Random { .. }))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# natlas ppl-matrix v1\nrow,column,baseline,ablated,delta,ratio,tokens\n");
        for r in &self.rows {
            for (j, c) in self.columns.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.name, c, self.baseline[j], r.ablated[j], r.delta[j], r.ratio[j], self.tokens[j]
                );
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Held-out streams in `labels` order, failing on any missing label.
fn columns<'a>(labels: &[String], holdouts: &'a BTreeMap<String, TokenStream>) -> Result<Vec<&'a TokenStream>> {
    labels
        .iter()
        .map(|l| {
            holdouts
                .get(l)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Label(format!("no held-out stream for {l:?}")))
        })
        .collect()
}

/// Uniform sample of `n` neurons without replacement, skipping `exclude`.
pub fn sample_neurons<T: Scalar>(
    model: &Model<T>,
    n: usize,
    seed: u64,
    exclude: Option<&NeuronSet>,
    model_fingerprint: &str,
) -> Result<NeuronSet> {
    let pool: Vec<NeuronId> = model
        .spec()
        .neurons()
        .filter(|&id| !exclude.is_some_and(|e| e.contains(id)))
        .collect();
    if n > pool.len() {
        return Err(Error::Config(format!(
            "cannot sample {n} neurons from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]);
    Ok(NeuronSet::new(picked, Provenance::Random, vec![], model_fingerprint))
}

struct RowPlan {
    name: String,
    kind: RowKind,
    set: NeuronSet,
}

fn evaluate<T: Scalar>(
    model: &Model<T>,
    plans: &[RowPlan],
    streams: &[&TokenStream],
    baseline: &[(f64, usize)],
) -> Result<Vec<PplRow>> {
    let masks = plans
        .iter()
        .map(|p| NeuronMask::from_neurons(model.spec(), p.set.iter()))
        .collect::<Result<Vec<_>>>()?;
    let n_cols = streams.len();
    let cells = (0..plans.len() * n_cols)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n_cols, k % n_cols);
            if masks[i].is_empty() {
                return Ok(baseline[j].0);
            }
            let (sum, count) = nll_sum(model, streams[j], Some(&masks[i]))?;
            Ok((sum / count as f64).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(plans
        .iter()
        .zip(cells.chunks(n_cols.max(1)))
        .map(|(p, ablated)| {
            let delta = ablated.iter().zip(baseline).map(|(a, b)| a - b.0).collect();
            let ratio = ablated.iter().zip(baseline).map(|(a, b)| a / b.0).collect();
            PplRow {
                name: p.name.clone(),
                kind: p.kind.clone(),
                size: p.set.len(),
                ablated: ablated.to_vec(),
                delta,
                ratio,
            }
        })
        .collect())
}

fn baselines<T: Scalar>(model: &Model<T>, streams: &[&TokenStream]) -> Result<Vec<(f64, usize)>> {
    streams
        .par_iter()
        .map(|s| nll_sum(model, s, None).map(|(sum, n)| ((sum / n as f64).exp(), n)))
        .collect()
}

fn random_plans<T: Scalar>(
    model: &Model<T>,
    n: usize,
    control: &RandomControl,
    exclude: Option<&NeuronSet>,
    fp: &str,
) -> Result<Vec<RowPlan>> {
    (0..control.replicates)
        .map(|r| {
            let seed = control.seed.wrapping_add(r as u64);
            Ok(RowPlan {
                name: format!("random/{r}"),
                kind: RowKind::Random { replicate: r, seed },
                set: sample_neurons(model, n, seed, exclude, fp)?,
            })
        })
        .collect()
}

fn summarize(rows: &[PplRow], n_cols: usize, size: usize, control: &RandomControl) -> Option<RandomSummary> {
    let random: Vec<_> = rows.iter().filter(|r| matches!(r.kind, RowKind::Random { .. })).collect();
    if random.is_empty() {
        return None;
    }
    let seeds = random
        .iter()
        .filter_map(|r| match r.kind {
            RowKind::Random { seed, .. } => Some(seed),
            RowKind::Set => None,
        })
        .collect();
    let mean_ratio = (0..n_cols)
        .map(|j| random.iter().map(|r| r.ratio[j]).sum::<f64>() / random.len() as f64)
        .collect();
    let max_ratio = (0..n_cols)
        .map(|j| random.iter().map(|r| r.ratio[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Some(RandomSummary {
        size,
        exclude_identified: control.exclude_identified,
        seeds,
        mean_ratio,
        max_ratio,
    })
}

/// One row per ablated set, then one per random replicate; one column per
/// evaluation label. Baselines are computed once and shared by all rows.
pub fn ablation_matrix<T: Scalar>(
    model: &Model<T>,
    interv: &InterventionSpec,
    holdouts: &BTreeMap<String, TokenStream>,
) -> Result<PplMatrix> {
    let fp = model.fingerprint();
    interv.validate(&fp)?;
    let streams = columns(&interv.eval_labels, holdouts)?;
    let baseline = baselines(model, &streams)?;

    let mut plans: Vec<RowPlan> = interv
        .sets
        .iter()
        .map(|(name, set)| RowPlan {
            name: name.clone(),
            kind: RowKind::Set,
            set: set.clone(),
        })
        .collect();
    let mut random_size = 0;
    if let Some(control) = &interv.random {
        random_size = interv.random_size(control);
        let exclude = if control.exclude_identified {
            Some(match &interv.identified {
                Some(s) => s.clone(),
                None => interv
                    .sets
                    .iter()
                    .try_fold(NeuronSet::empty(Provenance::Custom, &fp), |acc, (_, s)| acc.union(s))?,
            })
        } else {
            None
        };
        plans.extend(random_plans(model, random_size, control, exclude.as_ref(), &fp)?);
    }

    let rows = evaluate(model, &plans, &streams, &baseline)?;
    let random = interv
        .random
        .as_ref()
        .and_then(|c| summarize(&rows, streams.len(), random_size, c));
    Ok(PplMatrix {
        model_fingerprint: fp,
        columns: interv.eval_labels.clone(),
        baseline: baseline.iter().map(|b| b.0).collect(),
        tokens: streams.iter().map(|s| s.n_tokens()).collect(),
        scored: baseline.iter().map(|b| b.1).collect(),
        rows,
        random,
    })
}

/// Rows for `control.replicates` size-`n` random ablations alone.
pub fn random_control<T: Scalar>(
    model: &Model<T>,
    n: usize,
    control: &RandomControl,
    exclude: Option<&NeuronSet>,
    labels: &[String],
    holdouts: &BTreeMap<String, TokenStream>,
) -> Result<Vec<PplRow>> {
    let fp = model.fingerprint();
    let streams = columns(labels, holdouts)?;
    let baseline = baselines(model, &streams)?;
    let exclude = if control.exclude_identified { exclude } else { None };
    let plans = random_plans(model, n, control, exclude, &fp)?;
    evaluate(model, &plans, &streams, &baseline)
}
