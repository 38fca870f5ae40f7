//! Per-label activation counts.
//!
//! For every label and neuron the table holds how many counted positions
//! had a positive gate activation, plus how many positions were counted.
//! Counts are exact integers, so tables built over any partition of the
//! same documents merge to the same result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container::{Container, Tensor, TensorData};
use crate::corpus::{LabelKind, TokenStream};
use crate::error::{Error, Result};
use crate::model::{Model, NeuronId};
use crate::scalar::Scalar;

const FORMAT: &str = "natlas-stats";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsTable {
    meta: StatsMeta,
    /// `[label][layer][neuron]`, row-major.
    pos_counts: Vec<u64>,
    token_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StatsMeta {
    kind: LabelKind,
    labels: Vec<String>,
    n_layers: usize,
    d_ff: usize,
    model_fingerprint: String,
    tokenizer_fingerprint: String,
}

impl StatsTable {
    pub fn new(
        kind: LabelKind,
        labels: Vec<String>,
        n_layers: usize,
        d_ff: usize,
        model_fingerprint: impl Into<String>,
        tokenizer_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Label("a stats table needs at least one label".into()));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Label(format!("duplicate label in {labels:?}")));
        }
        let meta = StatsMeta {
            kind,
            n_layers,
            d_ff,
            model_fingerprint: model_fingerprint.into(),
            tokenizer_fingerprint: tokenizer_fingerprint.into(),
            labels,
        };
        if meta.model_fingerprint.is_empty() || meta.tokenizer_fingerprint.is_empty() {
            return Err(Error::Config("stats table fingerprints must be present".into()));
        }
        Ok(Self {
            pos_counts: vec![0; meta.labels.len() * n_layers * d_ff],
            token_counts: vec![0; meta.labels.len()],
            meta,
        })
    }

    /// Empty table shaped for `model`.
    pub fn for_model<T: Scalar>(
        model: &Model<T>,
        kind: LabelKind,
        labels: Vec<String>,
        tokenizer_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let spec = model.spec();
        Self::new(
            kind,
            labels,
            spec.n_layers,
            spec.d_ff,
            model.fingerprint(),
            tokenizer_fingerprint,
        )
    }

    pub fn kind(&self) -> LabelKind {
        self.meta.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.meta.labels
    }

    pub fn n_layers(&self) -> usize {
        self.meta.n_layers
    }

    pub fn d_ff(&self) -> usize {
        self.meta.d_ff
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.meta.model_fingerprint
    }

    pub fn tokenizer_fingerprint(&self) -> &str {
        &self.meta.tokenizer_fingerprint
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.meta
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Label(format!("label {label:?} not registered")))
    }

    pub fn token_count(&self, label: usize) -> u64 {
        self.token_counts[label]
    }

    pub fn pos_count(&self, label: usize, neuron: NeuronId) -> u64 {
        self.pos_counts[self.offset(label, neuron)]
    }

    fn offset(&self, label: usize, n: NeuronId) -> usize {
        (label * self.meta.n_layers + n.layer) * self.meta.d_ff + n.index
    }

    fn check_neuron(&self, n: NeuronId) -> Result<()> {
        if n.layer < self.meta.n_layers && n.index < self.meta.d_ff {
            Ok(())
        } else {
            Err(Error::NeuronOutOfBounds {
                neuron: n,
                n_layers: self.meta.n_layers,
                d_ff: self.meta.d_ff,
            })
        }
    }

    /// Empirical firing probability `pos_count / token_count`.
    pub fn probability(&self, label: &str, neuron: NeuronId) -> Result<f64> {
        let li = self.label_index(label)?;
        self.check_neuron(neuron)?;
        let total = self.token_counts[li];
        if total == 0 {
            return Err(Error::ZeroTokenCount(label.to_owned()));
        }
        Ok(self.pos_count(li, neuron) as f64 / total as f64)
    }

    /// Firing probabilities of `neuron` for the given label indices.
    pub(crate) fn probabilities_at(&self, labels: &[usize], neuron: NeuronId) -> Vec<f64> {
        labels
            .iter()
            .map(|&l| self.pos_count(l, neuron) as f64 / self.token_counts[l] as f64)
            .collect()
    }

    /// Counts the gate signs of `stream` under `label`. The first position of
    /// every document (its start marker) is not counted.
    pub fn accumulate<T: Scalar>(&mut self, model: &Model<T>, stream: &TokenStream, label: &str) -> Result<()> {
        let li = self.label_index(label)?;
        let spec = model.spec();
        if spec.n_layers != self.meta.n_layers || spec.d_ff != self.meta.d_ff {
            return Err(Error::ShapeMismatch {
                name: "stats table".into(),
                expected: vec![spec.n_layers, spec.d_ff],
                actual: vec![self.meta.n_layers, self.meta.d_ff],
            });
        }
        if stream.is_empty() {
            return Err(Error::Empty(format!("token stream for label {label:?}")));
        }
        if let Some(max) = stream.max_id() {
            if max as usize >= spec.vocab_size {
                return Err(Error::Corpus(format!(
                    "stream for {label:?} uses id {max} but the model vocabulary has {} entries",
                    spec.vocab_size
                )));
            }
        }

        let width = spec.n_layers * spec.d_ff;
        let d_ff = spec.d_ff;
        let sequences: Vec<_> = stream.sequences(spec.max_seq_len).collect();
        let (counts, tokens) = sequences
            .par_iter()
            .try_fold(
                || (vec![0u64; width], 0u64),
                |(mut counts, mut tokens), &(seq, opens_doc)| {
                    let skip = usize::from(opens_doc);
                    let mut sink = |pos: usize, layer: usize, active: &[bool]| {
                        if pos >= skip {
                            let row = &mut counts[layer * d_ff..(layer + 1) * d_ff];
                            row.iter_mut().zip(active).for_each(|(c, &a)| *c += u64::from(a));
                        }
                    };
                    model.capture(seq, &mut sink)?;
                    tokens += (seq.len() - skip.min(seq.len())) as u64;
                    Ok::<_, Error>((counts, tokens))
                },
            )
            .try_reduce(
                || (vec![0u64; width], 0u64),
                |(mut a, ta), (b, tb)| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    Ok((a, ta + tb))
                },
            )?;

        let base = li * width;
        self.pos_counts[base..base + width]
            .iter_mut()
            .zip(&counts)
            .for_each(|(x, y)| *x += y);
        self.token_counts[li] += tokens;
        Ok(())
    }

    /// Elementwise sum; both tables must describe the same model, tokenizer
    /// and label set.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.meta.model_fingerprint != other.meta.model_fingerprint {
            return Err(Error::FingerprintMismatch(
                self.meta.model_fingerprint.clone(),
                other.meta.model_fingerprint.clone(),
            ));
        }
        if self.meta.tokenizer_fingerprint != other.meta.tokenizer_fingerprint {
            return Err(Error::FingerprintMismatch(
                self.meta.tokenizer_fingerprint.clone(),
                other.meta.tokenizer_fingerprint.clone(),
            ));
        }
        if self.meta != other.meta {
            return Err(Error::Label(format!(
                "cannot merge tables over {:?} and {:?}",
                self.meta.labels, other.meta.labels
            )));
        }
        let add = |a: &[u64], b: &[u64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Self {
            meta: self.meta.clone(),
            pos_counts: add(&self.pos_counts, &other.pos_counts),
            token_counts: add(&self.token_counts, &other.token_counts),
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut header = match serde_json::to_value(&self.meta)? {
            Value::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        };
        header.insert("format".into(), Value::from(FORMAT));
        let n = self.meta.labels.len();
        Ok(Container {
            header,
            tensors: vec![
                (
                    "pos_counts".into(),
                    Tensor::u64(vec![n, self.meta.n_layers, self.meta.d_ff], self.pos_counts.clone()),
                ),
                ("token_counts".into(), Tensor::u64(vec![n], self.token_counts.clone())),
            ],
        })
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        match c.header.get("format").and_then(Value::as_str) {
            Some(FORMAT) => {}
            other => return Err(Error::Format(format!("not a stats container (format {other:?})"))),
        }
        let meta: StatsMeta = serde_json::from_value(Value::Object(c.header.clone()))?;
        let mut table = Self::new(
            meta.kind,
            meta.labels,
            meta.n_layers,
            meta.d_ff,
            meta.model_fingerprint,
            meta.tokenizer_fingerprint,
        )?;
        let n = table.meta.labels.len();
        let mut take = |name: &str, shape: Vec<usize>| -> Result<Vec<u64>> {
            let t = c.take_tensor(name)?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: name.into(),
                    expected: shape,
                    actual: t.shape,
                });
            }
            match t.data {
                TensorData::U64(v) => Ok(v),
                TensorData::F32(_) => Err(Error::Format(format!("{name} must be u64"))),
            }
        };
        table.pos_counts = take("pos_counts", vec![n, table.meta.n_layers, table.meta.d_ff])?;
        table.token_counts = take("token_counts", vec![n])?;
        let width = table.meta.n_layers * table.meta.d_ff;
        for (li, &total) in table.token_counts.iter().enumerate() {
            if table.pos_counts[li * width..(li + 1) * width].iter().any(|&c| c > total) {
                return Err(Error::Format(format!(
                    "label {:?} has a positive count above its token count",
                    table.meta.labels[li]
                )));
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }
}

/// A fresh table over `labels` holding the counts of one labeled stream.
pub fn accumulate<T: Scalar>(
    model: &Model<T>,
    stream: &TokenStream,
    kind: LabelKind,
    labels: Vec<String>,
    label: &str,
    tokenizer_fingerprint: &str,
) -> Result<StatsTable> {
    let mut table = StatsTable::for_model(model, kind, labels, tokenizer_fingerprint)?;
    table.accumulate(model, stream, label)?;
    Ok(table)
}
