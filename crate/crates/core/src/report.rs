//! Plot-ready summaries of neuron sets and ablation results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::PplMatrix;
use crate::sets::{NeuronSet, SetCatalog};

/// Neurons of `set` per layer.
pub fn layer_counts(set: &NeuronSet, n_layers: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; n_layers];
    for n in set.iter() {
        *counts
            .get_mut(n.layer)
            .ok_or(Error::LayerOutOfBounds { neuron: n, n_layers })? += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub n_layers: usize,
    /// `category -> label -> per-layer counts`.
    pub counts: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
    /// Per-layer sum over labels; a neuron shared by two labels counts twice.
    pub totals: BTreeMap<String, Vec<usize>>,
    /// Per-layer size of the union over labels.
    pub union: BTreeMap<String, Vec<usize>>,
}

/// Histograms for named sets grouped by category.
pub fn layer_histogram<'a, I>(sets: I, n_layers: usize) -> Result<LayerHistogram>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a NeuronSet)>,
{
    let mut counts: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    let mut unions: BTreeMap<String, NeuronSet> = BTreeMap::new();
    for (category, label, set) in sets {
        counts
            .entry(category.to_owned())
            .or_default()
            .insert(label.to_owned(), layer_counts(set, n_layers)?);
        let u = match unions.remove(category) {
            Some(u) => u.union(set)?,
            None => set.clone(),
        };
        unions.insert(category.to_owned(), u);
    }
    let totals = counts
        .iter()
        .map(|(cat, by_label)| {
            let mut t = vec![0; n_layers];
            for c in by_label.values() {
                t.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            }
            (cat.clone(), t)
        })
        .collect();
    let union = unions
        .iter()
        .map(|(cat, u)| Ok((cat.clone(), layer_counts(u, n_layers)?)))
        .collect::<Result<_>>()?;
    Ok(LayerHistogram {
        n_layers,
        counts,
        totals,
        union,
    })
}

impl LayerHistogram {
    /// Language, culture and pure sets of a catalog.
    pub fn from_catalog(catalog: &SetCatalog, n_layers: usize) -> Result<Self> {
        let sets = [
            ("language", &catalog.language),
            ("culture", &catalog.culture),
            ("pure", &catalog.pure),
        ]
        .into_iter()
        .flat_map(|(cat, map)| map.iter().map(move |(l, s)| (cat, l.as_str(), s)));
        let mut h = layer_histogram(sets, n_layers)?;
        for cat in ["language", "culture", "pure"] {
            h.counts.entry(cat.into()).or_default();
            h.totals.entry(cat.into()).or_insert_with(|| vec![0; n_layers]);
            h.union.entry(cat.into()).or_insert_with(|| vec![0; n_layers]);
        }
        Ok(h)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# natlas layer-histogram v1\ncategory,label,layer,count\n");
        for (cat, by_label) in &self.counts {
            for (label, counts) in by_label {
                for (l, c) in counts.iter().enumerate() {
                    let _ = writeln!(out, "{cat},{label},{l},{c}");
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub model_fingerprint: String,
    /// `category -> label -> size`.
    pub sizes: BTreeMap<String, BTreeMap<String, usize>>,
    pub union_sizes: BTreeMap<String, usize>,
    /// `|pure_m| / |culture_m|` per culture with a nonempty culture set.
    pub pure_fraction: BTreeMap<String, f64>,
    pub mean_pure_fraction: Option<f64>,
    pub generic_size: Option<usize>,
}

pub fn summarize(catalog: &SetCatalog) -> Result<SetSummary> {
    let mut sizes = BTreeMap::new();
    let mut union_sizes = BTreeMap::new();
    for (cat, map) in [
        ("language", &catalog.language),
        ("culture", &catalog.culture),
        ("pure", &catalog.pure),
        ("compound", &catalog.compound),
    ] {
        sizes.insert(cat.to_owned(), map.iter().map(|(l, s)| (l.clone(), s.len())).collect());
        let mut u: Option<NeuronSet> = None;
        for s in map.values() {
            u = Some(match u {
                Some(u) => u.union(s)?,
                None => s.clone(),
            });
        }
        union_sizes.insert(cat.to_owned(), u.map_or(0, |u| u.len()));
    }
    let pure_fraction: BTreeMap<String, f64> = catalog
        .culture
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .filter_map(|(m, c)| catalog.pure.get(m).map(|p| (m.clone(), p.len() as f64 / c.len() as f64)))
        .collect();
    let mean_pure_fraction =
        (!pure_fraction.is_empty()).then(|| pure_fraction.values().sum::<f64>() / pure_fraction.len() as f64);
    Ok(SetSummary {
        model_fingerprint: catalog.model_fingerprint.clone(),
        sizes,
        union_sizes,
        pure_fraction,
        mean_pure_fraction,
        generic_size: catalog.generic.as_ref().map(NeuronSet::len),
    })
}

/// Wide table of one matrix field: a row per ablated set, a column per label.
pub fn heatmap_csv(matrix: &PplMatrix, field: HeatmapField) -> String {
    let mut out = format!("# natlas heatmap v1 {}\nrow", field.name());
    for c in &matrix.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for r in &matrix.rows {
        out.push_str(&r.name);
        let values = match field {
            HeatmapField::Ratio => &r.ratio,
            HeatmapField::Delta => &r.delta,
        };
        for v in values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapField {
    Ratio,
    Delta,
}

impl HeatmapField {
    fn name(self) -> &'static str {
        match self {
            Self::Ratio => "ratio",
            Self::Delta => "delta",
        }
    }
}
