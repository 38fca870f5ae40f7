//! Models and corpora with planted neurons whose behavior is known exactly.
//!
//! Token embeddings carry a constant unit, a one-hot indicator for the
//! token's block (plain words of a language, or markers of a culture) and a
//! random identity code. Attention output projections are zero, so the
//! feed-forward input at every position depends on that position's token
//! alone. Planted gates read only the indicators:
//!
//! - language plant `k`: fires on plain words of language `k`
//! - pure culture plant `m`: fires on markers of culture `m`
//! - compound plant `m`: fires on both, for the language culture `m` maps to
//!
//! Planted down-projection rows write into boost channels that the head maps
//! onto the logits of the matching block. Background neurons read only the
//! identity code and have zero down-projection rows.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CultureMap, LabelKind, TokenStream, BOS_TOKEN};
use crate::error::{Error, Result};
use crate::intervention::perplexity;
use crate::model::{ActFn, LayerWeights, Model, ModelSpec, NeuronId, PositionalEncoding, WeightBundle};
use crate::sets::{NeuronSet, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSpec {
    pub n_languages: usize,
    pub n_cultures: usize,
    /// Language index of each culture; empty means culture `i` maps to language `i`.
    pub culture_languages: Vec<usize>,
    pub language_plants: usize,
    pub pure_plants: usize,
    pub compound_plants: usize,
    /// Non-marker words per language.
    pub plain_vocab: usize,
    /// Marker words per culture.
    pub marker_vocab: usize,
    /// Nominal logit boost of a fully active block.
    pub beta: f64,
    /// Share of a culture block's boost written by its pure plants; the
    /// compound plants write the rest.
    pub pure_boost_share: f64,
    /// Fraction of marker tokens in culture streams.
    pub marker_rate: f64,
    /// Culture streams alternate between marker runs and plain runs; this is
    /// the lag-one correlation of that chain (0 draws every token
    /// independently). Persistence makes the current block predictive of the
    /// next token, which is what planted boosts encode.
    pub persistence: f64,
    /// Magnitude of planted gate weights.
    pub gate_scale: f64,
    /// Constant added to background gate pre-activations; 0 gives ~50% firing.
    pub background_bias: f64,
    pub plant_layers: Vec<usize>,
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub act_fn: ActFn,
    /// Tokens per generated document, including the leading BOS.
    pub doc_len: usize,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            n_languages: 3,
            n_cultures: 3,
            culture_languages: Vec::new(),
            language_plants: 8,
            pure_plants: 4,
            compound_plants: 2,
            plain_vocab: 48,
            marker_vocab: 8,
            beta: 4.0,
            pure_boost_share: 0.75,
            marker_rate: 0.2,
            persistence: 0.5,
            gate_scale: 12.0,
            background_bias: 0.0,
            plant_layers: vec![2, 3],
            n_layers: 4,
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            max_seq_len: 128,
            act_fn: ActFn::Silu,
            doc_len: 128,
        }
    }
}

const MIN_IDENTITY_DIMS: usize = 4;

impl PlantSpec {
    pub fn language_name(k: usize) -> String {
        format!("lang{k}")
    }

    pub fn culture_name(m: usize) -> String {
        format!("cult{m}")
    }

    pub fn languages(&self) -> Vec<String> {
        (0..self.n_languages).map(Self::language_name).collect()
    }

    pub fn cultures(&self) -> Vec<String> {
        (0..self.n_cultures).map(Self::culture_name).collect()
    }

    pub fn culture_language(&self, m: usize) -> usize {
        if self.culture_languages.is_empty() {
            m
        } else {
            self.culture_languages[m]
        }
    }

    pub fn culture_map(&self) -> CultureMap {
        (0..self.n_cultures)
            .map(|m| (Self::culture_name(m), Self::language_name(self.culture_language(m))))
            .collect()
    }

    pub fn n_planted(&self) -> usize {
        self.n_languages * self.language_plants + self.n_cultures * (self.pure_plants + self.compound_plants)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    /// Planted share of all neurons for one label kind, i.e. the selection
    /// fraction that should recover the plants exactly.
    pub fn planted_density(&self, kind: LabelKind) -> f64 {
        let n = match kind {
            LabelKind::Language => self.n_languages * self.language_plants + self.n_cultures * self.compound_plants,
            LabelKind::Culture => self.n_cultures * (self.pure_plants + self.compound_plants),
        };
        n as f64 / self.n_neurons() as f64
    }

    pub fn vocab_size(&self) -> usize {
        1 + self.n_languages * self.plain_vocab + self.n_cultures * self.marker_vocab
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            n_layers: self.n_layers,
            d_model: self.d_model,
            d_ff: self.d_ff,
            n_heads: self.n_heads,
            vocab_size: self.vocab_size(),
            act_fn: self.act_fn,
            norm_eps: 1e-5,
            max_seq_len: self.max_seq_len,
            positional: PositionalEncoding::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_languages == 0 {
            return bad("at least one language is required".into());
        }
        if self.n_cultures > self.n_languages {
            return bad(format!(
                "{} cultures exceed {} languages",
                self.n_cultures, self.n_languages
            ));
        }
        if !self.culture_languages.is_empty() {
            if self.culture_languages.len() != self.n_cultures {
                return bad("culture_languages must list one language per culture".into());
            }
            if let Some(&k) = self.culture_languages.iter().find(|&&k| k >= self.n_languages) {
                return bad(format!("culture mapped to missing language {k}"));
            }
        }
        if self.plain_vocab == 0 || (self.n_cultures > 0 && self.marker_vocab == 0) {
            return bad("vocabulary blocks must be nonempty".into());
        }
        let dims = self.layout_dims();
        if self.d_model < dims + MIN_IDENTITY_DIMS {
            return bad(format!(
                "d_model {} leaves fewer than {MIN_IDENTITY_DIMS} identity dims after {dims} reserved",
                self.d_model
            ));
        }
        if self.plant_layers.is_empty() {
            return bad("no plant layers".into());
        }
        let mut layers = self.plant_layers.clone();
        layers.sort_unstable();
        layers.dedup();
        if layers.len() != self.plant_layers.len() || layers.iter().any(|&l| l >= self.n_layers) {
            return bad(format!("plant layers {:?} invalid for {} layers", self.plant_layers, self.n_layers));
        }
        if self.n_planted() > layers.len() * self.d_ff {
            return bad(format!(
                "{} plants do not fit in {} slots",
                self.n_planted(),
                layers.len() * self.d_ff
            ));
        }
        for (name, v) in [
            ("pure_boost_share", self.pure_boost_share),
            ("marker_rate", self.marker_rate),
            ("persistence", self.persistence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be a non-negative number, got {}", self.beta));
        }
        if !(self.gate_scale.is_finite() && self.gate_scale > 0.0) || !self.background_bias.is_finite() {
            return bad("gate scale and background bias must be finite, scale positive".into());
        }
        if self.doc_len < 2 {
            return bad("documents need at least 2 tokens".into());
        }
        self.model_spec().validate()
    }

    /// Constant, indicator and boost-channel dims.
    fn layout_dims(&self) -> usize {
        1 + 2 * (self.n_languages + self.n_cultures)
    }
}

/// Residual-stream coordinates of the construction.
struct Layout {
    n_languages: usize,
    n_cultures: usize,
    d_model: usize,
}

impl Layout {
    const CONST: usize = 0;

    fn lang_ind(&self, k: usize) -> usize {
        1 + k
    }

    fn cult_ind(&self, m: usize) -> usize {
        1 + self.n_languages + m
    }

    fn lang_channel(&self, k: usize) -> usize {
        1 + self.n_languages + self.n_cultures + k
    }

    fn cult_channel(&self, m: usize) -> usize {
        1 + 2 * self.n_languages + self.n_cultures + m
    }

    fn indicators(&self) -> std::ops::Range<usize> {
        1..1 + self.n_languages + self.n_cultures
    }

    fn identity(&self) -> std::ops::Range<usize> {
        1 + 2 * (self.n_languages + self.n_cultures)..self.d_model
    }
}

/// Vocabulary ids: BOS, then per language its plain words followed by the
/// markers of every culture mapped to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub plain: Vec<std::ops::Range<u32>>,
    pub markers: Vec<std::ops::Range<u32>>,
    pub tokens: Vec<String>,
}

impl VocabLayout {
    pub fn new(plant: &PlantSpec) -> Self {
        let mut tokens = vec![BOS_TOKEN.to_owned()];
        let mut plain = Vec::new();
        let mut markers = vec![0..0; plant.n_cultures];
        for k in 0..plant.n_languages {
            let start = tokens.len() as u32;
            tokens.extend((0..plant.plain_vocab).map(|i| format!("{}_{i}", PlantSpec::language_name(k))));
            plain.push(start..tokens.len() as u32);
            for (m, range) in markers.iter_mut().enumerate() {
                if plant.culture_language(m) == k {
                    let start = tokens.len() as u32;
                    tokens.extend((0..plant.marker_vocab).map(|i| format!("{}_m{i}", PlantSpec::culture_name(m))));
                    *range = start..tokens.len() as u32;
                }
            }
        }
        Self { plain, markers, tokens }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Language,
    Pure,
    Compound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedNeuron {
    pub neuron: NeuronId,
    pub kind: PlantKind,
    /// Language name for language plants, culture name otherwise.
    pub label: String,
    /// Firing probability on each label stream, keyed by label name.
    pub expected_firing: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantManifest {
    pub plant: PlantSpec,
    pub seed: u64,
    pub model_fingerprint: String,
    pub languages: Vec<String>,
    pub cultures: Vec<String>,
    pub culture_map: CultureMap,
    pub vocab: VocabLayout,
    pub planted: Vec<PlantedNeuron>,
    /// Perplexity ratio on each label's stream when its planted set is
    /// ablated; filled by [`expected_diagonal_ratios`].
    #[serde(default)]
    pub expected_diagonal_ratio: BTreeMap<String, f64>,
}

impl PlantManifest {
    fn ids(&self, kind: PlantKind, label: &str) -> impl Iterator<Item = NeuronId> + '_ {
        let label = label.to_owned();
        self.planted
            .iter()
            .filter(move |p| p.kind == kind && p.label == label)
            .map(|p| p.neuron)
    }

    fn set(&self, ids: impl Iterator<Item = NeuronId>, provenance: Provenance, label: &str) -> NeuronSet {
        NeuronSet::new(ids, provenance, vec![label.to_owned()], &self.model_fingerprint)
    }

    pub fn language_plants(&self, language: &str) -> NeuronSet {
        self.set(self.ids(PlantKind::Language, language), Provenance::Language, language)
    }

    pub fn pure_set(&self, culture: &str) -> NeuronSet {
        self.set(self.ids(PlantKind::Pure, culture), Provenance::Pure, culture)
    }

    pub fn compound_set(&self, culture: &str) -> NeuronSet {
        self.set(self.ids(PlantKind::Compound, culture), Provenance::Compound, culture)
    }

    /// Language plants plus the compound plants of every culture mapped to it.
    pub fn language_set(&self, language: &str) -> NeuronSet {
        let compounds = self
            .culture_map
            .iter()
            .filter(|(_, l)| *l == language)
            .flat_map(|(c, _)| self.ids(PlantKind::Compound, c));
        let ids: Vec<_> = self.ids(PlantKind::Language, language).chain(compounds).collect();
        self.set(ids.into_iter(), Provenance::Language, language)
    }

    /// Pure plus compound plants of the culture.
    pub fn culture_set(&self, culture: &str) -> NeuronSet {
        let ids: Vec<_> = self
            .ids(PlantKind::Pure, culture)
            .chain(self.ids(PlantKind::Compound, culture))
            .collect();
        self.set(ids.into_iter(), Provenance::Culture, culture)
    }

    pub fn all_planted(&self) -> NeuronSet {
        NeuronSet::new(
            self.planted.iter().map(|p| p.neuron),
            Provenance::Custom,
            vec![],
            &self.model_fingerprint,
        )
    }

    /// The planted set tied to a label: `language_set` or `culture_set`.
    pub fn label_set(&self, label: &str) -> Result<NeuronSet> {
        if self.languages.iter().any(|l| l == label) {
            Ok(self.language_set(label))
        } else if self.cultures.iter().any(|c| c == label) {
            Ok(self.culture_set(label))
        } else {
            Err(Error::Label(format!("{label:?} is not a planted label")))
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R, std: f64) -> impl FnMut() -> f32 + '_ {
    let dist = Normal::new(0.0, std).expect("finite std");
    move || dist.sample(rng) as f32
}

/// Builds the planted model. The same plant and seed always give
/// bit-identical weights.
pub fn build_model(plant: &PlantSpec, seed: u64) -> Result<(ModelSpec, WeightBundle<f32>, PlantManifest)> {
    plant.validate()?;
    let spec = plant.model_spec();
    let lay = Layout {
        n_languages: plant.n_languages,
        n_cultures: plant.n_cultures,
        d_model: plant.d_model,
    };
    let vocab = VocabLayout::new(plant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d_model;

    let mut embed = Array2::<f32>::zeros((spec.vocab_size, d));
    {
        let mut g = gaussian(&mut rng, 1.0);
        for mut row in embed.rows_mut() {
            row[Layout::CONST] = 1.0;
            for i in lay.identity() {
                row[i] = g();
            }
        }
    }
    for (k, r) in vocab.plain.iter().enumerate() {
        for id in r.clone() {
            embed[[id as usize, lay.lang_ind(k)]] = 1.0;
        }
    }
    for (m, r) in vocab.markers.iter().enumerate() {
        for id in r.clone() {
            embed[[id as usize, lay.cult_ind(m)]] = 1.0;
        }
    }

    // Plant slots: a seeded sample over the plant layers.
    let slots: Vec<NeuronId> = plant
        .plant_layers
        .iter()
        .flat_map(|&l| (0..plant.d_ff).map(move |j| NeuronId::new(l, j)))
        .collect();
    let picked: Vec<NeuronId> = sample(&mut rng, slots.len(), plant.n_planted())
        .into_iter()
        .map(|i| slots[i])
        .collect();
    let mut next = picked.into_iter();
    let mut plants: Vec<(NeuronId, PlantKind, usize)> = Vec::with_capacity(plant.n_planted());
    for k in 0..plant.n_languages {
        plants.extend(next.by_ref().take(plant.language_plants).map(|n| (n, PlantKind::Language, k)));
    }
    for m in 0..plant.n_cultures {
        plants.extend(next.by_ref().take(plant.pure_plants).map(|n| (n, PlantKind::Pure, m)));
    }
    for m in 0..plant.n_cultures {
        plants.extend(next.by_ref().take(plant.compound_plants).map(|n| (n, PlantKind::Compound, m)));
    }

    let mut layers: Vec<LayerWeights<f32>> = (0..spec.n_layers).map(|_| LayerWeights::zeros(&spec)).collect();
    let attn_std = 1.0 / (d as f64).sqrt();
    let gate_std = 1.0 / (lay.identity().len() as f64).sqrt();
    for lw in &mut layers {
        let mut g = gaussian(&mut rng, attn_std);
        for w in [&mut lw.wq, &mut lw.wk, &mut lw.wv] {
            w.mapv_inplace(|_| g());
        }
        lw.w3.mapv_inplace(|_| g());
        drop(g);
        let mut g = gaussian(&mut rng, gate_std);
        for j in 0..spec.d_ff {
            lw.w1[[Layout::CONST, j]] = plant.background_bias as f32;
            for i in lay.identity() {
                lw.w1[[i, j]] = g();
            }
        }
    }

    // Nominal unit activation of a planted neuron on its own tokens.
    let h0 = plant.act_fn.apply(plant.gate_scale);
    let lang_writers = |k: usize| {
        plant.language_plants
            + (0..plant.n_cultures).filter(|&m| plant.culture_language(m) == k).count() * plant.compound_plants
    };
    let (pure_share, compound_share) = match (plant.pure_plants, plant.compound_plants) {
        (0, _) => (0.0, 1.0),
        (_, 0) => (1.0, 0.0),
        _ => (plant.pure_boost_share, 1.0 - plant.pure_boost_share),
    };
    let on = plant.beta > 0.0;
    let c = plant.gate_scale as f32;
    for &(n, kind, label) in &plants {
        let lw = &mut layers[n.layer];
        let j = n.index;
        for i in 0..d {
            lw.w1[[i, j]] = 0.0;
            lw.w3[[i, j]] = 0.0;
        }
        for i in lay.indicators() {
            lw.w1[[i, j]] = -c;
        }
        lw.w3[[Layout::CONST, j]] = 1.0;
        let mut write = |channel: usize, mass: f64| {
            if on {
                lw.w2[[j, channel]] = (mass / h0) as f32;
            }
        };
        match kind {
            PlantKind::Language => {
                lw.w1[[lay.lang_ind(label), j]] = c;
                write(lay.lang_channel(label), 1.0 / lang_writers(label) as f64);
            }
            PlantKind::Pure => {
                lw.w1[[lay.cult_ind(label), j]] = c;
                write(lay.cult_channel(label), pure_share / plant.pure_plants as f64);
            }
            PlantKind::Compound => {
                let k = plant.culture_language(label);
                lw.w1[[lay.lang_ind(k), j]] = c;
                lw.w1[[lay.cult_ind(label), j]] = c;
                write(lay.lang_channel(k), 1.0 / lang_writers(k) as f64);
                write(lay.cult_channel(label), compound_share / plant.compound_plants as f64);
            }
        }
    }

    let mut head = Array2::<f32>::zeros((d, spec.vocab_size));
    let beta = plant.beta as f32;
    for (k, r) in vocab.plain.iter().enumerate() {
        for id in r.clone() {
            head[[lay.lang_channel(k), id as usize]] = beta;
        }
    }
    for (m, r) in vocab.markers.iter().enumerate() {
        for id in r.clone() {
            head[[lay.cult_channel(m), id as usize]] = beta;
        }
    }

    let weights = WeightBundle {
        embed,
        layers,
        final_norm: Array1::ones(d),
        head,
    };
    let model = Model::new(spec.clone(), weights)?;
    let fingerprint = model.fingerprint();
    let (spec, weights) = model.into_parts();

    let planted = plants
        .iter()
        .map(|&(neuron, kind, label)| PlantedNeuron {
            neuron,
            kind,
            label: match kind {
                PlantKind::Language => PlantSpec::language_name(label),
                _ => PlantSpec::culture_name(label),
            },
            expected_firing: expected_firing(plant, kind, label),
        })
        .collect();
    let manifest = PlantManifest {
        plant: plant.clone(),
        seed,
        model_fingerprint: fingerprint,
        languages: plant.languages(),
        cultures: plant.cultures(),
        culture_map: plant.culture_map(),
        vocab,
        planted,
        expected_diagonal_ratio: BTreeMap::new(),
    };
    Ok((spec, weights, manifest))
}

/// Firing probability of a plant on every label stream, from the stream
/// composition alone.
fn expected_firing(plant: &PlantSpec, kind: PlantKind, label: usize) -> BTreeMap<String, f64> {
    let r = plant.marker_rate;
    let mut out = BTreeMap::new();
    for k in 0..plant.n_languages {
        let fires = match kind {
            PlantKind::Language => k == label,
            PlantKind::Pure => false,
            PlantKind::Compound => plant.culture_language(label) == k,
        };
        out.insert(PlantSpec::language_name(k), if fires { 1.0 } else { 0.0 });
    }
    for m in 0..plant.n_cultures {
        let k = plant.culture_language(m);
        let p = match kind {
            PlantKind::Language if k == label => 1.0 - r,
            PlantKind::Language => 0.0,
            PlantKind::Pure if m == label => r,
            PlantKind::Pure => 0.0,
            PlantKind::Compound if m == label => 1.0,
            PlantKind::Compound if plant.culture_language(label) == k => 1.0 - r,
            PlantKind::Compound => 0.0,
        };
        out.insert(PlantSpec::culture_name(m), p);
    }
    out
}

/// Token streams for every language and culture label.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub language: BTreeMap<String, TokenStream>,
    pub culture: BTreeMap<String, TokenStream>,
}

impl Corpora {
    pub fn get(&self, label: &str) -> Option<&TokenStream> {
        self.language.get(label).or_else(|| self.culture.get(label))
    }

    pub fn all(&self) -> BTreeMap<String, TokenStream> {
        self.language
            .iter()
            .chain(&self.culture)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

trait Draw<R> {
    fn reset(&mut self, rng: &mut R);
    fn next(&mut self, rng: &mut R) -> u32;
}

struct Uniform(std::ops::Range<u32>);

impl<R: Rng> Draw<R> for Uniform {
    fn reset(&mut self, _: &mut R) {}

    fn next(&mut self, rng: &mut R) -> u32 {
        rng.random_range(self.0.clone())
    }
}

/// Two-state chain over {marker, plain} with stationary marker rate `rate`.
struct MarkerChain {
    markers: std::ops::Range<u32>,
    plain: std::ops::Range<u32>,
    rate: f64,
    persistence: f64,
    in_marker: bool,
}

impl<R: Rng> Draw<R> for MarkerChain {
    fn reset(&mut self, rng: &mut R) {
        self.in_marker = rng.random_bool(self.rate);
    }

    fn next(&mut self, rng: &mut R) -> u32 {
        let token = if self.in_marker {
            rng.random_range(self.markers.clone())
        } else {
            rng.random_range(self.plain.clone())
        };
        // stay with probability `persistence`, else redraw from the stationary rate
        if !rng.random_bool(self.persistence) {
            self.in_marker = rng.random_bool(self.rate);
        }
        token
    }
}

fn stream<R: Rng>(rng: &mut R, plant: &PlantSpec, tokens: usize, draw: &mut impl Draw<R>) -> TokenStream {
    let mut s = TokenStream::new();
    let mut remaining = tokens;
    let mut doc = Vec::with_capacity(plant.doc_len);
    while remaining > 0 {
        // never leave a one-token tail
        let len = if remaining < plant.doc_len + 2 { remaining } else { plant.doc_len };
        doc.clear();
        doc.push(0);
        draw.reset(rng);
        doc.extend((1..len).map(|_| draw.next(rng)));
        s.push_document(&doc);
        remaining -= len;
    }
    s
}

/// Streams of exactly `tokens_per_label` tokens per label, in documents of
/// `doc_len` tokens opening with BOS. Language streams draw plain words of
/// their block uniformly. Culture streams draw markers and plain words of
/// the associated language, switching between the two through a persistent
/// chain whose marker share is `marker_rate`.
pub fn build_corpora(plant: &PlantSpec, seed: u64, tokens_per_label: usize) -> Result<Corpora> {
    plant.validate()?;
    if tokens_per_label < 2 {
        return Err(Error::Config("need at least 2 tokens per label".into()));
    }
    let vocab = VocabLayout::new(plant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut language = BTreeMap::new();
    for (k, block) in vocab.plain.iter().enumerate() {
        let s = stream(&mut rng, plant, tokens_per_label, &mut Uniform(block.clone()));
        language.insert(PlantSpec::language_name(k), s);
    }
    let mut culture = BTreeMap::new();
    for (m, markers) in vocab.markers.iter().enumerate() {
        let mut chain = MarkerChain {
            markers: markers.clone(),
            plain: vocab.plain[plant.culture_language(m)].clone(),
            rate: plant.marker_rate,
            persistence: plant.persistence,
            in_marker: false,
        };
        let s = stream(&mut rng, plant, tokens_per_label, &mut chain);
        culture.insert(PlantSpec::culture_name(m), s);
    }
    Ok(Corpora { language, culture })
}

/// Perplexity ratio on `stream` between the model with the down-projection
/// rows of `neurons` zeroed and the intact model.
pub fn expected_ratio(
    spec: &ModelSpec,
    weights: &WeightBundle<f32>,
    neurons: &NeuronSet,
    stream: &TokenStream,
) -> Result<f64> {
    let intact = Model::new(spec.clone(), weights.clone())?;
    let zeroed = Model::new(spec.clone(), weights.with_zeroed_down_rows(spec, neurons.iter())?)?;
    Ok(perplexity(&zeroed, stream, None)? / perplexity(&intact, stream, None)?)
}

/// For each stream label, the perplexity ratio after zeroing the rows of
/// that label's planted set.
pub fn expected_diagonal_ratios(
    spec: &ModelSpec,
    weights: &WeightBundle<f32>,
    manifest: &PlantManifest,
    streams: &BTreeMap<String, TokenStream>,
) -> Result<BTreeMap<String, f64>> {
    streams
        .iter()
        .map(|(label, s)| Ok((label.clone(), expected_ratio(spec, weights, &manifest.label_set(label)?, s)?)))
        .collect()
}

fn document_text(vocab: &VocabLayout, doc: &[u32]) -> String {
    let mut text = doc[1..]
        .iter()
        .map(|&id| vocab.tokens[id as usize].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    text.push('\n');
    text
}

/// Paths written by [`emit`], relative to its output directory.
pub const MODEL_FILE: &str = "model.natlas";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CULTURE_MAP_FILE: &str = "culture_map.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_DIR: &str = "corpus";

/// Writes the model container, `vocab.txt`, `culture_map.json`,
/// `manifest.json` and `corpus/{language,culture}/<label>/<doc>.txt`.
/// Corpus text tokenized with the vocabulary reproduces `corpora` exactly.
pub fn emit(
    dir: &Path,
    spec: &ModelSpec,
    weights: &WeightBundle<f32>,
    manifest: &PlantManifest,
    corpora: &Corpora,
) -> Result<()> {
    use crate::io::{write_atomic, write_json_atomic};
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::model::save_model(spec, weights, dir.join(MODEL_FILE))?;
    let mut vocab = manifest.vocab.tokens.join("\n");
    vocab.push('\n');
    write_atomic(&dir.join(VOCAB_FILE), vocab.as_bytes())?;
    write_json_atomic(&dir.join(CULTURE_MAP_FILE), &manifest.culture_map)?;
    write_json_atomic(&dir.join(MANIFEST_FILE), manifest)?;
    for (kind, streams) in [(LabelKind::Language, &corpora.language), (LabelKind::Culture, &corpora.culture)] {
        for (label, s) in streams {
            let sub = dir.join(CORPUS_DIR).join(kind.to_string()).join(label);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, doc) in s.documents().enumerate() {
                write_atomic(&sub.join(format!("{i:06}.txt")), document_text(&manifest.vocab, doc).as_bytes())?;
            }
        }
    }
    Ok(())
}
