//! Sorted neuron sets and the language/culture catalog.
//!
//! For culture `m` with associated language `k`:
//! pure `P_m = C_m \ L_k`, compound `L_k ∩ C_m`, and the generic set is the
//! intersection of every pure set.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::CultureMap;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, NeuronId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Language,
    Culture,
    Pure,
    Compound,
    Generic,
    Random,
    Custom,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum serializes");
        f.write_str(s.as_str().unwrap_or("custom"))
    }
}

/// Sorted (layer-major), duplicate-free neurons of one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronSet {
    pub provenance: Provenance,
    pub labels: Vec<String>,
    pub model_fingerprint: String,
    neurons: Vec<NeuronId>,
}

impl NeuronSet {
    pub fn new<I>(neurons: I, provenance: Provenance, labels: Vec<String>, model_fingerprint: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = NeuronId>,
    {
        let mut neurons: Vec<_> = neurons.into_iter().collect();
        neurons.sort_unstable();
        neurons.dedup();
        Self {
            provenance,
            labels,
            model_fingerprint: model_fingerprint.into(),
            neurons,
        }
    }

    pub fn empty(provenance: Provenance, model_fingerprint: impl Into<String>) -> Self {
        Self::new([], provenance, Vec::new(), model_fingerprint)
    }

    /// The universe `n_layers x d_ff`.
    pub fn universe(spec: &ModelSpec, model_fingerprint: impl Into<String>) -> Self {
        Self::new(spec.neurons(), Provenance::Custom, vec!["all".into()], model_fingerprint)
    }

    pub fn neurons(&self) -> &[NeuronId] {
        &self.neurons
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = NeuronId> + '_ {
        self.neurons.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn contains(&self, n: NeuronId) -> bool {
        self.neurons.binary_search(&n).is_ok()
    }

    pub fn with_meta(mut self, provenance: Provenance, labels: Vec<String>) -> Self {
        self.provenance = provenance;
        self.labels = labels;
        self
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.model_fingerprint == other.model_fingerprint {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch(
                self.model_fingerprint.clone(),
                other.model_fingerprint.clone(),
            ))
        }
    }

    fn derived(&self, neurons: Vec<NeuronId>) -> Self {
        Self {
            provenance: Provenance::Custom,
            labels: Vec::new(),
            model_fingerprint: self.model_fingerprint.clone(),
            neurons,
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(self.derived(merge_sorted(&self.neurons, &other.neurons, true, true, true)))
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(self.derived(merge_sorted(&self.neurons, &other.neurons, false, true, false)))
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(self.derived(merge_sorted(&self.neurons, &other.neurons, true, false, false)))
    }
}

/// One pass over two sorted slices, keeping elements only in `a`, in both,
/// or only in `b` according to the flags.
fn merge_sorted(a: &[NeuronId], b: &[NeuronId], only_a: bool, both: bool, only_b: bool) -> Vec<NeuronId> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                if only_a {
                    out.push(a[i]);
                }
                i += 1;
            }
            Ordering::Greater => {
                if only_b {
                    out.push(b[j]);
                }
                j += 1;
            }
            Ordering::Equal => {
                if both {
                    out.push(a[i]);
                }
                i += 1;
                j += 1;
            }
        }
    }
    if only_a {
        out.extend_from_slice(&a[i..]);
    }
    if only_b {
        out.extend_from_slice(&b[j..]);
    }
    out
}

/// `P_m = C_m \ L_k`.
pub fn pure(culture: &NeuronSet, language: &NeuronSet) -> Result<NeuronSet> {
    let labels = culture.labels.iter().chain(&language.labels).cloned().collect();
    Ok(culture.difference(language)?.with_meta(Provenance::Pure, labels))
}

/// `L_k ∩ C_m`.
pub fn compound(language: &NeuronSet, culture: &NeuronSet) -> Result<NeuronSet> {
    let labels = culture.labels.iter().chain(&language.labels).cloned().collect();
    Ok(language.intersection(culture)?.with_meta(Provenance::Compound, labels))
}

/// Language and culture selections plus everything derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetCatalog {
    pub model_fingerprint: String,
    pub culture_map: CultureMap,
    pub language: BTreeMap<String, NeuronSet>,
    pub culture: BTreeMap<String, NeuronSet>,
    #[serde(default)]
    pub pure: BTreeMap<String, NeuronSet>,
    #[serde(default)]
    pub compound: BTreeMap<String, NeuronSet>,
    #[serde(default)]
    pub generic: Option<NeuronSet>,
    #[serde(default)]
    pub subtract_all_languages: bool,
}

impl SetCatalog {
    pub fn new(
        language: BTreeMap<String, NeuronSet>,
        culture: BTreeMap<String, NeuronSet>,
        culture_map: CultureMap,
    ) -> Result<Self> {
        let fp = language
            .values()
            .chain(culture.values())
            .map(|s| s.model_fingerprint.clone())
            .next()
            .unwrap_or_default();
        if let Some(s) = language.values().chain(culture.values()).find(|s| s.model_fingerprint != fp) {
            return Err(Error::FingerprintMismatch(fp, s.model_fingerprint.clone()));
        }
        Ok(Self {
            model_fingerprint: fp,
            culture_map,
            language,
            culture,
            pure: BTreeMap::new(),
            compound: BTreeMap::new(),
            generic: None,
            subtract_all_languages: false,
        })
    }

    fn associated_language(&self, culture: &str) -> Result<&NeuronSet> {
        let lang = self
            .culture_map
            .get(culture)
            .ok_or_else(|| Error::Label(format!("culture {culture:?} has no associated language")))?;
        self.language
            .get(lang)
            .ok_or_else(|| Error::Label(format!("no language set for {lang:?} (culture {culture:?})")))
    }

    /// Derives pure and compound sets for every culture, then the generic set
    /// when at least two cultures are present. With `subtract_all_languages`
    /// the pure set removes the union of all language sets instead of only
    /// the associated one.
    pub fn derive(&mut self, subtract_all_languages: bool) -> Result<()> {
        self.subtract_all_languages = subtract_all_languages;
        self.pure.clear();
        self.compound.clear();
        self.generic = None;

        let all_languages = self
            .language
            .values()
            .try_fold(NeuronSet::empty(Provenance::Language, &self.model_fingerprint), |acc, s| {
                acc.union(s)
            })?
            .with_meta(Provenance::Language, self.language.keys().cloned().collect());

        let mut pure_sets = BTreeMap::new();
        let mut compound_sets = BTreeMap::new();
        for (name, c) in &self.culture {
            let lang = self.associated_language(name)?;
            let subtract = if subtract_all_languages { &all_languages } else { lang };
            pure_sets.insert(name.clone(), pure(c, subtract)?);
            compound_sets.insert(name.clone(), compound(lang, c)?);
        }
        self.pure = pure_sets;
        self.compound = compound_sets;
        if self.pure.len() >= 2 {
            self.generic = Some(generic(&self.pure)?);
        }
        Ok(())
    }

    /// Looks up `language/<l>`, `culture/<m>`, `pure/<m>`, `compound/<m>` or `generic`.
    pub fn get(&self, name: &str) -> Option<&NeuronSet> {
        if name == "generic" {
            return self.generic.as_ref();
        }
        let (family, label) = name.split_once('/')?;
        match family {
            "language" => self.language.get(label),
            "culture" => self.culture.get(label),
            "pure" => self.pure.get(label),
            "compound" => self.compound.get(label),
            _ => None,
        }
    }

    /// Every set with its catalog name, in a fixed order.
    pub fn named_sets(&self) -> Vec<(String, &NeuronSet)> {
        let mut out = Vec::new();
        for (family, map) in [
            ("language", &self.language),
            ("culture", &self.culture),
            ("pure", &self.pure),
            ("compound", &self.compound),
        ] {
            out.extend(map.iter().map(|(k, v)| (format!("{family}/{k}"), v)));
        }
        if let Some(g) = &self.generic {
            out.push(("generic".into(), g));
        }
        out
    }

    /// Union of every language and culture set.
    pub fn identified(&self) -> Result<NeuronSet> {
        self.language
            .values()
            .chain(self.culture.values())
            .try_fold(NeuronSet::empty(Provenance::Custom, &self.model_fingerprint), |acc, s| acc.union(s))
    }
}

/// Intersection of all pure sets.
pub fn generic(pure_sets: &BTreeMap<String, NeuronSet>) -> Result<NeuronSet> {
    if pure_sets.len() < 2 {
        return Err(Error::Label(format!(
            "generic set needs at least two pure sets, have {}",
            pure_sets.len()
        )));
    }
    let mut iter = pure_sets.values();
    let first = iter.next().expect("len checked").clone();
    let set = iter.try_fold(first, |acc, s| acc.intersection(s))?;
    Ok(set.with_meta(Provenance::Generic, pure_sets.keys().cloned().collect()))
}
