//! Decoder-only transformer with a GLU feed-forward block.
//!
//! Every block is pre-norm (RMS, gain only): causal multi-head attention with
//! rotary positions, then `(act(h W1) * (h W3)) W2`. A *neuron* is one column
//! of `W1` after the activation; its activation can be captured (as a sign
//! pattern) and forced to zero through a [`NeuronMask`].

mod engine;
mod io;
mod weights;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::{GateSigns, Model};
pub use io::{load_model, model_to_container, save_model};
pub use weights::{LayerWeights, WeightBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActFn {
    #[default]
    Silu,
    Relu,
    /// Tanh approximation.
    Gelu,
}

impl ActFn {
    #[inline]
    pub fn apply<T: num_traits::Float>(self, x: T) -> T {
        match self {
            Self::Silu => x / (T::one() + (-x).exp()),
            Self::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Self::Gelu => {
                let half = T::from(0.5).unwrap();
                let c = T::from(0.797_884_560_802_865_4).unwrap();
                let k = T::from(0.044_715).unwrap();
                half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PositionalEncoding {
    /// Rotary embedding on query/key, interleaved pairs within each head.
    Rope { theta: f64 },
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        Self::Rope { theta: 10_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub act_fn: ActFn,
    pub norm_eps: f64,
    pub max_seq_len: usize,
    #[serde(default)]
    pub positional: PositionalEncoding,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return bad(format!("head dim {} must be even for rotary positions", self.head_dim()));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be at least 1".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return bad(format!("norm_eps must be positive, got {}", self.norm_eps));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be at least 1".into());
        }
        let PositionalEncoding::Rope { theta } = self.positional;
        if !(theta.is_finite() && theta > 0.0) {
            return bad(format!("rope theta must be positive, got {theta}"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Size of the neuron universe, `n_layers * d_ff`.
    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    pub fn check_neuron(&self, n: NeuronId) -> Result<()> {
        if n.layer < self.n_layers && n.index < self.d_ff {
            Ok(())
        } else {
            Err(Error::NeuronOutOfBounds {
                neuron: n,
                n_layers: self.n_layers,
                d_ff: self.d_ff,
            })
        }
    }

    /// Every neuron in layer-major order.
    pub fn neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        (0..self.n_layers).flat_map(move |l| (0..self.d_ff).map(move |j| NeuronId::new(l, j)))
    }
}

/// A feed-forward gate neuron: column `index` of `W1` in block `layer`.
///
/// Orders layer-major. Serializes as `[layer, index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub const fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl From<(usize, usize)> for NeuronId {
    fn from((layer, index): (usize, usize)) -> Self {
        Self { layer, index }
    }
}

impl From<NeuronId> for (usize, usize) {
    fn from(n: NeuronId) -> Self {
        (n.layer, n.index)
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.index)
    }
}

/// Per-layer deactivation bitmask; `true` forces the gate activation to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronMask {
    layers: Vec<Vec<bool>>,
    count: usize,
}

impl NeuronMask {
    pub fn empty(spec: &ModelSpec) -> Self {
        Self {
            layers: vec![vec![false; spec.d_ff]; spec.n_layers],
            count: 0,
        }
    }

    pub fn from_neurons<I>(spec: &ModelSpec, neurons: I) -> Result<Self>
    where
        I: IntoIterator<Item = NeuronId>,
    {
        let mut mask = Self::empty(spec);
        for n in neurons {
            mask.insert(spec, n)?;
        }
        Ok(mask)
    }

    pub fn insert(&mut self, spec: &ModelSpec, n: NeuronId) -> Result<bool> {
        spec.check_neuron(n)?;
        let slot = &mut self.layers[n.layer][n.index];
        let fresh = !*slot;
        *slot = true;
        self.count += usize::from(fresh);
        Ok(fresh)
    }

    pub fn contains(&self, n: NeuronId) -> bool {
        self.layers
            .get(n.layer)
            .and_then(|l| l.get(n.index))
            .copied()
            .unwrap_or(false)
    }

    pub fn layer(&self, layer: usize) -> &[bool] {
        &self.layers[layer]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn d_ff(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }
}

/// Receives the gate sign pattern (`activation > 0`) for every
/// `(position, layer)` of a capturing forward pass. Patterns are taken
/// before any mask is applied.
pub trait CaptureSink {
    fn record(&mut self, position: usize, layer: usize, active: &[bool]);
}

impl<F> CaptureSink for F
where
    F: FnMut(usize, usize, &[bool]),
{
    fn record(&mut self, position: usize, layer: usize, active: &[bool]) {
        self(position, layer, active)
    }
}
