use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights of one transformer block. Projections multiply row vectors from
/// the left: `h W` with `W` shaped `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Array1<T>,
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub ffn_norm: Array1<T>,
    /// Gate projection `[d_model, d_ff]`; column `j` is neuron `j`.
    pub w1: Array2<T>,
    /// Up projection `[d_model, d_ff]`.
    pub w3: Array2<T>,
    /// Down projection `[d_ff, d_model]`; row `j` carries neuron `j`'s output.
    pub w2: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle<T> {
    /// `[vocab_size, d_model]`
    pub embed: Array2<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Array1<T>,
    /// Untied output head `[d_model, vocab_size]`.
    pub head: Array2<T>,
}

impl<T: Scalar> LayerWeights<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let (d, f) = (spec.d_model, spec.d_ff);
        Self {
            attn_norm: Array1::ones(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ffn_norm: Array1::ones(d),
            w1: Array2::zeros((d, f)),
            w3: Array2::zeros((d, f)),
            w2: Array2::zeros((f, d)),
        }
    }
}

impl<T: Scalar> WeightBundle<T> {
    /// All projections zero, all norm gains one.
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            embed: Array2::zeros((spec.vocab_size, spec.d_model)),
            layers: (0..spec.n_layers).map(|_| LayerWeights::zeros(spec)).collect(),
            final_norm: Array1::ones(spec.d_model),
            head: Array2::zeros((spec.d_model, spec.vocab_size)),
        }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, unit norm gains.
    pub fn random<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let mut w = Self::zeros(spec);
        let mut fill = |a: &mut Array2<T>, fan_in: usize| {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
            a.mapv_inplace(|_| T::from_stored(dist.sample(rng) as f32));
        };
        fill(&mut w.embed, 1);
        for l in &mut w.layers {
            fill(&mut l.wq, spec.d_model);
            fill(&mut l.wk, spec.d_model);
            fill(&mut l.wv, spec.d_model);
            fill(&mut l.wo, spec.d_model);
            fill(&mut l.w1, spec.d_model);
            fill(&mut l.w3, spec.d_model);
            fill(&mut l.w2, spec.d_ff);
        }
        fill(&mut w.head, spec.d_model);
        w
    }

    /// Tensors in canonical (serialization) order.
    pub fn named_tensors(&self) -> Vec<(String, TensorView<'_, T>)> {
        let mut out = vec![("embed".to_owned(), TensorView::Matrix(&self.embed))];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), TensorView::Vector(&l.attn_norm)));
            out.push((format!("layers.{i}.wq"), TensorView::Matrix(&l.wq)));
            out.push((format!("layers.{i}.wk"), TensorView::Matrix(&l.wk)));
            out.push((format!("layers.{i}.wv"), TensorView::Matrix(&l.wv)));
            out.push((format!("layers.{i}.wo"), TensorView::Matrix(&l.wo)));
            out.push((format!("layers.{i}.ffn_norm"), TensorView::Vector(&l.ffn_norm)));
            out.push((format!("layers.{i}.w1"), TensorView::Matrix(&l.w1)));
            out.push((format!("layers.{i}.w3"), TensorView::Matrix(&l.w3)));
            out.push((format!("layers.{i}.w2"), TensorView::Matrix(&l.w2)));
        }
        out.push(("final_norm".to_owned(), TensorView::Vector(&self.final_norm)));
        out.push(("head".to_owned(), TensorView::Matrix(&self.head)));
        out
    }

    /// Checks every tensor shape against `spec` and that all values are finite.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.layers.len() != spec.n_layers {
            return Err(Error::ShapeMismatch {
                name: "layers".into(),
                expected: vec![spec.n_layers],
                actual: vec![self.layers.len()],
            });
        }
        let (d, f, v) = (spec.d_model, spec.d_ff, spec.vocab_size);
        for (name, t) in self.named_tensors() {
            let expected = expected_shape(&name, d, f, v);
            let actual = t.shape();
            if actual != expected {
                return Err(Error::ShapeMismatch {
                    name,
                    expected,
                    actual,
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> WeightBundle<U> {
        let m = |a: &Array2<T>| a.mapv(|x| U::from_f64_lossy(x.to_f64_lossless()));
        let v = |a: &Array1<T>| a.mapv(|x| U::from_f64_lossy(x.to_f64_lossless()));
        WeightBundle {
            embed: m(&self.embed),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: v(&l.attn_norm),
                    wq: m(&l.wq),
                    wk: m(&l.wk),
                    wv: m(&l.wv),
                    wo: m(&l.wo),
                    ffn_norm: v(&l.ffn_norm),
                    w1: m(&l.w1),
                    w3: m(&l.w3),
                    w2: m(&l.w2),
                })
                .collect(),
            final_norm: v(&self.final_norm),
            head: m(&self.head),
        }
    }

    /// Copy of these weights with the `W2` rows of `neurons` set to zero.
    pub fn with_zeroed_down_rows<I>(&self, spec: &ModelSpec, neurons: I) -> Result<Self>
    where
        I: IntoIterator<Item = super::NeuronId>,
    {
        let mut out = self.clone();
        for n in neurons {
            spec.check_neuron(n)?;
            out.layers[n.layer].w2.row_mut(n.index).fill(T::zero());
        }
        Ok(out)
    }
}

pub(super) fn expected_shape(name: &str, d: usize, f: usize, v: usize) -> Vec<usize> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match leaf {
        "embed" => vec![v, d],
        "attn_norm" | "ffn_norm" | "final_norm" => vec![d],
        "wq" | "wk" | "wv" | "wo" => vec![d, d],
        "w1" | "w3" => vec![d, f],
        "w2" => vec![f, d],
        "head" => vec![d, v],
        _ => vec![],
    }
}

pub enum TensorView<'a, T> {
    Vector(&'a Array1<T>),
    Matrix(&'a Array2<T>),
}

impl<T: Scalar> TensorView<'_, T> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Self::Vector(a) => a.shape().to_vec(),
            Self::Matrix(a) => a.shape().to_vec(),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            Self::Vector(a) => a.iter().all(|x| x.is_finite()),
            Self::Matrix(a) => a.iter().all(|x| x.is_finite()),
        }
    }

    /// Row-major values as `f32`.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match self {
            Self::Vector(a) => a.iter().map(|x| x.to_stored()).collect(),
            Self::Matrix(a) => a.iter().map(|x| x.to_stored()).collect(),
        }
    }
}
