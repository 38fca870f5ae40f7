use std::path::Path;

use ndarray::{Array1, Array2};
use serde_json::Value;

use super::weights::expected_shape;
use super::{LayerWeights, Model, ModelSpec, WeightBundle};
use crate::container::{digest_hex, Container, Tensor, TensorData};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT: &str = "natlas-model";

pub fn model_to_container<T: Scalar>(spec: &ModelSpec, weights: &WeightBundle<T>) -> Result<Container> {
    spec.validate()?;
    weights.validate(spec)?;
    let mut header = match serde_json::to_value(spec)? {
        Value::Object(m) => m,
        _ => unreachable!("ModelSpec serializes to an object"),
    };
    header.insert("format".into(), Value::from(FORMAT));
    let tensors = weights
        .named_tensors()
        .into_iter()
        .map(|(name, view)| (name, Tensor::f32(view.shape(), view.to_f32_vec())))
        .collect();
    Ok(Container { header, tensors })
}

pub fn save_model<T: Scalar>(spec: &ModelSpec, weights: &WeightBundle<T>, path: impl AsRef<Path>) -> Result<()> {
    model_to_container(spec, weights)?.write(path)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelSpec, WeightBundle<T>)> {
    model_from_container(Container::read(path)?)
}

pub(crate) fn model_from_container<T: Scalar>(mut c: Container) -> Result<(ModelSpec, WeightBundle<T>)> {
    match c.header.get("format").and_then(Value::as_str) {
        Some(FORMAT) => {}
        other => return Err(Error::Format(format!("not a model container (format {other:?})"))),
    }
    let spec: ModelSpec = serde_json::from_value(Value::Object(c.header.clone()))?;
    spec.validate()?;
    let (d, f, v) = (spec.d_model, spec.d_ff, spec.vocab_size);

    let embed = matrix(&mut c, "embed".into(), d, f, v)?;
    let head = matrix(&mut c, "head".into(), d, f, v)?;
    let mut layers = Vec::with_capacity(spec.n_layers);
    for i in 0..spec.n_layers {
        let p = |leaf: &str| format!("layers.{i}.{leaf}");
        let wq = matrix(&mut c, p("wq"), d, f, v)?;
        let wk = matrix(&mut c, p("wk"), d, f, v)?;
        let wv = matrix(&mut c, p("wv"), d, f, v)?;
        let wo = matrix(&mut c, p("wo"), d, f, v)?;
        let w1 = matrix(&mut c, p("w1"), d, f, v)?;
        let w3 = matrix(&mut c, p("w3"), d, f, v)?;
        let w2 = matrix(&mut c, p("w2"), d, f, v)?;
        layers.push(LayerWeights {
            attn_norm: vector(&mut c, p("attn_norm"), d, f, v)?,
            wq,
            wk,
            wv,
            wo,
            ffn_norm: vector(&mut c, p("ffn_norm"), d, f, v)?,
            w1,
            w3,
            w2,
        });
    }
    let final_norm = vector(&mut c, "final_norm".into(), d, f, v)?;
    if let Some((name, _)) = c.tensors.first() {
        return Err(Error::Format(format!("unexpected tensor {name:?}")));
    }
    let weights = WeightBundle {
        embed,
        layers,
        final_norm,
        head,
    };
    weights.validate(&spec)?;
    Ok((spec, weights))
}

fn matrix<T: Scalar>(c: &mut Container, name: String, d: usize, f: usize, v: usize) -> Result<Array2<T>> {
    let (shape, data) = take_checked(c, &name, d, f, v)?;
    Ok(Array2::from_shape_vec((shape[0], shape[1]), data).expect("shape checked"))
}

fn vector<T: Scalar>(c: &mut Container, name: String, d: usize, f: usize, v: usize) -> Result<Array1<T>> {
    let (_, data) = take_checked(c, &name, d, f, v)?;
    Ok(Array1::from_vec(data))
}

fn take_checked<T: Scalar>(
    c: &mut Container,
    name: &str,
    d: usize,
    f: usize,
    v: usize,
) -> Result<(Vec<usize>, Vec<T>)> {
    let t = c.take_tensor(name)?;
    let expected = expected_shape(name, d, f, v);
    if t.shape != expected {
        return Err(Error::ShapeMismatch {
            name: name.to_owned(),
            expected,
            actual: t.shape,
        });
    }
    match t.data {
        TensorData::F32(data) => Ok((t.shape, data.into_iter().map(T::from_stored).collect())),
        TensorData::U64(_) => Err(Error::Format(format!("tensor {name:?} must be f32"))),
    }
}

impl<T: Scalar> Model<T> {
    /// SHA-256 of the serialized container (header and payload).
    pub fn fingerprint(&self) -> String {
        let bytes = model_to_container(self.spec(), self.weights())
            .and_then(|c| c.to_bytes())
            .expect("a validated model always serializes");
        digest_hex(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (spec, weights) = load_model(path)?;
        Self::new(spec, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(self.spec(), self.weights(), path)
    }
}
