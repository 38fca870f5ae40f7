use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{CaptureSink, ModelSpec, NeuronMask, PositionalEncoding, WeightBundle};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A validated model ready for inference. Immutable; share freely across threads.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    weights: WeightBundle<T>,
    rope_cos: Vec<T>,
    rope_sin: Vec<T>,
}

/// Gate sign patterns of one sequence, indexed `[position][layer][neuron]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateSigns {
    n_layers: usize,
    d_ff: usize,
    bits: Vec<bool>,
}

impl GateSigns {
    pub fn get(&self, position: usize, layer: usize) -> &[bool] {
        let start = (position * self.n_layers + layer) * self.d_ff;
        &self.bits[start..start + self.d_ff]
    }

    pub fn len(&self) -> usize {
        self.bits.len() / (self.n_layers * self.d_ff).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, weights: WeightBundle<T>) -> Result<Self> {
        spec.validate()?;
        weights.validate(&spec)?;
        let half = spec.head_dim() / 2;
        let PositionalEncoding::Rope { theta } = spec.positional;
        let mut rope_cos = Vec::with_capacity(spec.max_seq_len * half);
        let mut rope_sin = Vec::with_capacity(spec.max_seq_len * half);
        for pos in 0..spec.max_seq_len {
            for i in 0..half {
                let freq = theta.powf(-2.0 * i as f64 / spec.head_dim() as f64);
                let angle = pos as f64 * freq;
                rope_cos.push(T::from_f64_lossy(angle.cos()));
                rope_sin.push(T::from_f64_lossy(angle.sin()));
            }
        }
        Ok(Self {
            spec,
            weights,
            rope_cos,
            rope_sin,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightBundle<T> {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelSpec, WeightBundle<T>) {
        (self.spec, self.weights)
    }

    /// Logits `[seq_len, vocab_size]`.
    pub fn forward(
        &self,
        tokens: &[u32],
        mask: Option<&NeuronMask>,
        capture: Option<&mut dyn CaptureSink>,
    ) -> Result<Array2<T>> {
        Ok(self
            .run(tokens, mask, capture, true)?
            .expect("logits requested"))
    }

    /// Runs the blocks only as far as needed to observe every gate; no logits.
    pub fn capture(&self, tokens: &[u32], sink: &mut dyn CaptureSink) -> Result<()> {
        self.run(tokens, None, Some(sink), false).map(|_| ())
    }

    pub fn gate_signs(&self, tokens: &[u32]) -> Result<GateSigns> {
        let (n_layers, d_ff) = (self.spec.n_layers, self.spec.d_ff);
        let mut bits = vec![false; tokens.len() * n_layers * d_ff];
        let mut sink = |pos: usize, layer: usize, active: &[bool]| {
            let start = (pos * n_layers + layer) * d_ff;
            bits[start..start + d_ff].copy_from_slice(active);
        };
        self.capture(tokens, &mut sink)?;
        Ok(GateSigns {
            n_layers,
            d_ff,
            bits,
        })
    }

    /// Natural-log NLL of `tokens[t]` under `logits[t - 1]` for `t` in `1..len`.
    pub fn token_nlls(&self, tokens: &[u32], mask: Option<&NeuronMask>) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Err(Error::Empty(format!(
                "need at least 2 tokens to score, got {}",
                tokens.len()
            )));
        }
        let logits = self.forward(tokens, mask, None)?;
        let nlls = logits
            .axis_iter(Axis(0))
            .zip(&tokens[1..])
            .map(|(row, &target)| nll(row, target as usize))
            .collect();
        Ok(nlls)
    }

    /// The GLU feed-forward of `layer` applied to an already-normalized input.
    pub fn ffn_output(&self, layer: usize, input: &[T], mask: Option<&NeuronMask>) -> Result<Array1<T>> {
        let lw = self
            .weights
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidSpec(format!("no layer {layer}")))?;
        if input.len() != self.spec.d_model {
            return Err(Error::ShapeMismatch {
                name: "ffn input".into(),
                expected: vec![self.spec.d_model],
                actual: vec![input.len()],
            });
        }
        if let Some(m) = mask {
            self.check_mask(m)?;
        }
        let h = ArrayView1::from(input);
        let g = h.dot(&lw.w1);
        let u = h.dot(&lw.w3);
        let act = self.spec.act_fn;
        let prod = Array1::from_iter(g.iter().zip(&u).enumerate().map(|(j, (&g, &u))| {
            if mask.is_some_and(|m| m.layer(layer)[j]) {
                T::zero()
            } else {
                act.apply(g) * u
            }
        }));
        Ok(prod.dot(&lw.w2))
    }

    fn check_mask(&self, mask: &NeuronMask) -> Result<()> {
        if mask.n_layers() != self.spec.n_layers || mask.d_ff() != self.spec.d_ff {
            return Err(Error::ShapeMismatch {
                name: "neuron mask".into(),
                expected: vec![self.spec.n_layers, self.spec.d_ff],
                actual: vec![mask.n_layers(), mask.d_ff()],
            });
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.spec.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.spec.max_seq_len,
            });
        }
        if let Some((position, &id)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= self.spec.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                id,
                position,
                vocab_size: self.spec.vocab_size,
            });
        }
        Ok(())
    }

    fn run(
        &self,
        tokens: &[u32],
        mask: Option<&NeuronMask>,
        mut capture: Option<&mut dyn CaptureSink>,
        want_logits: bool,
    ) -> Result<Option<Array2<T>>> {
        self.check_tokens(tokens)?;
        if let Some(m) = mask {
            self.check_mask(m)?;
        }
        let spec = &self.spec;
        let n = tokens.len();
        let eps = T::from_f64_lossy(spec.norm_eps);

        let mut x = Array2::<T>::zeros((n, spec.d_model));
        for (mut row, &id) in x.axis_iter_mut(Axis(0)).zip(tokens) {
            row.assign(&self.weights.embed.row(id as usize));
        }

        let mut active = vec![false; spec.d_ff];
        let last = spec.n_layers - 1;
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let h = rms_norm(&x, &lw.attn_norm, eps);
            let mut q = h.dot(&lw.wq);
            let mut k = h.dot(&lw.wk);
            let v = h.dot(&lw.wv);
            self.apply_rope(&mut q);
            self.apply_rope(&mut k);
            let att = causal_attention(&q, &k, &v, spec.n_heads);
            x += &att.dot(&lw.wo);

            let h = rms_norm(&x, &lw.ffn_norm, eps);
            let mut gate = h.dot(&lw.w1);
            let up = h.dot(&lw.w3);
            let layer_mask = mask.map(|m| m.layer(l));
            for (t, (mut g_row, u_row)) in gate
                .axis_iter_mut(Axis(0))
                .zip(up.axis_iter(Axis(0)))
                .enumerate()
            {
                for (j, (g, &u)) in g_row.iter_mut().zip(u_row.iter()).enumerate() {
                    let a = spec.act_fn.apply(*g);
                    active[j] = a > T::zero();
                    let masked = layer_mask.is_some_and(|m| m[j]);
                    *g = if masked { T::zero() } else { a * u };
                }
                if let Some(sink) = capture.as_deref_mut() {
                    sink.record(t, l, &active);
                }
            }
            if !want_logits && l == last {
                return Ok(None);
            }
            x += &gate.dot(&lw.w2);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("residual stream after layer {l}")));
            }
        }

        let h = rms_norm(&x, &self.weights.final_norm, eps);
        let logits = h.dot(&self.weights.head);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Some(logits))
    }

    fn apply_rope(&self, m: &mut Array2<T>) {
        let hd = self.spec.head_dim();
        let half = hd / 2;
        for (pos, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
            let cos = &self.rope_cos[pos * half..(pos + 1) * half];
            let sin = &self.rope_sin[pos * half..(pos + 1) * half];
            let row = row.as_slice_mut().expect("standard layout");
            for head in row.chunks_exact_mut(hd) {
                for (i, pair) in head.chunks_exact_mut(2).enumerate() {
                    let (a, b) = (pair[0], pair[1]);
                    pair[0] = a * cos[i] - b * sin[i];
                    pair[1] = a * sin[i] + b * cos[i];
                }
            }
        }
    }
}

fn rms_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, eps: T) -> Array2<T> {
    let d = T::from_usize(x.ncols()).expect("dimension fits scalar");
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / d;
        let inv = T::one() / (ms + eps).sqrt();
        row.iter_mut().zip(gain).for_each(|(v, &g)| *v = *v * inv * g);
    }
    out
}

fn causal_attention<T: Scalar>(q: &Array2<T>, k: &Array2<T>, v: &Array2<T>, n_heads: usize) -> Array2<T> {
    let (n, d) = q.dim();
    let hd = d / n_heads;
    let scale = T::one() / T::from_usize(hd).expect("dimension fits scalar").sqrt();
    let (q, k, v) = (
        q.as_slice().expect("standard layout"),
        k.as_slice().expect("standard layout"),
        v.as_slice().expect("standard layout"),
    );
    let mut out = Array2::<T>::zeros((n, d));
    let o = out.as_slice_mut().expect("standard layout");
    let mut scores = vec![T::zero(); n];
    for h in 0..n_heads {
        let off = h * hd;
        for t in 0..n {
            let qt = &q[t * d + off..t * d + off + hd];
            let mut max = T::neg_infinity();
            for (s, score) in scores.iter_mut().enumerate().take(t + 1) {
                let ks = &k[s * d + off..s * d + off + hd];
                let dot = qt.iter().zip(ks).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * scale;
                *score = dot;
                max = max.max(dot);
            }
            let mut sum = T::zero();
            for score in &mut scores[..=t] {
                *score = (*score - max).exp();
                sum = sum + *score;
            }
            let ot = &mut o[t * d + off..t * d + off + hd];
            for (s, &w) in scores[..=t].iter().enumerate() {
                let w = w / sum;
                let vs = &v[s * d + off..s * d + off + hd];
                ot.iter_mut().zip(vs).for_each(|(acc, &val)| *acc = *acc + w * val);
            }
        }
    }
    out
}

fn nll<T: Scalar>(logits: ArrayView1<T>, target: usize) -> f64 {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64_lossless()));
    let sum: f64 = logits
        .iter()
        .map(|&v| (v.to_f64_lossless() - max).exp())
        .sum();
    max + sum.ln() - logits[target].to_f64_lossless()
}
