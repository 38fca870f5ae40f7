//! Shared helpers for integration tests, including a plain-loop forward
//! pass that shares no code with the engine.

#![allow(dead_code)]

use natlas::model::{ActFn, ModelSpec, WeightBundle};
use natlas::Scalar;
use rand::Rng;

fn act(f: ActFn, x: f64) -> f64 {
    match f {
        ActFn::Silu => x * (1.0 / (1.0 + (-x).exp())),
        ActFn::Relu => x.max(0.0),
        ActFn::Gelu => 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh()),
    }
}

fn norm(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v / r * g).collect()
}

/// `x (1 x a) · w (a x b)` with `w[i][j]` read through `get`.
fn vecmat(x: &[f64], rows: usize, cols: usize, get: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..cols).map(|j| (0..rows).map(|i| x[i] * get(i, j)).sum()).collect()
}

fn rope(v: &mut [f64], pos: usize, head_dim: usize, theta: f64) {
    for head in v.chunks_mut(head_dim) {
        for i in 0..head_dim / 2 {
            let angle = pos as f64 / theta.powf(2.0 * i as f64 / head_dim as f64);
            let (s, c) = angle.sin_cos();
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * c - b * s;
            head[2 * i + 1] = a * s + b * c;
        }
    }
}

/// Logits for every position, in f64, with optional masked neurons.
pub fn reference_logits<T: Scalar>(
    spec: &ModelSpec,
    w: &WeightBundle<T>,
    tokens: &[u32],
    masked: &dyn Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let f = |v: T| v.to_f64_lossless();
    let (d, ff, v_size) = (spec.d_model, spec.d_ff, spec.vocab_size);
    let hd = d / spec.n_heads;
    let natlas::PositionalEncoding::Rope { theta } = spec.positional;
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| (0..d).map(|i| f(w.embed[[t as usize, i]])).collect())
        .collect();
    for (l, lw) in w.layers.iter().enumerate() {
        let g_attn: Vec<f64> = lw.attn_norm.iter().map(|&v| f(v)).collect();
        let mut qs = Vec::new();
        let mut ks = Vec::new();
        let mut vs = Vec::new();
        for (p, x) in xs.iter().enumerate() {
            let h = norm(x, &g_attn, spec.norm_eps);
            let mut q = vecmat(&h, d, d, |i, j| f(lw.wq[[i, j]]));
            let mut k = vecmat(&h, d, d, |i, j| f(lw.wk[[i, j]]));
            rope(&mut q, p, hd, theta);
            rope(&mut k, p, hd, theta);
            qs.push(q);
            ks.push(k);
            vs.push(vecmat(&h, d, d, |i, j| f(lw.wv[[i, j]])));
        }
        for t in 0..xs.len() {
            let mut att = vec![0.0; d];
            for head in 0..spec.n_heads {
                let r = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = (0..=t)
                    .map(|s| {
                        qs[t][r.clone()].iter().zip(&ks[s][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (s, es) in e.iter().enumerate() {
                    for i in r.clone() {
                        att[i] += es / z * vs[s][i];
                    }
                }
            }
            let o = vecmat(&att, d, d, |i, j| f(lw.wo[[i, j]]));
            xs[t].iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        let g_ffn: Vec<f64> = lw.ffn_norm.iter().map(|&v| f(v)).collect();
        for x in xs.iter_mut() {
            let h = norm(x, &g_ffn, spec.norm_eps);
            let gate = vecmat(&h, d, ff, |i, j| f(lw.w1[[i, j]]));
            let up = vecmat(&h, d, ff, |i, j| f(lw.w3[[i, j]]));
            let hidden: Vec<f64> = (0..ff)
                .map(|j| if masked(l, j) { 0.0 } else { act(spec.act_fn, gate[j]) * up[j] })
                .collect();
            let down = vecmat(&hidden, ff, d, |i, j| f(lw.w2[[i, j]]));
            x.iter_mut().zip(down).for_each(|(a, b)| *a += b);
        }
    }
    let g: Vec<f64> = w.final_norm.iter().map(|&v| f(v)).collect();
    xs.iter()
        .map(|x| vecmat(&norm(x, &g, spec.norm_eps), d, v_size, |i, j| f(w.head[[i, j]])))
        .collect()
}

/// NLL of each next token under the reference forward pass.
pub fn reference_nlls<T: Scalar>(spec: &ModelSpec, w: &WeightBundle<T>, tokens: &[u32]) -> Vec<f64> {
    let logits = reference_logits(spec, w, tokens, &|_, _| false);
    logits[..tokens.len() - 1]
        .iter()
        .zip(&tokens[1..])
        .map(|(row, &t)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[t as usize]
        })
        .collect()
}

pub fn random_spec<R: Rng>(rng: &mut R) -> ModelSpec {
    let n_heads = [1, 2, 4][rng.random_range(0..3)];
    ModelSpec {
        n_layers: rng.random_range(1..=3),
        d_model: n_heads * 2 * rng.random_range(1..=4),
        d_ff: rng.random_range(4..=24),
        n_heads,
        vocab_size: rng.random_range(5..=40),
        act_fn: [ActFn::Silu, ActFn::Relu, ActFn::Gelu][rng.random_range(0..3)],
        norm_eps: 1e-5,
        max_seq_len: 16,
        positional: Default::default(),
    }
}

pub fn random_tokens<R: Rng>(rng: &mut R, spec: &ModelSpec, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..spec.vocab_size as u32)).collect()
}
