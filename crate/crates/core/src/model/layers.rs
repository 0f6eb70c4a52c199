//! Stateless building blocks parameterized by a [`Bound`] set and a name prefix.

use rand::Rng;

use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Tensor};

pub const LN_EPS: f64 = 1e-5;
pub const L2_EPS: f64 = 1e-12;

pub fn init_linear(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) {
    store.uniform(&format!("{name}.w"), &[d_in, d_out], d_in, rng);
    store.constant(&format!("{name}.b"), &[d_out], 0.0);
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.constant(&format!("{name}.g"), &[d], 1.0);
    store.constant(&format!("{name}.b"), &[d], 0.0);
}

/// The key projection has no bias: adding a constant to every key shifts all scores
/// of a query equally and leaves the softmax unchanged.
pub fn init_attention(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) {
    for part in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{name}.{part}"), d, d, rng);
    }
    store.remove(&format!("{name}.k.b"));
}

pub fn init_conv(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) {
    store.uniform(&format!("{name}.w"), &[c_out, c_in, 3, 3], c_in * 9, rng);
    store.constant(&format!("{name}.b"), &[c_out], 0.0);
}

/// `x·W + b` over the last axis.
pub fn linear(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    x.matmul(&p[format!("{name}.w")])?
        .add(&p[format!("{name}.b")])
}

pub fn layer_norm(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    x.layer_norm(&p[format!("{name}.g")], &p[format!("{name}.b")], LN_EPS)
}

pub fn feed_forward(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    let h = linear(p, &format!("{name}.1"), x)?.relu();
    linear(p, &format!("{name}.2"), &h)
}

/// Two 3×3 stride-2 convolutions with ReLU: `[B,C,H,W] -> [B, H/4·W/4, d]`.
pub fn conv_stem(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    let spec = Conv2dSpec { stride: 2, padding: 1 };
    let w1 = &p[format!("{name}.conv1.w")];
    if x.ndim() != 4 || x.shape()[1] != w1.shape()[1] {
        return Err(Error::Dimension(format!(
            "stem {name} expects [B,{},H,W], got {:?}",
            w1.shape()[1],
            x.shape()
        )));
    }
    let h = x.conv2d(w1, Some(&p[format!("{name}.conv1.b")]), spec)?.relu();
    let h = h
        .conv2d(&p[format!("{name}.conv2.w")], Some(&p[format!("{name}.conv2.b")]), spec)?
        .relu();
    let s = h.shape().to_vec();
    h.reshape(&[s[0], s[1], s[2] * s[3]])?.permute(&[0, 2, 1])
}

/// Sinusoidal encoding of positions `0..len` into `dim` channels: channel `2i` holds
/// `sin(pos·ω_i)` and `2i+1` holds `cos(pos·ω_i)` with `ω_i = 10000^(-2i/dim)`.
pub fn pos_encoding_1d(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for pos in 0..len {
        for c in 0..dim {
            let i = c / 2;
            let omega = 10000f64.powf(-((2 * i) as f64) / dim as f64);
            let a = pos as f64 * omega;
            out[pos * dim + c] = if c % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    out
}

/// `[h·w, d]` encoding: the first `d/2` channels encode the row, the rest the column.
pub fn pos_encoding_2d(h: usize, w: usize, d: usize) -> Result<Tensor> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("2-D positional encoding needs even width, got {d}")));
    }
    let half = d / 2;
    let rows = pos_encoding_1d(h, half);
    let cols = pos_encoding_1d(w, half);
    let mut out = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            out.extend_from_slice(&rows[r * half..(r + 1) * half]);
            out.extend_from_slice(&cols[c * half..(c + 1) * half]);
        }
    }
    Tensor::new(&[h * w, d], out)
}

/// `[L, L]` additive mask: 0 where key ≤ query, −∞ elsewhere.
pub fn causal_mask(len: usize) -> Tensor {
    let data = (0..len * len)
        .map(|i| if i % len <= i / len { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    Tensor::new(&[len, len], data).unwrap()
}

/// Intermediate tensors of one attention call.
pub struct AttnTrace {
    /// `[B,H,Lq,Lk]`
    pub weights: Tensor,
    /// `[B,H,Lk,dh]`
    pub values: Tensor,
    /// Per-head outputs before the output projection, `[B,H,Lq,dh]`.
    pub heads: Tensor,
}

fn split_heads(x: &Tensor, n_heads: usize) -> Result<Tensor> {
    let s = x.shape();
    let (b, l, d) = (s[0], s[1], s[2]);
    x.reshape(&[b, l, n_heads, d / n_heads])?.permute(&[0, 2, 1, 3])
}

/// Multi-head attention with queries from `q_in` and keys/values from `kv_in`,
/// both `[B,L,d]`. `mask` is an additive `[Lq,Lk]` tensor.
pub fn attention(
    p: &Bound,
    name: &str,
    q_in: &Tensor,
    kv_in: &Tensor,
    n_heads: usize,
    mask: Option<&Tensor>,
) -> Result<(Tensor, AttnTrace)> {
    if q_in.ndim() != 3 || kv_in.ndim() != 3 || q_in.shape()[0] != kv_in.shape()[0] || q_in.shape()[2] != kv_in.shape()[2] {
        return Err(Error::Dimension(format!(
            "attention {name}: query {:?} and key/value {:?} are incompatible",
            q_in.shape(),
            kv_in.shape()
        )));
    }
    let (b, lq, d) = (q_in.shape()[0], q_in.shape()[1], q_in.shape()[2]);
    let dh = d / n_heads;
    let q = split_heads(&linear(p, &format!("{name}.q"), q_in)?, n_heads)?;
    let k = split_heads(&kv_in.matmul(&p[format!("{name}.k.w")])?, n_heads)?;
    let v = split_heads(&linear(p, &format!("{name}.v"), kv_in)?, n_heads)?;
    let mut scores = q.matmul_t(&k)?.scale(1.0 / (dh as f64).sqrt());
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    let weights = scores.softmax(3)?;
    let heads = weights.matmul(&v)?;
    let merged = heads.permute(&[0, 2, 1, 3])?.reshape(&[b, lq, d])?;
    let out = linear(p, &format!("{name}.o"), &merged)?;
    Ok((
        out,
        AttnTrace {
            weights,
            values: v,
            heads,
        },
    ))
}
