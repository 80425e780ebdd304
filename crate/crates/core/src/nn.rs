//! Layers built on the tape: affine maps, layer norm, multi-head attention and
//! a pre-norm transformer encoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::tensor::Matrix;

pub fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

/// Small-normal table, used for embeddings.
pub fn embedding_init<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut m = crate::rng::normal_matrix(rng, rows, cols);
    m.scale_in_place(scale);
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), xavier(rng, d_in, d_out));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, d_out));
        Self { w, b }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Matrix::zeros(d_in, d_out));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, d_out));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Matrix::filled(1, d, 1.0));
        let beta = store.add(format!("{name}.beta"), Matrix::zeros(1, d));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Training-time dropout source; `None` means inference.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub fn dropout(g: &mut Graph, x: NodeId, drop: &mut Option<Dropout<'_>>) -> NodeId {
    let Some(d) = drop else { return x };
    if d.rate <= 0.0 {
        return x;
    }
    let (rows, cols) = g.value(x).shape();
    let keep = 1.0 / (1.0 - d.rate);
    let data = (0..rows * cols).map(|_| if d.rng.gen::<f64>() < d.rate { 0.0 } else { keep }).collect();
    let mask = g.constant(Matrix::from_vec(rows, cols, data));
    g.mul(x, mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "model width {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    /// Self-attention where only keys with `key_mask[i] == true` are attended.
    pub fn forward(&self, g: &mut Graph, x: NodeId, key_mask: &[bool]) -> NodeId {
        let d = g.value(x).cols;
        let dh = d / self.heads;
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, x);
        let v = self.v.forward(g, x);
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let att = g.masked_softmax(scores, scale, key_mask);
            outs.push(g.matmul(att, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(outs) };
        self.o.forward(g, cat)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: Attention::new(store, &format!("{name}.attn"), d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, ff, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, key_mask: &[bool], drop: &mut Option<Dropout<'_>>) -> NodeId {
        let h = self.ln1.forward(g, x);
        let h = self.attn.forward(g, h, key_mask);
        let h = dropout(g, h, drop);
        let x = g.add(x, h);
        let h = self.ln2.forward(g, x);
        let h = self.ff1.forward(g, h);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, h);
        let h = dropout(g, h, drop);
        g.add(x, h)
    }
}

/// Stack of pre-norm layers followed by a final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_f: LayerNorm,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layers: usize,
        d: usize,
        heads: usize,
        ff: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), d, heads, ff, rng))
            .collect();
        let ln_f = LayerNorm::new(store, &format!("{name}.ln_f"), d);
        Self { layers, ln_f }
    }

    pub fn forward(&self, g: &mut Graph, mut x: NodeId, key_mask: &[bool], drop: &mut Option<Dropout<'_>>) -> NodeId {
        for layer in &self.layers {
            x = layer.forward(g, x, key_mask, drop);
        }
        self.ln_f.forward(g, x)
    }
}
