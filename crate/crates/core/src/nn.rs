//! Layer library on top of [`crate::autograd`].
//!
//! Convolutions are lowered to an im2col [`Graph::gather`] followed by a
//! single matrix product, so their gradients come for free from the two
//! primitives.

use std::rc::Rc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Mat, ParamId, ParamStore, Var, ZERO};

pub const LN_EPS: f64 = 1e-5;
pub const MASK_BIAS: f64 = -1e9;

/// Sinusoidal position table, `len × dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Mat {
    Array2::from_shape_fn((len, dim), |(t, j)| {
        let i = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Additive key-mask row: `0` for valid keys, [`MASK_BIAS`] for padding.
pub fn mask_bias_row(mask: &[bool]) -> Mat {
    Array2::from_shape_fn((1, mask.len()), |(_, j)| if mask[j] { 0.0 } else { MASK_BIAS })
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = Some(store.add_zeros(format!("{name}.bias"), 1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn without_bias(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        Self {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add_ones(format!("{name}.gamma"), 1, dim),
            beta: store.add_zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

/// 1-D convolution over time with symmetric "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), kernel * in_ch, out_ch, rng);
        let bias = store.add_zeros(format!("{name}.bias"), 1, out_ch);
        Self {
            weight,
            bias,
            kernel,
            in_ch,
            out_ch,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let t = g.rows(x);
        let cols = im2col_1d(t, self.in_ch, self.kernel);
        let patches = g.gather(x, t, self.kernel * self.in_ch, cols);
        let w = g.param(self.weight);
        let y = g.matmul(patches, w);
        let b = g.param(self.bias);
        g.add_row(y, b)
    }
}

fn im2col_1d(t: usize, ch: usize, kernel: usize) -> Rc<[u32]> {
    let pad = (kernel - 1) / 2;
    let mut index = Vec::with_capacity(t * kernel * ch);
    for row in 0..t {
        for k in 0..kernel {
            let src = row as isize + k as isize - pad as isize;
            if src < 0 || src >= t as isize {
                index.extend(std::iter::repeat_n(ZERO, ch));
            } else {
                let base = src as usize * ch;
                index.extend((0..ch).map(|c| (base + c) as u32));
            }
        }
    }
    index.into()
}

/// 1-D transposed convolution: input row `i` contributes `W_k` to output
/// row `i·stride + k`. Output length is `(T − 1)·stride + kernel`.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvTranspose1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        // Each output row sees about kernel/stride taps.
        let taps = kernel.div_ceil(stride).max(1);
        let limit = (6.0 / (taps * in_ch + out_ch) as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), kernel * in_ch, out_ch, limit, rng);
        let bias = store.add_zeros(format!("{name}.bias"), 1, out_ch);
        Self {
            weight,
            bias,
            kernel,
            stride,
            in_ch,
            out_ch,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len - 1) * self.stride + self.kernel
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let t = g.rows(x);
        let out_len = self.output_len(t);
        let ch = self.in_ch;
        let mut index = Vec::with_capacity(out_len * self.kernel * ch);
        for o in 0..out_len {
            for k in 0..self.kernel {
                let valid = o >= k && (o - k) % self.stride == 0 && (o - k) / self.stride < t;
                if valid {
                    let base = (o - k) / self.stride * ch;
                    index.extend((0..ch).map(|c| (base + c) as u32));
                } else {
                    index.extend(std::iter::repeat_n(ZERO, ch));
                }
            }
        }
        let patches = g.gather(x, out_len, self.kernel * ch, index.into());
        let w = g.param(self.weight);
        let y = g.matmul(patches, w);
        let b = g.param(self.bias);
        g.add_row(y, b)
    }
}

/// Geometry of a rows-as-voxels volume: row `(t·H + h)·W + w`, one column per channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Volume {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Volume {
    pub fn voxels(&self) -> usize {
        self.t * self.h * self.w
    }
}

/// 3-D convolution with temporal stride 1 and "same" temporal padding.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: (usize, usize, usize),
    pub stride_hw: (usize, usize),
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize, usize),
        stride_hw: (usize, usize),
    ) -> Self {
        let fan_in = kernel.0 * kernel.1 * kernel.2 * in_ch;
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, out_ch, rng);
        let bias = store.add_zeros(format!("{name}.bias"), 1, out_ch);
        Self {
            weight,
            bias,
            kernel,
            stride_hw,
            in_ch,
            out_ch,
        }
    }

    pub fn output_volume(&self, v: Volume) -> Volume {
        let (_, kh, kw) = self.kernel;
        let (sh, sw) = self.stride_hw;
        let (ph, pw) = (kh / 2, kw / 2);
        Volume {
            t: v.t,
            h: (v.h + 2 * ph - kh) / sh + 1,
            w: (v.w + 2 * pw - kw) / sw + 1,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, vol: Volume) -> (Var, Volume) {
        assert_eq!(g.rows(x), vol.voxels(), "conv3d volume rows");
        let out = self.output_volume(vol);
        let (kt, kh, kw) = self.kernel;
        let (sh, sw) = self.stride_hw;
        let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        let ch = self.in_ch;
        let cols = kt * kh * kw * ch;
        let mut index = Vec::with_capacity(out.voxels() * cols);
        for ot in 0..out.t {
            for oh in 0..out.h {
                for ow in 0..out.w {
                    for dt in 0..kt {
                        let it = ot as isize + dt as isize - pt;
                        for dh in 0..kh {
                            let ih = (oh * sh) as isize + dh as isize - ph;
                            for dw in 0..kw {
                                let iw = (ow * sw) as isize + dw as isize - pw;
                                let inside = it >= 0
                                    && ih >= 0
                                    && iw >= 0
                                    && (it as usize) < vol.t
                                    && (ih as usize) < vol.h
                                    && (iw as usize) < vol.w;
                                if inside {
                                    let row = (it as usize * vol.h + ih as usize) * vol.w
                                        + iw as usize;
                                    index.extend((0..ch).map(|c| (row * ch + c) as u32));
                                } else {
                                    index.extend(std::iter::repeat_n(ZERO, ch));
                                }
                            }
                        }
                    }
                }
            }
        }
        let patches = g.gather(x, out.voxels(), cols, index.into());
        let w = g.param(self.weight);
        let y = g.matmul(patches, w);
        let b = g.param(self.bias);
        (g.add_row(y, b), out)
    }
}

/// Scaled dot-product attention split over `heads`, followed by an output mix.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Output of [`MultiHeadAttention::forward`]; `weights[h]` is `T_q × T_k`.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "heads must divide dim");
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim),
            key: Linear::new(store, rng, &format!("{name}.key"), dim, dim),
            value: Linear::new(store, rng, &format!("{name}.value"), dim, dim),
            output: Linear::new(store, rng, &format!("{name}.output"), dim, dim),
            heads,
            dim,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        keys: Var,
        key_mask: Option<&[bool]>,
    ) -> Attended {
        let q = self.query.forward(g, queries);
        let k = self.key.forward(g, keys);
        let v = self.value.forward(g, keys);
        let bias = key_mask
            .filter(|m| m.iter().any(|&x| !x))
            .map(|m| g.constant(mask_bias_row(m)));
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dk, dk),
                    g.slice_cols(k, h * dk, dk),
                    g.slice_cols(v, h * dk, dk),
                )
            };
            let scores = g.matmul_nt(qh, kh);
            let mut scores = g.scale(scores, scale);
            if let Some(b) = bias {
                scores = g.add_row(scores, b);
            }
            let w = g.softmax_rows(scores);
            outs.push(g.matmul(w, vh));
            weights.push(w);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        Attended {
            output: self.output.forward(g, cat),
            weights,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FftBlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub ffn_kernels: (usize, usize),
    pub dropout: f64,
}

/// Feed-forward transformer block: self-attention and a convolutional
/// feed-forward sublayer, each wrapped in residual + layer norm.
#[derive(Clone, Debug)]
pub struct FftBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl FftBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: FftBlockConfig) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), cfg.dim, cfg.heads),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.dim),
            conv1: Conv1d::new(
                store,
                rng,
                &format!("{name}.conv1"),
                cfg.dim,
                cfg.ffn_hidden,
                cfg.ffn_kernels.0,
            ),
            conv2: Conv1d::new(
                store,
                rng,
                &format!("{name}.conv2"),
                cfg.ffn_hidden,
                cfg.dim,
                cfg.ffn_kernels.1,
            ),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.dim),
            dropout: cfg.dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &[bool]) -> Var {
        let att = self.attention.forward(g, x, x, Some(mask)).output;
        let att = g.dropout(att, self.dropout);
        let y = g.add(x, att);
        let y = self.norm1.forward(g, y);
        let y = g.mask_rows(y, mask);

        let h = self.conv1.forward(g, y);
        let h = g.relu(h);
        let h = self.conv2.forward(g, h);
        let h = g.dropout(h, self.dropout);
        let z = g.add(y, h);
        let z = self.norm2.forward(g, z);
        g.mask_rows(z, mask)
    }
}

/// Positional encoding at entry followed by a stack of [`FftBlock`]s.
#[derive(Clone, Debug)]
pub struct FftStack {
    pub blocks: Vec<FftBlock>,
    pub dim: usize,
}

impl FftStack {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        depth: usize,
        cfg: FftBlockConfig,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| FftBlock::new(store, rng, &format!("{name}.{i}"), cfg))
            .collect();
        Self {
            blocks,
            dim: cfg.dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &[bool]) -> Var {
        let pe = g.constant(sinusoidal_positions(g.rows(x), self.dim));
        let mut h = g.add(x, pe);
        h = g.mask_rows(h, mask);
        for block in &self.blocks {
            h = block.forward(g, h, mask);
        }
        h
    }
}

/// `Conv1d(k) → ReLU → LayerNorm → Dropout`, twice, then a per-frame scalar head.
#[derive(Clone, Debug)]
pub struct VariancePredictor {
    pub conv1: Conv1d,
    pub norm1: LayerNorm,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub head: Linear,
    pub dropout: f64,
}

impl VariancePredictor {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        hidden: usize,
        kernel: usize,
        dropout: f64,
    ) -> Self {
        Self {
            conv1: Conv1d::new(store, rng, &format!("{name}.conv1"), dim, hidden, kernel),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), hidden),
            conv2: Conv1d::new(store, rng, &format!("{name}.conv2"), hidden, hidden, kernel),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), hidden),
            head: Linear::new(store, rng, &format!("{name}.head"), hidden, 1),
            dropout,
        }
    }

    /// `T × dim` → `T × 1`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.conv1.forward(g, x);
        let h = g.relu(h);
        let h = self.norm1.forward(g, h);
        let h = g.dropout(h, self.dropout);
        let h = self.conv2.forward(g, h);
        let h = g.relu(h);
        let h = self.norm2.forward(g, h);
        let h = g.dropout(h, self.dropout);
        self.head.forward(g, h)
    }
}
