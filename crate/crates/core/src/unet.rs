//! Encoder-decoder building blocks shared by the baseline segmenter and the
//! denoising network.
//!
//! Level `l` of the encoder runs two 3x3x3 convolutions at width
//! `base_width * 2^l`; every level after the first starts with a stride-2
//! convolution, so there is no pooling. The decoder upsamples with 2x2x2
//! stride-2 transposed convolutions and concatenates the encoder skip of the
//! same level before its own two convolutions. Each convolution is followed
//! by instance normalization and the configured activation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, ConvGeom, Graph, NodeId, ParamId, ParamStore, Real, Tensor};

/// Normalization applied after every convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub levels: usize,
    pub base_width: usize,
    pub activation: Activation,
    pub normalization: Normalization,
}

impl ArchSpec {
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial dims must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// `(C, D, W, H)` of each encoder level's output for input dims `dims`.
    pub fn level_shapes(&self, dims: [usize; 3]) -> Option<Vec<[usize; 4]>> {
        let mut spatial = dims;
        (0..self.levels)
            .map(|l| {
                if l > 0 {
                    spatial = ConvGeom::forward(spatial, 3, 2, 1)?.dst;
                }
                Some([self.width(l), spatial[0], spatial[1], spatial[2]])
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ConvNorm {
    conv: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

impl ConvNorm {
    fn build<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv: store.kaiming(format!("{name}.conv"), vec![cout, cin, 3, 3, 3], cin * 27, rng),
            gamma: store.constant(format!("{name}.gamma"), vec![cout], 1.0),
            beta: store.constant(format!("{name}.beta"), vec![cout], 0.0),
        }
    }

    fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: NodeId, stride: usize) -> NodeId {
        let y = g.conv(x, self.conv, None, stride, 1);
        g.instance_norm(y, self.gamma, self.beta)
    }
}

/// Two conv-norm-activation stages, optionally shifted by a time embedding
/// after the first normalization.
#[derive(Debug, Clone)]
struct Block {
    first: ConvNorm,
    second: ConvNorm,
    stride: usize,
    time: Option<(ParamId, ParamId)>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn build<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        time_dim: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let first = ConvNorm::build(store, &format!("{name}.0"), cin, cout, rng);
        let second = ConvNorm::build(store, &format!("{name}.1"), cout, cout, rng);
        let time = time_dim.map(|e| {
            (
                store.kaiming(format!("{name}.time.w"), vec![cout, e], e, rng),
                store.constant(format!("{name}.time.b"), vec![cout], 0.0),
            )
        });
        Self {
            first,
            second,
            stride,
            time,
        }
    }

    fn forward<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        x: NodeId,
        temb: Option<NodeId>,
        act: Activation,
    ) -> NodeId {
        let mut h = self.first.forward(g, x, self.stride);
        if let (Some((w, b)), Some(t)) = (self.time, temb) {
            let shift = g.linear(t, w, b);
            h = g.channel_bias(h, shift);
        }
        let h = g.activation(h, act);
        let h = self.second.forward(g, h, 1);
        g.activation(h, act)
    }
}

/// Contracting path; returns one feature map per level.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<Block>,
    activation: Activation,
}

impl Encoder {
    pub fn build<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        spec: &ArchSpec,
        time_dim: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let blocks = (0..spec.levels)
            .map(|l| {
                let cin = if l == 0 {
                    spec.in_channels
                } else {
                    spec.width(l - 1)
                };
                let stride = if l == 0 { 1 } else { 2 };
                Block::build(
                    store,
                    &format!("{prefix}.enc{l}"),
                    cin,
                    spec.width(l),
                    stride,
                    time_dim,
                    rng,
                )
            })
            .collect();
        Self {
            blocks,
            activation: spec.activation,
        }
    }

    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    /// Runs the encoder. When `inject` is given, `inject[l]` is added to the
    /// level-`l` output before it feeds both the next level and the skip.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        x: NodeId,
        temb: Option<NodeId>,
        inject: Option<&[NodeId]>,
    ) -> Vec<NodeId> {
        let mut feats = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for (l, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, h, temb, self.activation);
            if let Some(extra) = inject {
                h = g.add(h, extra[l]);
            }
            feats.push(h);
        }
        feats
    }
}

/// Expanding path and 1x1x1 output head.
#[derive(Debug, Clone)]
pub struct Decoder {
    ups: Vec<(ParamId, ParamId)>,
    blocks: Vec<Block>,
    head: (ParamId, ParamId),
    activation: Activation,
}

impl Decoder {
    pub fn build<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        spec: &ArchSpec,
        time_dim: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for l in (0..spec.levels - 1).rev() {
            let (wide, narrow) = (spec.width(l + 1), spec.width(l));
            ups.push((
                store.kaiming(format!("{prefix}.up{l}.w"), vec![wide, narrow, 2, 2, 2], wide * 8, rng),
                store.constant(format!("{prefix}.up{l}.b"), vec![narrow], 0.0),
            ));
            blocks.push(Block::build(
                store,
                &format!("{prefix}.dec{l}"),
                2 * narrow,
                narrow,
                1,
                time_dim,
                rng,
            ));
        }
        let w0 = spec.width(0);
        let head = (
            store.kaiming(format!("{prefix}.head.w"), vec![spec.out_channels, w0, 1, 1, 1], w0, rng),
            store.constant(format!("{prefix}.head.b"), vec![spec.out_channels], 0.0),
        );
        Self {
            ups,
            blocks,
            head,
            activation: spec.activation,
        }
    }

    /// Maps encoder features (shallowest first) to output logits.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, feats: &[NodeId], temb: Option<NodeId>) -> NodeId {
        let mut h = *feats.last().expect("at least one level");
        for (i, ((w, b), block)) in self.ups.iter().zip(&self.blocks).enumerate() {
            let skip = feats[feats.len() - 2 - i];
            let up = g.conv_transpose(h, *w, Some(*b), 2);
            let cat = g.concat(up, skip);
            h = block.forward(g, cat, temb, self.activation);
        }
        g.conv(h, self.head.0, Some(self.head.1), 1, 0)
    }
}

/// Sinusoidal timestep features followed by a two-layer SiLU MLP.
#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    pub features: usize,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

impl TimeEmbedding {
    pub fn build<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        features: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            features,
            fc1: (
                store.kaiming(format!("{prefix}.fc1.w"), vec![dim, features], features, rng),
                store.constant(format!("{prefix}.fc1.b"), vec![dim], 0.0),
            ),
            fc2: (
                store.kaiming(format!("{prefix}.fc2.w"), vec![dim, dim], dim, rng),
                store.constant(format!("{prefix}.fc2.b"), vec![dim], 0.0),
            ),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, t: usize) -> NodeId {
        let x = g.input(Tensor::new(vec![self.features], sinusoidal(t, self.features)));
        let h = g.linear(x, self.fc1.0, self.fc1.1);
        let h = g.activation(h, Activation::Silu);
        let h = g.linear(h, self.fc2.0, self.fc2.1);
        g.activation(h, Activation::Silu)
    }
}

/// `[sin(t w_0), .., sin(t w_{k-1}), cos(t w_0), ..]` with geometric
/// frequencies `w_i = 10000^(-i/k)`.
pub fn sinusoidal<F: Real>(t: usize, features: usize) -> Vec<F> {
    let half = features / 2;
    let mut out = vec![F::zero(); features];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = F::c(arg.sin());
        out[half + i] = F::c(arg.cos());
    }
    out
}
