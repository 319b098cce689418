use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward, conv_t_backward, conv_t_forward, ConvGeom};
use super::{Gradients, ParamId, ParamStore, Real, Tensor};

const NORM_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Silu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<F> {
    Input,
    Conv {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    },
    ConvT {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Act {
        x: NodeId,
        kind: Activation,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    ChannelBias {
        x: NodeId,
        v: NodeId,
    },
    Linear {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Records a forward pass over parameters borrowed from a [`ParamStore`].
pub struct Graph<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn into_value(mut self, id: NodeId) -> Tensor<F> {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::zeros(vec![0]))
    }

    /// Convolution with weight `(cout, cin, k, k, k)`.
    pub fn conv(
        &mut self,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let wp = self.params.get(w);
        let (cout, cin, kernel) = (wp.shape[0], wp.shape[1], wp.shape[2]);
        let xv = self.value(x);
        assert_eq!(xv.channels(), cin, "conv {}: input channels", wp.name);
        let geom = ConvGeom::forward(xv.spatial(), kernel, stride, pad)
            .unwrap_or_else(|| panic!("conv {}: kernel larger than input", wp.name));
        let bias = b.map(|b| self.params.get(b).data.as_slice());
        let y = conv_forward(&xv.data, cin, &wp.data, bias, cout, &geom);
        let [d, ww, h] = geom.dst;
        self.push(
            Tensor::new(vec![cout, d, ww, h], y),
            Op::Conv {
                x,
                w,
                b,
                cin,
                cout,
                geom,
            },
        )
    }

    /// Transposed convolution with weight `(cin, cout, k, k, k)`.
    pub fn conv_transpose(
        &mut self,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        stride: usize,
    ) -> NodeId {
        let wp = self.params.get(w);
        let (cin, cout, kernel) = (wp.shape[0], wp.shape[1], wp.shape[2]);
        let xv = self.value(x);
        assert_eq!(xv.channels(), cin, "conv_transpose {}: input channels", wp.name);
        let geom = ConvGeom::transposed(xv.spatial(), kernel, stride, 0)
            .expect("transposed convolution geometry");
        let bias = b.map(|b| self.params.get(b).data.as_slice());
        let y = conv_t_forward(&xv.data, cin, &wp.data, bias, cout, &geom);
        let [d, ww, h] = geom.src;
        self.push(
            Tensor::new(vec![cout, d, ww, h], y),
            Op::ConvT {
                x,
                w,
                b,
                cin,
                cout,
                geom,
            },
        )
    }

    /// Per-channel normalization over all voxels, with affine `gamma`, `beta`.
    pub fn instance_norm(&mut self, x: NodeId, gamma: ParamId, beta: ParamId) -> NodeId {
        let xv = self.value(x);
        let c = xv.channels();
        let n = xv.voxels();
        let g = &self.params.get(gamma).data;
        let b = &self.params.get(beta).data;
        let nf = F::c(n as f64);
        let mut xhat = vec![F::zero(); c * n];
        let mut y = vec![F::zero(); c * n];
        let mut inv_std = vec![F::zero(); c];
        for ch in 0..c {
            let src = &xv.data[ch * n..(ch + 1) * n];
            let mean = src.iter().copied().sum::<F>() / nf;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let is = F::one() / (var + F::c(NORM_EPS)).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let h = (src[i] - mean) * is;
                xhat[ch * n + i] = h;
                y[ch * n + i] = g[ch] * h + b[ch];
            }
        }
        let shape = xv.shape.clone();
        self.push(
            Tensor::new(shape, y),
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let xv = self.value(x);
        let data = match kind {
            Activation::LeakyRelu => {
                let s = F::c(LEAKY_SLOPE);
                xv.data
                    .iter()
                    .map(|&v| if v > F::zero() { v } else { v * s })
                    .collect()
            }
            Activation::Silu => xv.data.iter().map(|&v| v * sigmoid(v)).collect(),
        };
        let shape = xv.shape.clone();
        self.push(Tensor::new(shape, data), Op::Act { x, kind })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "add: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x + y).collect();
        let shape = av.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add { a, b })
    }

    /// Channel-wise concatenation of two `(C, D, W, H)` activations.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.spatial(), bv.spatial(), "concat: spatial mismatch");
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(&av.data);
        data.extend_from_slice(&bv.data);
        let [d, w, h] = av.spatial();
        let shape = vec![av.channels() + bv.channels(), d, w, h];
        self.push(Tensor::new(shape, data), Op::Concat { a, b })
    }

    /// Adds `v[c]` to every voxel of channel `c`.
    pub fn channel_bias(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (xv, vv) = (self.value(x), self.value(v));
        assert_eq!(xv.channels(), vv.len(), "channel_bias: width mismatch");
        let n = xv.voxels();
        let mut data = xv.data.clone();
        for (c, chunk) in data.chunks_mut(n).enumerate() {
            for e in chunk {
                *e += vv.data[c];
            }
        }
        let shape = xv.shape.clone();
        self.push(Tensor::new(shape, data), Op::ChannelBias { x, v })
    }

    /// `y = W x + b` for a vector `x`; `W` is `(out, in)`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let wp = self.params.get(w);
        let (out, inp) = (wp.shape[0], wp.shape[1]);
        let xv = self.value(x);
        assert_eq!(xv.len(), inp, "linear {}: input width", wp.name);
        let bias = &self.params.get(b).data;
        let data = (0..out)
            .map(|o| {
                bias[o]
                    + wp.data[o * inp..(o + 1) * inp]
                        .iter()
                        .zip(&xv.data)
                        .map(|(&a, &b)| a * b)
                        .sum::<F>()
            })
            .collect();
        self.push(Tensor::new(vec![out], data), Op::Linear { x, w, b })
    }

    /// Back-propagates `grad` (the loss gradient at `output`) to all
    /// parameters reachable from it.
    pub fn backward(&self, output: NodeId, grad: Vec<F>) -> Gradients<F> {
        assert_eq!(grad.len(), self.value(output).len(), "backward: seed gradient size");
        let mut grads = Gradients::zeros_like(self.params);
        let mut node_grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[output.0] = Some(grad);

        fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, g: Vec<F>) {
            match slot {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(g) {
                        *e += v;
                    }
                }
                None => *slot = Some(g),
            }
        }
        fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(dy) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Conv {
                    x,
                    w,
                    b,
                    cin,
                    cout,
                    geom,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                    let (dx, dw, db) = conv_backward(
                        &xv.data,
                        *cin,
                        &self.params.get(*w).data,
                        *cout,
                        geom,
                        &dy,
                        need_dx,
                    );
                    add_into(&mut grads.grads[w.0], &dw);
                    if let Some(b) = b {
                        add_into(&mut grads.grads[b.0], &db);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut node_grads[x.0], dx);
                    }
                }
                Op::ConvT {
                    x,
                    w,
                    b,
                    cin,
                    cout,
                    geom,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                    let (dx, dw, db) = conv_t_backward(
                        &xv.data,
                        *cin,
                        &self.params.get(*w).data,
                        *cout,
                        geom,
                        &dy,
                        need_dx,
                    );
                    add_into(&mut grads.grads[w.0], &dw);
                    if let Some(b) = b {
                        add_into(&mut grads.grads[b.0], &db);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut node_grads[x.0], dx);
                    }
                }
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let n = dy.len() / c;
                    let nf = F::c(n as f64);
                    let g = &self.params.get(*gamma).data;
                    let mut dx = vec![F::zero(); dy.len()];
                    for ch in 0..c {
                        let r = ch * n..(ch + 1) * n;
                        let (dyc, xh) = (&dy[r.clone()], &xhat[r.clone()]);
                        let sum_dy = dyc.iter().copied().sum::<F>();
                        let sum_dy_xh = dyc.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>();
                        grads.grads[gamma.0][ch] += sum_dy_xh;
                        grads.grads[beta.0][ch] += sum_dy;
                        let scale = g[ch] * inv_std[ch] / nf;
                        for (i, out) in dx[r].iter_mut().enumerate() {
                            *out = scale * (nf * dyc[i] - sum_dy - xh[i] * sum_dy_xh);
                        }
                    }
                    accumulate(&mut node_grads[x.0], dx);
                }
                Op::Act { x, kind } => {
                    let xv = &self.nodes[x.0].value.data;
                    let dx = match kind {
                        Activation::LeakyRelu => {
                            let s = F::c(LEAKY_SLOPE);
                            xv.iter()
                                .zip(&dy)
                                .map(|(&v, &g)| if v > F::zero() { g } else { g * s })
                                .collect()
                        }
                        Activation::Silu => xv
                            .iter()
                            .zip(&dy)
                            .map(|(&v, &g)| {
                                let s = sigmoid(v);
                                g * s * (F::one() + v * (F::one() - s))
                            })
                            .collect(),
                    };
                    accumulate(&mut node_grads[x.0], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut node_grads[b.0], dy.clone());
                    accumulate(&mut node_grads[a.0], dy);
                }
                Op::Concat { a, b } => {
                    let na = self.nodes[a.0].value.len();
                    let mut dy = dy;
                    let db = dy.split_off(na);
                    accumulate(&mut node_grads[b.0], db);
                    accumulate(&mut node_grads[a.0], dy);
                }
                Op::ChannelBias { x, v } => {
                    let c = self.nodes[v.0].value.len();
                    let n = dy.len() / c;
                    let dv = dy.chunks(n).map(|ch| ch.iter().copied().sum()).collect();
                    accumulate(&mut node_grads[v.0], dv);
                    accumulate(&mut node_grads[x.0], dy);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value.data;
                    let wp = &self.params.get(*w).data;
                    let inp = xv.len();
                    let mut dx = vec![F::zero(); inp];
                    for (o, &g) in dy.iter().enumerate() {
                        grads.grads[b.0][o] += g;
                        let row = &mut grads.grads[w.0][o * inp..(o + 1) * inp];
                        for i in 0..inp {
                            row[i] += g * xv[i];
                            dx[i] += g * wp[o * inp + i];
                        }
                    }
                    accumulate(&mut node_grads[x.0], dx);
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Loss = <y, r> for a fixed random r, so dL/dy = r.
    fn check_graph(build: impl Fn(&mut Graph<'_, f64>, NodeId) -> NodeId, store: &ParamStore<f64>, x: Tensor<f64>) {
        let mut g = Graph::new(store);
        let xi = g.input(x.clone());
        let y = build(&mut g, xi);
        let n = g.value(y).len();
        let r: Vec<f64> = (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0) - 0.5).collect();
        let grads = g.backward(y, r.clone());
        let loss = |s: &ParamStore<f64>| {
            let mut g = Graph::new(s);
            let xi = g.input(x.clone());
            let y = build(&mut g, xi);
            g.value(y).data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for pi in 0..store.len() {
            let len = store.iter().nth(pi).unwrap().data.len();
            for j in (0..len).step_by((len / 5).max(1)) {
                let mut plus = store.clone();
                plus.iter_mut().nth(pi).unwrap().data[j] += h;
                let mut minus = store.clone();
                minus.iter_mut().nth(pi).unwrap().data[j] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grads.grads[pi][j];
                assert!(
                    (numeric - analytic).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "param {pi}[{j}]: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    fn random_input(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
    }

    #[test]
    fn conv_norm_act_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let w1 = s.kaiming("w1", vec![3, 2, 3, 3, 3], 54, &mut rng);
        let b1 = s.kaiming("b1", vec![3], 3, &mut rng);
        let g1 = s.kaiming("g1", vec![3], 3, &mut rng);
        let be1 = s.kaiming("be1", vec![3], 3, &mut rng);
        let w2 = s.kaiming("w2", vec![3, 2, 2, 2, 2], 8, &mut rng);
        let b2 = s.kaiming("b2", vec![2], 3, &mut rng);
        check_graph(
            |g, x| {
                let a = g.conv(x, w1, Some(b1), 2, 1);
                let a = g.instance_norm(a, g1, be1);
                let a = g.activation(a, Activation::Silu);
                let up = g.conv_transpose(a, w2, Some(b2), 2);
                g.concat(up, x)
            },
            &s,
            random_input(vec![2, 4, 4, 4], 2),
        );
    }

    #[test]
    fn linear_bias_add_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f64>::new();
        let wl = s.kaiming("wl", vec![2, 3], 3, &mut rng);
        let bl = s.kaiming("bl", vec![2], 3, &mut rng);
        let w = s.kaiming("w", vec![2, 2, 1, 1, 1], 2, &mut rng);
        check_graph(
            |g, x| {
                let tv = g.input(Tensor::new(vec![3], vec![0.3, -0.2, 0.9]));
                let e = g.linear(tv, wl, bl);
                let e = g.activation(e, Activation::Silu);
                let y = g.conv(x, w, None, 1, 0);
                let y = g.channel_bias(y, e);
                let y2 = g.activation(y, Activation::LeakyRelu);
                g.add(y, y2)
            },
            &s,
            random_input(vec![2, 3, 2, 2], 4),
        );
    }
}
