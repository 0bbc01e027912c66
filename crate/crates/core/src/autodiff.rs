//! A small tape-based reverse-mode differentiation core.
//!
//! The tape records a fixed set of operations (same-padded 2-D convolution,
//! leaky ReLU, logistic, D-map blend, Charbonnier mean and weighted sums of
//! scalars). [`Tape::backward`] walks the tape in reverse and stores the
//! gradient of the root in every node that requires one.

use crate::blend::{blend_backward, blend_value, charbonnier_mean, charbonnier_mean_grad};

/// An n-dimensional array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {shape:?} does not match {} values",
            values.len()
        );
        Tensor {
            shape,
            values,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.values[0]
    }

    fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var },
    LeakyRelu { input: Var, slope: f64 },
    Logistic { input: Var },
    Blend { continuous: Var, previous: Var, mask: Var },
    Charbonnier { pred: Var, target: Var, eps: f64 },
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node {
    tensor: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Smallest distance the logistic output keeps from 0 and 1.
pub const LOGISTIC_MARGIN: f64 = f64::EPSILON;

#[inline]
pub fn logistic(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(LOGISTIC_MARGIN, 1.0 - LOGISTIC_MARGIN)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, tensor: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            tensor,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    /// Same-padded, stride-1 convolution. `input` is `[C, H, W]`, `weight`
    /// is `[O, C, K, K]` with odd `K`, `bias` is `[O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let geom = ConvGeometry::infer(x.shape(), w.shape(), b.shape());
        let out = conv2d_forward(&geom, x.values(), w.values(), b.values());
        let rg = self.needs(&[input, weight, bias]);
        self.push(
            Tensor::new(vec![geom.c_out, geom.h, geom.w], out),
            Op::Conv2d { input, weight, bias },
            rg,
        )
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let x = self.value(input);
        let values = x
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let t = Tensor::new(x.shape().to_vec(), values);
        let rg = self.needs(&[input]);
        self.push(t, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn logistic(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let t = Tensor::new(x.shape().to_vec(), x.values().iter().map(|&v| logistic(v)).collect());
        let rg = self.needs(&[input]);
        self.push(t, Op::Logistic { input }, rg)
    }

    /// `continuous * (1 - mask) + previous * mask` with `[3, H, W]` frames and
    /// a `[1, H, W]` mask broadcast over channels.
    pub fn blend(&mut self, continuous: Var, previous: Var, mask: Var) -> Var {
        let c = self.value(continuous);
        let p = self.value(previous);
        let m = self.value(mask);
        assert_eq!(c.shape(), p.shape());
        let plane = m.len();
        assert_eq!(c.len(), plane * 3, "blend expects [3,H,W] frames and a [1,H,W] mask");
        let values = (0..plane * 3)
            .map(|k| blend_value(c.values()[k], p.values()[k], m.values()[k % plane]))
            .collect();
        let t = Tensor::new(c.shape().to_vec(), values);
        let rg = self.needs(&[continuous, previous, mask]);
        self.push(
            t,
            Op::Blend {
                continuous,
                previous,
                mask,
            },
            rg,
        )
    }

    /// Scalar mean Charbonnier penalty of `pred - target`.
    pub fn charbonnier(&mut self, pred: Var, target: Var, eps: f64) -> Var {
        let p = self.value(pred);
        let t = self.value(target);
        assert_eq!(p.len(), t.len());
        let v = charbonnier_mean(p.values(), t.values(), eps);
        let rg = self.needs(&[pred, target]);
        self.push(Tensor::scalar(v), Op::Charbonnier { pred, target, eps }, rg)
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(t, w)| w * self.value(t).item()).sum();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&vars);
        self.push(Tensor::scalar(v), Op::WeightedSum { terms: terms.to_vec() }, rg)
    }

    /// Back-propagates from a scalar `root`, filling gradients of every node
    /// that requires one. Gradients from earlier calls are cleared first.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        for n in &mut self.nodes {
            n.tensor.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return;
        }
        self.nodes[root.0].tensor.grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g_out) = self.nodes[i].tensor.grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g_out);
            self.nodes[i].tensor.grad = Some(g_out);
            for (v, g) in contributions {
                if self.nodes[v.0].requires_grad {
                    self.nodes[v.0].tensor.accumulate_grad(&g);
                }
            }
        }
    }

    fn local_grads(&self, i: usize, g_out: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => vec![],
            &Op::Conv2d { input, weight, bias } => {
                let x = self.value(input);
                let w = self.value(weight);
                let geom = ConvGeometry::infer(x.shape(), w.shape(), self.value(bias).shape());
                let want_input = self.nodes[input.0].requires_grad;
                let grads = conv2d_backward(&geom, x.values(), w.values(), g_out, want_input);
                let mut out = vec![(weight, grads.weight), (bias, grads.bias)];
                if let Some(gi) = grads.input {
                    out.push((input, gi));
                }
                out
            }
            &Op::LeakyRelu { input, slope } => {
                let x = self.value(input).values();
                let g = x
                    .iter()
                    .zip(g_out)
                    .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                    .collect();
                vec![(input, g)]
            }
            &Op::Logistic { input } => {
                let s = node.tensor.values();
                let g = s.iter().zip(g_out).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                vec![(input, g)]
            }
            &Op::Blend {
                continuous,
                previous,
                mask,
            } => {
                let g = blend_backward(
                    self.value(continuous).values(),
                    self.value(previous).values(),
                    self.value(mask).values(),
                    g_out,
                );
                vec![(continuous, g.continuous), (previous, g.previous), (mask, g.mask)]
            }
            &Op::Charbonnier { pred, target, eps } => {
                let mut g = charbonnier_mean_grad(self.value(pred).values(), self.value(target).values(), eps);
                for v in &mut g {
                    *v *= g_out[0];
                }
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                vec![(pred, g), (target, neg)]
            }
            Op::WeightedSum { terms } => terms.iter().map(|&(v, w)| (v, vec![w * g_out[0]])).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeometry {
    fn infer(x: &[usize], w: &[usize], b: &[usize]) -> Self {
        assert_eq!(x.len(), 3, "conv input must be [C,H,W], got {x:?}");
        assert_eq!(w.len(), 4, "conv weight must be [O,C,K,K], got {w:?}");
        assert_eq!(w[1], x[0], "conv channel mismatch");
        assert_eq!(w[2], w[3]);
        assert!(w[2] % 2 == 1, "kernel size must be odd");
        assert_eq!(b, &[w[0]], "bias must be [O]");
        ConvGeometry {
            c_in: x[0],
            c_out: w[0],
            h: x[1],
            w: x[2],
            k: w[2],
        }
    }

    /// Output row range and column range for kernel offset `(ky, kx)`, with
    /// the signed source shift.
    #[inline]
    fn valid(&self, ky: usize, kx: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>, isize, isize) {
        let pad = (self.k / 2) as isize;
        let dy = ky as isize - pad;
        let dx = kx as isize - pad;
        let rows = (-dy).max(0) as usize..(self.h as isize - dy).min(self.h as isize).max(0) as usize;
        let cols = (-dx).max(0) as usize..(self.w as isize - dx).min(self.w as isize).max(0) as usize;
        (rows, cols, dy, dx)
    }
}

pub fn conv2d_forward(g: &ConvGeometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let mut out = vec![0.0; g.c_out * plane];
    for co in 0..g.c_out {
        let out_plane = &mut out[co * plane..(co + 1) * plane];
        out_plane.fill(b[co]);
        for ci in 0..g.c_in {
            let in_plane = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = w[(co * g.c_in + ci) * kk + ky * g.k + kx];
                    let (rows, cols, dy, dx) = g.valid(ky, kx);
                    if cols.is_empty() {
                        continue;
                    }
                    for y in rows {
                        let sy = (y as isize + dy) as usize;
                        let src_start = (sy * g.w) as isize + cols.start as isize + dx;
                        let src = &in_plane[src_start as usize..src_start as usize + cols.len()];
                        let dst = &mut out_plane[y * g.w + cols.start..y * g.w + cols.end];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(g: &ConvGeometry, x: &[f64], w: &[f64], g_out: &[f64], want_input: bool) -> ConvGrads {
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let mut g_w = vec![0.0; w.len()];
    let mut g_b = vec![0.0; g.c_out];
    let mut g_x = want_input.then(|| vec![0.0; x.len()]);
    for co in 0..g.c_out {
        let go = &g_out[co * plane..(co + 1) * plane];
        g_b[co] = sum4(go);
        for ci in 0..g.c_in {
            let in_plane = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let widx = (co * g.c_in + ci) * kk + ky * g.k + kx;
                    let wv = w[widx];
                    let (rows, cols, dy, dx) = g.valid(ky, kx);
                    if cols.is_empty() {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in rows {
                        let sy = (y as isize + dy) as usize;
                        let src_start = ((sy * g.w) as isize + cols.start as isize + dx) as usize;
                        let src = &in_plane[src_start..src_start + cols.len()];
                        let grow = &go[y * g.w + cols.start..y * g.w + cols.end];
                        acc += dot4(grow, src);
                        if let Some(gx) = g_x.as_mut() {
                            let dst = &mut gx[ci * plane + src_start..ci * plane + src_start + cols.len()];
                            for (d, s) in dst.iter_mut().zip(grow) {
                                *d += wv * s;
                            }
                        }
                    }
                    g_w[widx] = acc;
                }
            }
        }
    }
    ConvGrads {
        input: g_x,
        weight: g_w,
        bias: g_b,
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn sum4(a: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l];
        }
    }
    let tail: f64 = a[chunks * 4..].iter().sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
