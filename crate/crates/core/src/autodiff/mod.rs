//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! A [`Graph`] records every operation of one forward pass in topological
//! order, then [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients via the chain rule. Graphs are rebuilt per forward pass;
//! persistent state (network weights) lives in free-standing [`Tensor`]s that
//! are bound into a graph as leaves and receive their gradients back after
//! the backward pass.
//!
//! Everything is f64. There is no broadcasting beyond scalar-times-tensor;
//! shape changes are explicit `reshape` nodes.

mod adam;
pub(crate) mod linalg;

pub use adam::AdamState;

use crate::error::{Error, Result};
use linalg::{col2im_acc, conv_out_extent, im2col, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use rand::{Rng, RngExt};

pub type NodeId = usize;

/// An n-dimensional f64 array with a gradient buffer of the same extent.
///
/// A tensor on its own is plain data. Binding it into a [`Graph`] with
/// [`Graph::param`] or [`Graph::input`] assigns it a `node_id` for that
/// graph; gradients flow back with [`Graph::accumulate_grad_into`].
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub node_id: Option<NodeId>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            node_id: None,
            requires_grad: false,
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() || shape.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} does not hold {} values",
                shape,
                values.len()
            )));
        }
        let len = values.len();
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            grad: vec![0.0; len],
            node_id: None,
            requires_grad: false,
        })
    }

    /// Trainable tensor: `requires_grad` set.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut t = Self::from_values(shape, values)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            grad: vec![0.0],
            node_id: None,
            requires_grad: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Elementwise / per-pixel activation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    /// Normalizes over the channel axis of an NCHW tensor; per-pixel sums are 1.
    SoftmaxChannels,
}

/// Loss kinds accepted by [`Graph::loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    MeanSquared,
    CrossEntropy,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { stride: usize, padding: usize },
    BiasAdd,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    SoftmaxChannels,
    InstanceNorm { eps: f64 },
    UpsampleNearest2,
    Add,
    Sub,
    Mul,
    Scale { factor: f64 },
    AddScalar { offset: f64 },
    Reshape,
    Dropout { keep_scale: f64, mask: Vec<bool> },
    Sum,
    Mean,
    L1Loss,
    MseLoss,
    CrossEntropy { labels: Vec<u8>, classes: usize },
}

/// Saved forward context a backward rule needs beyond node values.
#[derive(Debug, Clone)]
enum Ctx {
    None,
    /// Per-(sample, channel) 1/sqrt(var + eps) for instance norm.
    InvStd(Vec<f64>),
    /// Per-pixel softmax probabilities for cross entropy.
    Probs(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    ctx: Ctx,
}

/// One recorded forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Value of a scalar (single-element) node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].values.len(), 1);
        self.nodes[id].values[0]
    }

    /// Bind a constant leaf (no gradient tracking).
    pub fn input(&mut self, shape: &[usize], values: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.push_leaf(shape.to_vec(), values, false)
    }

    /// Bind a tensor as a leaf, honoring its `requires_grad` flag, and stamp
    /// its `node_id` for this graph.
    pub fn param(&mut self, t: &mut Tensor) -> NodeId {
        let id = self.push_leaf(t.shape.clone(), t.values.clone(), t.requires_grad);
        t.node_id = Some(id);
        id
    }

    /// Bind a tensor as a constant leaf regardless of its `requires_grad`
    /// flag; no gradient reaches it. Used to hold one network fixed while
    /// the adversary trains.
    pub fn frozen(&mut self, t: &mut Tensor) -> NodeId {
        let id = self.push_leaf(t.shape.clone(), t.values.clone(), false);
        t.node_id = Some(id);
        id
    }

    fn push_leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> NodeId {
        let n = values.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape,
            values,
            grad: vec![0.0; n],
            requires_grad,
            ctx: Ctx::None,
        });
        self.nodes.len() - 1
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        debug_assert!(inputs.iter().all(|&i| i < self.nodes.len()));
        let (shape, values, ctx) = {
            let ins: Vec<(&[usize], &[f64])> = inputs
                .iter()
                .map(|&i| (self.nodes[i].shape.as_slice(), self.nodes[i].values.as_slice()))
                .collect();
            eval_op(&op, &ins)?
        };
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let n = values.len();
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            values,
            grad: vec![0.0; n],
            requires_grad,
            ctx,
        });
        Ok(self.nodes.len() - 1)
    }

    /// 2-D convolution over NCHW input with a KCkhkw kernel and zero padding.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        self.push(Op::Conv2d { stride, padding }, vec![x, kernel])
    }

    /// Adds a per-channel bias `[C]` to an NCHW tensor.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::BiasAdd, vec![x, bias])
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId> {
        match kind {
            Activation::LeakyRelu(slope) => {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(Error::Config(format!("leaky_relu slope {slope} outside (0,1)")));
                }
                self.push(Op::LeakyRelu { slope }, vec![x])
            }
            Activation::Tanh => self.push(Op::Tanh, vec![x]),
            Activation::Sigmoid => self.push(Op::Sigmoid, vec![x]),
            Activation::SoftmaxChannels => self.push(Op::SoftmaxChannels, vec![x]),
        }
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.activation(Activation::LeakyRelu(slope), x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn softmax_channels(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(Activation::SoftmaxChannels, x)
    }

    /// Per-(sample, channel) normalization over the spatial extent, no
    /// learned affine term.
    pub fn instance_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        self.push(Op::InstanceNorm { eps }, vec![x])
    }

    /// Nearest-neighbor 2x spatial upsampling of an NCHW tensor.
    pub fn upsample_nearest2(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::UpsampleNearest2, vec![x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale { factor }, vec![x])
    }

    pub fn add_scalar(&mut self, x: NodeId, offset: f64) -> Result<NodeId> {
        self.push(Op::AddScalar { offset }, vec![x])
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let n: usize = new_shape.iter().product();
        if n != self.nodes[x].values.len() {
            return Err(Error::DimensionMismatch(format!(
                "reshape to {:?} changes element count",
                new_shape
            )));
        }
        let id = self.push(Op::Reshape, vec![x])?;
        self.nodes[id].shape = new_shape.to_vec();
        Ok(id)
    }

    /// Inverted dropout: kept activations are rescaled by 1/(1-rate) so the
    /// expected value is unchanged. The mask is drawn once and stored on the
    /// node, which keeps `replay` deterministic.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        let n = self.nodes[x].values.len();
        let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= rate).collect();
        self.push(Op::Dropout { keep_scale: 1.0 / (1.0 - rate), mask }, vec![x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Mean, vec![x])
    }

    pub fn loss(&mut self, kind: LossKind, prediction: NodeId, target: NodeId) -> Result<NodeId> {
        match kind {
            LossKind::L1 => self.l1_loss(prediction, target),
            LossKind::MeanSquared => self.mse_loss(prediction, target),
            LossKind::CrossEntropy => Err(Error::Config(
                "cross entropy takes a label map; use cross_entropy_logits".into(),
            )),
        }
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, prediction: NodeId, target: NodeId) -> Result<NodeId> {
        self.push(Op::L1Loss, vec![prediction, target])
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, prediction: NodeId, target: NodeId) -> Result<NodeId> {
        self.push(Op::MseLoss, vec![prediction, target])
    }

    /// Mean over pixels of -ln p(true class). Takes raw logits `[N,C,H,W]`
    /// and per-pixel labels of length N*H*W; logits are max-shifted
    /// internally before exponentiation.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, labels: &[u8], classes: usize) -> Result<NodeId> {
        self.push(
            Op::CrossEntropy { labels: labels.to_vec(), classes },
            vec![logits],
        )
    }

    /// Reverse pass from a scalar loss node. Interior gradient buffers are
    /// reset on entry, then a unit seed propagates backward; leaf gradients
    /// accumulate across calls until cleared, so several losses can be
    /// backpropagated into the same parameters.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].values.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "backward needs a scalar loss node, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad.fill(0.0);
            }
        }
        self.nodes[loss].grad[0] += 1.0;
        for i in (0..=loss).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            self.backward_node(i)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, i: NodeId) -> Result<()> {
        let (before, rest) = self.nodes.split_at_mut(i);
        let node = &rest[0];
        let g_out = &node.grad;

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { stride, padding } => {
                backward_conv2d(before, node, *stride, *padding);
            }
            Op::BiasAdd => {
                let (x_id, b_id) = (node.inputs[0], node.inputs[1]);
                let (n, c) = (node.shape[0], node.shape[1]);
                let hw = node.shape[2] * node.shape[3];
                if before[x_id].requires_grad {
                    for (g, &go) in before[x_id].grad.iter_mut().zip(g_out) {
                        *g += go;
                    }
                }
                if before[b_id].requires_grad {
                    let gb = &mut before[b_id].grad;
                    for ni in 0..n {
                        for (ci, gbc) in gb.iter_mut().enumerate() {
                            let base = (ni * c + ci) * hw;
                            let mut acc = 0.0;
                            for &go in &g_out[base..base + hw] {
                                acc += go;
                            }
                            *gbc += acc;
                        }
                    }
                }
            }
            Op::LeakyRelu { slope } => {
                let x = &before[node.inputs[0]];
                let gs: Vec<f64> = g_out
                    .iter()
                    .zip(&x.values)
                    .map(|(&go, &xv)| if xv >= 0.0 { go } else { go * slope })
                    .collect();
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::Tanh => {
                let gs: Vec<f64> = g_out
                    .iter()
                    .zip(&node.values)
                    .map(|(&go, &y)| go * (1.0 - y * y))
                    .collect();
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::Sigmoid => {
                let gs: Vec<f64> = g_out
                    .iter()
                    .zip(&node.values)
                    .map(|(&go, &y)| go * y * (1.0 - y))
                    .collect();
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::SoftmaxChannels => {
                let (n, c) = (node.shape[0], node.shape[1]);
                let hw = node.shape[2] * node.shape[3];
                let y = &node.values;
                let mut gs = vec![0.0; y.len()];
                for ni in 0..n {
                    for px in 0..hw {
                        let mut dot = 0.0;
                        for ci in 0..c {
                            let idx = (ni * c + ci) * hw + px;
                            dot += g_out[idx] * y[idx];
                        }
                        for ci in 0..c {
                            let idx = (ni * c + ci) * hw + px;
                            gs[idx] = y[idx] * (g_out[idx] - dot);
                        }
                    }
                }
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::InstanceNorm { .. } => {
                let Ctx::InvStd(inv_std) = &node.ctx else {
                    return Err(Error::Internal("instance norm lost its context".into()));
                };
                let (n, c) = (node.shape[0], node.shape[1]);
                let hw = node.shape[2] * node.shape[3];
                let y = &node.values;
                let mut gs = vec![0.0; y.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        let istd = inv_std[ni * c + ci];
                        let mut mean_g = 0.0;
                        let mut mean_gy = 0.0;
                        for px in 0..hw {
                            mean_g += g_out[base + px];
                            mean_gy += g_out[base + px] * y[base + px];
                        }
                        mean_g /= hw as f64;
                        mean_gy /= hw as f64;
                        for px in 0..hw {
                            gs[base + px] =
                                istd * (g_out[base + px] - mean_g - y[base + px] * mean_gy);
                        }
                    }
                }
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::UpsampleNearest2 => {
                let (n, c) = (node.shape[0], node.shape[1]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let (ih, iw) = (oh / 2, ow / 2);
                let gx = &mut before[node.inputs[0]].grad;
                for ni in 0..n {
                    for ci in 0..c {
                        let ob = (ni * c + ci) * oh * ow;
                        let ib = (ni * c + ci) * ih * iw;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                gx[ib + (oy / 2) * iw + ox / 2] += g_out[ob + oy * ow + ox];
                            }
                        }
                    }
                }
            }
            Op::Add => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if before[a].requires_grad {
                    accumulate(&mut before[a].grad, g_out);
                }
                if before[b].requires_grad {
                    accumulate(&mut before[b].grad, g_out);
                }
            }
            Op::Sub => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if before[a].requires_grad {
                    accumulate(&mut before[a].grad, g_out);
                }
                if before[b].requires_grad {
                    for (g, &go) in before[b].grad.iter_mut().zip(g_out) {
                        *g -= go;
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if before[a].requires_grad {
                    let gs: Vec<f64> = g_out
                        .iter()
                        .zip(&before[b].values)
                        .map(|(&go, &bv)| go * bv)
                        .collect();
                    accumulate(&mut before[a].grad, &gs);
                }
                if before[b].requires_grad {
                    let gs: Vec<f64> = g_out
                        .iter()
                        .zip(&before[a].values)
                        .map(|(&go, &av)| go * av)
                        .collect();
                    accumulate(&mut before[b].grad, &gs);
                }
            }
            Op::Scale { factor } => {
                let f = *factor;
                let gs: Vec<f64> = g_out.iter().map(|&go| go * f).collect();
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::AddScalar { .. } | Op::Reshape => {
                accumulate(&mut before[node.inputs[0]].grad, g_out);
            }
            Op::Dropout { keep_scale, mask } => {
                let ks = *keep_scale;
                let gs: Vec<f64> = g_out
                    .iter()
                    .zip(mask)
                    .map(|(&go, &keep)| if keep { go * ks } else { 0.0 })
                    .collect();
                accumulate(&mut before[node.inputs[0]].grad, &gs);
            }
            Op::Sum => {
                let go = g_out[0];
                for g in before[node.inputs[0]].grad.iter_mut() {
                    *g += go;
                }
            }
            Op::Mean => {
                let n = before[node.inputs[0]].values.len() as f64;
                let go = g_out[0] / n;
                for g in before[node.inputs[0]].grad.iter_mut() {
                    *g += go;
                }
            }
            Op::L1Loss => {
                let (p, t) = (node.inputs[0], node.inputs[1]);
                let n = before[p].values.len() as f64;
                let go = g_out[0] / n;
                let signs: Vec<f64> = before[p]
                    .values
                    .iter()
                    .zip(&before[t].values)
                    .map(|(&pv, &tv)| if pv == tv { 0.0 } else { (pv - tv).signum() })
                    .collect();
                if before[p].requires_grad {
                    for (g, &s) in before[p].grad.iter_mut().zip(&signs) {
                        *g += go * s;
                    }
                }
                if before[t].requires_grad {
                    for (g, &s) in before[t].grad.iter_mut().zip(&signs) {
                        *g -= go * s;
                    }
                }
            }
            Op::MseLoss => {
                let (p, t) = (node.inputs[0], node.inputs[1]);
                let n = before[p].values.len() as f64;
                let go = 2.0 * g_out[0] / n;
                let diffs: Vec<f64> = before[p]
                    .values
                    .iter()
                    .zip(&before[t].values)
                    .map(|(&pv, &tv)| pv - tv)
                    .collect();
                if before[p].requires_grad {
                    for (g, &d) in before[p].grad.iter_mut().zip(&diffs) {
                        *g += go * d;
                    }
                }
                if before[t].requires_grad {
                    for (g, &d) in before[t].grad.iter_mut().zip(&diffs) {
                        *g -= go * d;
                    }
                }
            }
            Op::CrossEntropy { labels, classes } => {
                let Ctx::Probs(probs) = &node.ctx else {
                    return Err(Error::Internal("cross entropy lost its context".into()));
                };
                let x = node.inputs[0];
                let c = *classes;
                let npix = labels.len();
                let hw = before[x].shape[2] * before[x].shape[3];
                let scale = g_out[0] / npix as f64;
                let gx = &mut before[x].grad;
                for (pix, &label) in labels.iter().enumerate() {
                    let (ni, px) = (pix / hw, pix % hw);
                    for ci in 0..c {
                        let idx = (ni * c + ci) * hw + px;
                        let indicator = if ci == label as usize { 1.0 } else { 0.0 };
                        gx[idx] += scale * (probs[pix * c + ci] - indicator);
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the gradient accumulated at `id` into a tensor's grad buffer.
    pub fn accumulate_grad_into(&self, id: NodeId, t: &mut Tensor) -> Result<()> {
        if t.grad.len() != self.nodes[id].grad.len() {
            return Err(Error::DimensionMismatch(
                "gradient extent does not match tensor".into(),
            ));
        }
        for (g, &ng) in t.grad.iter_mut().zip(&self.nodes[id].grad) {
            *g += ng;
        }
        Ok(())
    }

    /// Recomputes every non-leaf node's values from current leaf values, in
    /// recorded order. With unchanged leaves the result is bit-identical to
    /// the original forward pass.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (values, ctx) = {
                let node = &self.nodes[i];
                let ins: Vec<(&[usize], &[f64])> = node
                    .inputs
                    .iter()
                    .map(|&j| (self.nodes[j].shape.as_slice(), self.nodes[j].values.as_slice()))
                    .collect();
                let (shape, values, ctx) = eval_op(&node.op, &ins)?;
                debug_assert_eq!(shape, node.shape);
                (values, ctx)
            };
            self.nodes[i].values = values;
            self.nodes[i].ctx = ctx;
        }
        Ok(())
    }
}

fn accumulate(grad: &mut [f64], delta: &[f64]) {
    debug_assert_eq!(grad.len(), delta.len());
    for (g, &d) in grad.iter_mut().zip(delta) {
        *g += d;
    }
}

fn backward_conv2d(before: &mut [Node], node: &Node, stride: usize, padding: usize) {
    let (x_id, k_id) = (node.inputs[0], node.inputs[1]);
    let x_shape = before[x_id].shape.clone();
    let k_shape = before[k_id].shape.clone();
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (k_out, _, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
    let (oh, ow) = (node.shape[2], node.shape[3]);
    let ckk = c * kh * kw;
    let opix = oh * ow;

    let x_needs = before[x_id].requires_grad;
    let k_needs = before[k_id].requires_grad;
    let mut cols = vec![0.0; ckk * opix];
    let mut dcols = vec![0.0; ckk * opix];

    for ni in 0..n {
        let g_out_n = &node.grad[ni * k_out * opix..(ni + 1) * k_out * opix];
        if k_needs {
            // dK += dOut_n * cols_n^T  (im2col recomputed; cheaper than caching)
            im2col(
                &before[x_id].values[ni * c * h * w..(ni + 1) * c * h * w],
                c,
                h,
                w,
                kh,
                kw,
                stride,
                padding,
                &mut cols,
            );
            matmul_nt_acc(g_out_n, &cols, k_out, opix, ckk, &mut before[k_id].grad);
        }
        if x_needs {
            // dX_n = col2im(K^T * dOut_n)
            dcols.fill(0.0);
            matmul_tn_acc(&before[k_id].values, g_out_n, ckk, k_out, opix, &mut dcols);
            col2im_acc(
                &dcols,
                c,
                h,
                w,
                kh,
                kw,
                stride,
                padding,
                &mut before[x_id].grad[ni * c * h * w..(ni + 1) * c * h * w],
            );
        }
    }
}

/// Forward evaluation shared by graph construction and `replay`.
fn eval_op(op: &Op, ins: &[(&[usize], &[f64])]) -> Result<(Vec<usize>, Vec<f64>, Ctx)> {
    match op {
        Op::Leaf => Err(Error::Internal("leaf nodes are not evaluated".into())),
        Op::Conv2d { stride, padding } => {
            let (x_shape, x) = ins[0];
            let (k_shape, k) = ins[1];
            if x_shape.len() != 4 || k_shape.len() != 4 {
                return Err(Error::DimensionMismatch(format!(
                    "conv2d wants NCHW input and KCkhkw kernel, got {x_shape:?} and {k_shape:?}"
                )));
            }
            let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
            let (k_out, kc, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
            if kc != c {
                return Err(Error::DimensionMismatch(format!(
                    "conv2d channel mismatch: input has {c}, kernel expects {kc}"
                )));
            }
            if kh > h + 2 * padding || kw > w + 2 * padding {
                return Err(Error::DimensionMismatch(format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                )));
            }
            let oh = conv_out_extent(h, kh, *stride, *padding);
            let ow = conv_out_extent(w, kw, *stride, *padding);
            let ckk = c * kh * kw;
            let opix = oh * ow;
            let mut out = vec![0.0; n * k_out * opix];
            let mut cols = vec![0.0; ckk * opix];
            for ni in 0..n {
                im2col(
                    &x[ni * c * h * w..(ni + 1) * c * h * w],
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    *stride,
                    *padding,
                    &mut cols,
                );
                matmul_acc(
                    k,
                    &cols,
                    k_out,
                    ckk,
                    opix,
                    &mut out[ni * k_out * opix..(ni + 1) * k_out * opix],
                );
            }
            Ok((vec![n, k_out, oh, ow], out, Ctx::None))
        }
        Op::BiasAdd => {
            let (x_shape, x) = ins[0];
            let (b_shape, b) = ins[1];
            if x_shape.len() != 4 || b_shape.len() != 1 || b_shape[0] != x_shape[1] {
                return Err(Error::DimensionMismatch(format!(
                    "bias_add wants NCHW and [C], got {x_shape:?} and {b_shape:?}"
                )));
            }
            let (n, c) = (x_shape[0], x_shape[1]);
            let hw = x_shape[2] * x_shape[3];
            let mut out = x.to_vec();
            for ni in 0..n {
                for ci in 0..c {
                    let bias = b[ci];
                    for v in &mut out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                        *v += bias;
                    }
                }
            }
            Ok((x_shape.to_vec(), out, Ctx::None))
        }
        Op::LeakyRelu { slope } => {
            let (shape, x) = ins[0];
            check_finite(x, "leaky_relu")?;
            let out = x.iter().map(|&v| if v >= 0.0 { v } else { v * slope }).collect();
            Ok((shape.to_vec(), out, Ctx::None))
        }
        Op::Tanh => {
            let (shape, x) = ins[0];
            check_finite(x, "tanh")?;
            Ok((shape.to_vec(), x.iter().map(|v| v.tanh()).collect(), Ctx::None))
        }
        Op::Sigmoid => {
            let (shape, x) = ins[0];
            check_finite(x, "sigmoid")?;
            Ok((
                shape.to_vec(),
                x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                Ctx::None,
            ))
        }
        Op::SoftmaxChannels => {
            let (shape, x) = ins[0];
            if shape.len() != 4 {
                return Err(Error::DimensionMismatch(format!(
                    "softmax_channels wants NCHW, got {shape:?}"
                )));
            }
            check_finite(x, "softmax")?;
            let (n, c) = (shape[0], shape[1]);
            let hw = shape[2] * shape[3];
            let mut out = vec![0.0; x.len()];
            for ni in 0..n {
                for px in 0..hw {
                    let mut max = f64::NEG_INFINITY;
                    for ci in 0..c {
                        max = max.max(x[(ni * c + ci) * hw + px]);
                    }
                    let mut denom = 0.0;
                    for ci in 0..c {
                        let e = (x[(ni * c + ci) * hw + px] - max).exp();
                        out[(ni * c + ci) * hw + px] = e;
                        denom += e;
                    }
                    for ci in 0..c {
                        out[(ni * c + ci) * hw + px] /= denom;
                    }
                }
            }
            Ok((shape.to_vec(), out, Ctx::None))
        }
        Op::InstanceNorm { eps } => {
            let (shape, x) = ins[0];
            if shape.len() != 4 {
                return Err(Error::DimensionMismatch(format!(
                    "instance_norm wants NCHW, got {shape:?}"
                )));
            }
            let (n, c) = (shape[0], shape[1]);
            let hw = shape[2] * shape[3];
            let mut out = vec![0.0; x.len()];
            let mut inv_std = vec![0.0; n * c];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * hw;
                    let plane = &x[base..base + hw];
                    let mean = plane.iter().sum::<f64>() / hw as f64;
                    let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
                    let istd = 1.0 / (var + eps).sqrt();
                    inv_std[ni * c + ci] = istd;
                    for (o, &v) in out[base..base + hw].iter_mut().zip(plane) {
                        *o = (v - mean) * istd;
                    }
                }
            }
            Ok((shape.to_vec(), out, Ctx::InvStd(inv_std)))
        }
        Op::UpsampleNearest2 => {
            let (shape, x) = ins[0];
            if shape.len() != 4 {
                return Err(Error::DimensionMismatch(format!(
                    "upsample wants NCHW, got {shape:?}"
                )));
            }
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let (oh, ow) = (2 * h, 2 * w);
            let mut out = vec![0.0; n * c * oh * ow];
            for plane in 0..n * c {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
                for oy in 0..oh {
                    let src_row = &src[(oy / 2) * w..(oy / 2 + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        *d = src_row[ox / 2];
                    }
                }
            }
            Ok((vec![n, c, oh, ow], out, Ctx::None))
        }
        Op::Add | Op::Sub | Op::Mul => {
            let (a_shape, a) = ins[0];
            let (b_shape, b) = ins[1];
            if a_shape != b_shape {
                return Err(Error::DimensionMismatch(format!(
                    "elementwise op on {a_shape:?} vs {b_shape:?}"
                )));
            }
            let out = match op {
                Op::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
                Op::Sub => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
                _ => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
            };
            Ok((a_shape.to_vec(), out, Ctx::None))
        }
        Op::Scale { factor } => {
            let (shape, x) = ins[0];
            Ok((shape.to_vec(), x.iter().map(|&v| v * factor).collect(), Ctx::None))
        }
        Op::AddScalar { offset } => {
            let (shape, x) = ins[0];
            Ok((shape.to_vec(), x.iter().map(|&v| v + offset).collect(), Ctx::None))
        }
        Op::Reshape => {
            let (shape, x) = ins[0];
            // real shape is patched in by Graph::reshape
            Ok((shape.to_vec(), x.to_vec(), Ctx::None))
        }
        Op::Dropout { keep_scale, mask } => {
            let (shape, x) = ins[0];
            if mask.len() != x.len() {
                return Err(Error::Internal("dropout mask extent mismatch".into()));
            }
            let out = x
                .iter()
                .zip(mask)
                .map(|(&v, &keep)| if keep { v * keep_scale } else { 0.0 })
                .collect();
            Ok((shape.to_vec(), out, Ctx::None))
        }
        Op::Sum => {
            let (_, x) = ins[0];
            Ok((vec![1], vec![x.iter().sum()], Ctx::None))
        }
        Op::Mean => {
            let (_, x) = ins[0];
            Ok((vec![1], vec![x.iter().sum::<f64>() / x.len() as f64], Ctx::None))
        }
        Op::L1Loss | Op::MseLoss => {
            let (p_shape, p) = ins[0];
            let (t_shape, t) = ins[1];
            if p_shape != t_shape {
                return Err(Error::DimensionMismatch(format!(
                    "loss over {p_shape:?} vs {t_shape:?}"
                )));
            }
            let n = p.len() as f64;
            let v = match op {
                Op::L1Loss => p.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum::<f64>() / n,
                _ => {
                    p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>() / n
                }
            };
            Ok((vec![1], vec![v], Ctx::None))
        }
        Op::CrossEntropy { labels, classes } => {
            let (shape, x) = ins[0];
            if shape.len() != 4 || shape[1] != *classes {
                return Err(Error::DimensionMismatch(format!(
                    "cross entropy wants [N,{classes},H,W] logits, got {shape:?}"
                )));
            }
            let (n, c) = (shape[0], shape[1]);
            let hw = shape[2] * shape[3];
            if labels.len() != n * hw {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} pixels",
                    labels.len(),
                    n * hw
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= *classes) {
                return Err(Error::ClassRange { found: bad as usize, limit: *classes });
            }
            let mut probs = vec![0.0; labels.len() * c];
            let mut total = 0.0;
            for (pix, &label) in labels.iter().enumerate() {
                let (ni, px) = (pix / hw, pix % hw);
                let mut max = f64::NEG_INFINITY;
                for ci in 0..c {
                    max = max.max(x[(ni * c + ci) * hw + px]);
                }
                let mut denom = 0.0;
                for ci in 0..c {
                    let e = (x[(ni * c + ci) * hw + px] - max).exp();
                    probs[pix * c + ci] = e;
                    denom += e;
                }
                for ci in 0..c {
                    probs[pix * c + ci] /= denom;
                }
                total -= probs[pix * c + label as usize].ln();
            }
            let v = total / labels.len() as f64;
            Ok((vec![1], vec![v], Ctx::Probs(probs)))
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}
