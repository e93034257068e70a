//! Cycle-consistent adversarial image translator: two generators (X to Y
//! and Y to X), two patch discriminators, least-squares adversarial losses,
//! cycle reconstruction penalties, and the alternating training loop.
//!
//! Images enter the networks scaled from [0,1] to [-1,1] to match the tanh
//! output head; [`batch_to_images`] undoes the mapping.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imgproc::ImageRgb;
use crate::AdamState;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

const INORM_EPS: f64 = 1e-5;
const LRELU_SLOPE: f64 = 0.2;
/// Weight init spread for all translator kernels.
const INIT_STD: f64 = 0.02;
/// Replay pool capacity when the buffer is enabled.
const POOL_SIZE: usize = 50;

/// All translator knobs. The defaults are the toy preset exercised by the
/// test suite; `paper_preset` switches to the full-scale settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub nf: usize,
    pub n_res_blocks: usize,
    pub lr: f64,
    pub beta1: f64,
    pub lambda_cycle_xy: f64,
    pub lambda_cycle_yx: f64,
    /// Extra l1(G(y), y) + l1(F(x), x) term weight; 0 disables it.
    pub identity_weight: f64,
    /// Feed discriminators from a pool of past generator outputs instead of
    /// only the freshest fake.
    pub replay_buffer: bool,
    pub iterations: u64,
    pub batch: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Write `checkpoint_latest.dgck` every this many iterations; 0 keeps
    /// only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            nf: 16,
            n_res_blocks: 2,
            lr: 2e-4,
            beta1: 0.5,
            lambda_cycle_xy: 10.0,
            lambda_cycle_yx: 10.0,
            identity_weight: 0.0,
            replay_buffer: false,
            iterations: 2000,
            batch: 1,
            image_size: 64,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TranslatorConfig {
    /// Full-scale settings (not exercised by the test suite).
    pub fn paper_preset() -> Self {
        TranslatorConfig { nf: 50, n_res_blocks: 6, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 4 (two stride-2 stages)",
                self.image_size
            )));
        }
        if self.nf == 0 || self.batch == 0 {
            return Err(Error::Config("nf and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::Config("lr must be positive and beta1 in (0,1)".into()));
        }
        for (name, v) in [
            ("lambda_cycle_xy", self.lambda_cycle_xy),
            ("lambda_cycle_yx", self.lambda_cycle_yx),
            ("identity_weight", self.identity_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One conv kernel with optional per-channel bias.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub(crate) fn new(
        rng: &mut ChaCha12Rng,
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let kernel = Tensor::param(
            &[out_c, in_c, k, k],
            (0..out_c * in_c * k * k).map(|_| normal.sample(rng)).collect(),
        )
        .expect("kernel extents");
        let bias = with_bias.then(|| Tensor::param(&[out_c], vec![0.0; out_c]).expect("bias"));
        ConvLayer { kernel, bias, stride, padding }
    }

    /// Scaled-uniform init over (-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub(crate) fn he_uniform(
        rng: &mut ChaCha12Rng,
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Self {
        let bound = (6.0 / (in_c * k * k) as f64).sqrt();
        let kernel = Tensor::param(
            &[out_c, in_c, k, k],
            (0..out_c * in_c * k * k).map(|_| rng.random_range(-bound..bound)).collect(),
        )
        .expect("kernel extents");
        let bias = with_bias.then(|| Tensor::param(&[out_c], vec![0.0; out_c]).expect("bias"));
        ConvLayer { kernel, bias, stride, padding }
    }

    pub(crate) fn bind(&mut self, g: &mut Graph, trainable: bool) -> BoundConv {
        let bind = |g: &mut Graph, t: &mut Tensor| if trainable { g.param(t) } else { g.frozen(t) };
        BoundConv {
            kernel: bind(g, &mut self.kernel),
            bias: self.bias.as_mut().map(|b| bind(g, b)),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.kernel];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub(crate) fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.k"), self.kernel.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.b"), b.clone()));
        }
    }

    pub(crate) fn restore(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        restore_tensor(&mut self.kernel, &format!("{prefix}.k"), entries)?;
        if let Some(b) = &mut self.bias {
            restore_tensor(b, &format!("{prefix}.b"), entries)?;
        }
        Ok(())
    }

    pub(crate) fn param_count(&self) -> usize {
        self.kernel.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }
}

pub(crate) fn restore_tensor(t: &mut Tensor, name: &str, entries: &[(String, Tensor)]) -> Result<()> {
    let found = checkpoint::find(entries, name)
        .ok_or_else(|| Error::parse(name, "missing checkpoint record"))?;
    if found.shape != t.shape {
        return Err(Error::parse(
            name,
            format!("shape {:?} does not match expected {:?}", found.shape, t.shape),
        ));
    }
    t.values.clone_from(&found.values);
    Ok(())
}

/// Node ids of one network's parameters within one graph.
pub(crate) struct BoundConv {
    kernel: NodeId,
    bias: Option<NodeId>,
    stride: usize,
    padding: usize,
}

impl BoundConv {
    pub(crate) fn apply(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut y = g.conv2d(x, self.kernel, self.stride, self.padding)?;
        if let Some(b) = self.bias {
            y = g.bias_add(y, b)?;
        }
        Ok(y)
    }
}

/// Encoder (two stride-2 stages), residual trunk, decoder (two nearest-
/// neighbor upsampling stages), tanh head. Output extents equal input
/// extents for any size divisible by 4.
///
/// Convs followed by instance norm carry no bias (the norm would cancel
/// it); only the head does.
#[derive(Debug, Clone)]
pub struct GeneratorNet {
    pub nf: usize,
    enc1: ConvLayer,
    enc2: ConvLayer,
    res: Vec<[ConvLayer; 2]>,
    dec1: ConvLayer,
    dec2: ConvLayer,
    head: ConvLayer,
}

struct BoundGenerator {
    enc1: BoundConv,
    enc2: BoundConv,
    res: Vec<[BoundConv; 2]>,
    dec1: BoundConv,
    dec2: BoundConv,
    head: BoundConv,
}

impl GeneratorNet {
    fn new(nf: usize, n_res_blocks: usize, rng: &mut ChaCha12Rng) -> Self {
        GeneratorNet {
            nf,
            enc1: ConvLayer::new(rng, nf, 3, 3, 2, 1, false),
            enc2: ConvLayer::new(rng, 2 * nf, nf, 3, 2, 1, false),
            res: (0..n_res_blocks)
                .map(|_| {
                    [
                        ConvLayer::new(rng, 2 * nf, 2 * nf, 3, 1, 1, false),
                        ConvLayer::new(rng, 2 * nf, 2 * nf, 3, 1, 1, false),
                    ]
                })
                .collect(),
            dec1: ConvLayer::new(rng, nf, 2 * nf, 3, 1, 1, false),
            dec2: ConvLayer::new(rng, nf, nf, 3, 1, 1, false),
            head: ConvLayer::new(rng, 3, nf, 3, 1, 1, true),
        }
    }

    fn bind(&mut self, g: &mut Graph, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            enc1: self.enc1.bind(g, trainable),
            enc2: self.enc2.bind(g, trainable),
            res: self
                .res
                .iter_mut()
                .map(|b| [b[0].bind(g, trainable), b[1].bind(g, trainable)])
                .collect(),
            dec1: self.dec1.bind(g, trainable),
            dec2: self.dec2.bind(g, trainable),
            head: self.head.bind(g, trainable),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.enc1.params_mut();
        v.extend(self.enc2.params_mut());
        for block in &mut self.res {
            let [c1, c2] = block;
            v.extend(c1.params_mut());
            v.extend(c2.params_mut());
        }
        v.extend(self.dec1.params_mut());
        v.extend(self.dec2.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.enc1.param_count()
            + self.enc2.param_count()
            + self.res.iter().map(|b| b[0].param_count() + b[1].param_count()).sum::<usize>()
            + self.dec1.param_count()
            + self.dec2.param_count()
            + self.head.param_count()
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.enc1.named(&format!("{prefix}.enc1"), out);
        self.enc2.named(&format!("{prefix}.enc2"), out);
        for (i, block) in self.res.iter().enumerate() {
            block[0].named(&format!("{prefix}.res{i}.c1"), out);
            block[1].named(&format!("{prefix}.res{i}.c2"), out);
        }
        self.dec1.named(&format!("{prefix}.dec1"), out);
        self.dec2.named(&format!("{prefix}.dec2"), out);
        self.head.named(&format!("{prefix}.head"), out);
    }

    fn restore(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        self.enc1.restore(&format!("{prefix}.enc1"), entries)?;
        self.enc2.restore(&format!("{prefix}.enc2"), entries)?;
        for (i, block) in self.res.iter_mut().enumerate() {
            block[0].restore(&format!("{prefix}.res{i}.c1"), entries)?;
            block[1].restore(&format!("{prefix}.res{i}.c2"), entries)?;
        }
        self.dec1.restore(&format!("{prefix}.dec1"), entries)?;
        self.dec2.restore(&format!("{prefix}.dec2"), entries)?;
        self.head.restore(&format!("{prefix}.head"), entries)
    }
}

impl BoundGenerator {
    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let norm_act = |g: &mut Graph, h: NodeId| -> Result<NodeId> {
            let h = g.instance_norm(h, INORM_EPS)?;
            g.leaky_relu(h, LRELU_SLOPE)
        };
        let mut h = self.enc1.apply(g, x)?;
        h = norm_act(g, h)?;
        h = self.enc2.apply(g, h)?;
        h = norm_act(g, h)?;
        for block in &self.res {
            let skip = h;
            let mut r = block[0].apply(g, h)?;
            r = norm_act(g, r)?;
            r = block[1].apply(g, r)?;
            r = g.instance_norm(r, INORM_EPS)?;
            h = g.add(skip, r)?;
        }
        h = g.upsample_nearest2(h)?;
        h = self.dec1.apply(g, h)?;
        h = norm_act(g, h)?;
        h = g.upsample_nearest2(h)?;
        h = self.dec2.apply(g, h)?;
        h = norm_act(g, h)?;
        let logits = self.head.apply(g, h)?;
        g.tanh(logits)
    }
}

/// Three stacked convs scoring overlapping patches: the output is a score
/// map, not a single scalar. No normalization layers.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    pub nf: usize,
    c1: ConvLayer,
    c2: ConvLayer,
    c3: ConvLayer,
}

struct BoundDiscriminator {
    c1: BoundConv,
    c2: BoundConv,
    c3: BoundConv,
}

impl DiscriminatorNet {
    fn new(nf: usize, rng: &mut ChaCha12Rng) -> Self {
        DiscriminatorNet {
            nf,
            c1: ConvLayer::new(rng, nf, 3, 4, 2, 1, true),
            c2: ConvLayer::new(rng, 2 * nf, nf, 4, 2, 1, true),
            c3: ConvLayer::new(rng, 1, 2 * nf, 4, 1, 1, true),
        }
    }

    fn bind(&mut self, g: &mut Graph, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            c1: self.c1.bind(g, trainable),
            c2: self.c2.bind(g, trainable),
            c3: self.c3.bind(g, trainable),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.c1.params_mut();
        v.extend(self.c2.params_mut());
        v.extend(self.c3.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count() + self.c3.param_count()
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.c1.named(&format!("{prefix}.c1"), out);
        self.c2.named(&format!("{prefix}.c2"), out);
        self.c3.named(&format!("{prefix}.c3"), out);
    }

    fn restore(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        self.c1.restore(&format!("{prefix}.c1"), entries)?;
        self.c2.restore(&format!("{prefix}.c2"), entries)?;
        self.c3.restore(&format!("{prefix}.c3"), entries)
    }
}

impl BoundDiscriminator {
    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = self.c1.apply(g, x)?;
        h = g.leaky_relu(h, LRELU_SLOPE)?;
        h = self.c2.apply(g, h)?;
        h = g.leaky_relu(h, LRELU_SLOPE)?;
        self.c3.apply(g, h)
    }
}

/// L_D = 0.5 mean((d_real - 1)^2) + 0.5 mean(d_fake^2), the least-squares
/// adversarial objective.
pub fn discriminator_loss(g: &mut Graph, d_real: NodeId, d_fake: NodeId) -> Result<NodeId> {
    let ones = g.input(g.shape(d_real).to_vec().as_slice(), vec![1.0; g.values(d_real).len()]);
    let zeros = g.input(g.shape(d_fake).to_vec().as_slice(), vec![0.0; g.values(d_fake).len()]);
    let real_term = g.mse_loss(d_real, ones)?;
    let fake_term = g.mse_loss(d_fake, zeros)?;
    let sum = g.add(real_term, fake_term)?;
    g.scale(sum, 0.5)
}

/// Scalar values of the generator objective's parts for one iteration.
/// `cyc_*` are the raw (unweighted) l1 reconstruction means; `total`
/// applies the lambda weights.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GenLossComponents {
    pub adv_xy: f64,
    pub adv_yx: f64,
    pub cyc_xy: f64,
    pub cyc_yx: f64,
    pub identity: f64,
    pub total: f64,
}

/// Per-iteration training record; the columns of `loss_history.csv`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub d_x_loss: f64,
    pub d_y_loss: f64,
    pub adv_xy: f64,
    pub adv_yx: f64,
    pub cyc_xy: f64,
    pub cyc_yx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
}

/// Both generators, both discriminators, their optimizer states, and the
/// training history. G translates X to Y; F translates Y to X.
pub struct TranslatorPair {
    pub cfg: TranslatorConfig,
    pub g: GeneratorNet,
    pub f: GeneratorNet,
    pub d_x: DiscriminatorNet,
    pub d_y: DiscriminatorNet,
    pub adam_g: AdamState,
    pub adam_dx: AdamState,
    pub adam_dy: AdamState,
    pub iteration: u64,
    pub history: Vec<LossRecord>,
}

struct GenGraphNodes {
    total: NodeId,
    adv_xy: NodeId,
    adv_yx: NodeId,
    cyc_xy: NodeId,
    cyc_yx: NodeId,
    identity: Option<NodeId>,
    fake_x: NodeId,
    fake_y: NodeId,
}

impl TranslatorPair {
    /// Deterministic initialization: the same config (seed included) yields
    /// bit-identical parameters.
    pub fn new(cfg: TranslatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let g = GeneratorNet::new(cfg.nf, cfg.n_res_blocks, &mut rng);
        let f = GeneratorNet::new(cfg.nf, cfg.n_res_blocks, &mut rng);
        let d_x = DiscriminatorNet::new(cfg.nf, &mut rng);
        let d_y = DiscriminatorNet::new(cfg.nf, &mut rng);
        let adam_g = AdamState::new(cfg.lr, cfg.beta1, 0.999, 1e-8);
        let adam_dx = adam_g.clone();
        let adam_dy = adam_g.clone();
        Ok(TranslatorPair {
            cfg,
            g,
            f,
            d_x,
            d_y,
            adam_g,
            adam_dx,
            adam_dy,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.g.param_count()
            + self.f.param_count()
            + self.d_x.param_count()
            + self.d_y.param_count()
    }

    /// Layer list with shapes and parameter counts.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "translator: nf={} res_blocks={} image_size={}\n",
            self.cfg.nf, self.cfg.n_res_blocks, self.cfg.image_size
        );
        let mut entries = Vec::new();
        self.g.named("g", &mut entries);
        self.f.named("f", &mut entries);
        self.d_x.named("dx", &mut entries);
        self.d_y.named("dy", &mut entries);
        for (name, t) in &entries {
            out.push_str(&format!("  {name} {:?} ({} params)\n", t.shape, t.numel()));
        }
        out.push_str(&format!(
            "generators: {} params each; discriminators: {} params each; total: {}\n",
            self.g.param_count(),
            self.d_x.param_count(),
            self.param_count()
        ));
        out
    }

    fn build_generator_graph(&mut self, x: &Tensor, y: &Tensor) -> Result<(Graph, GenGraphNodes)> {
        if x.shape != y.shape {
            return Err(Error::DimensionMismatch(format!(
                "domain batches {:?} vs {:?}",
                x.shape, y.shape
            )));
        }
        let mut graph = Graph::new();
        let bg = self.g.bind(&mut graph, true);
        let bf = self.f.bind(&mut graph, true);
        let bdx = self.d_x.bind(&mut graph, false);
        let bdy = self.d_y.bind(&mut graph, false);

        let x_in = graph.input(&x.shape, x.values.clone());
        let y_in = graph.input(&y.shape, y.values.clone());

        let fake_y = bg.forward(&mut graph, x_in)?;
        let rec_x = bf.forward(&mut graph, fake_y)?;
        let fake_x = bf.forward(&mut graph, y_in)?;
        let rec_y = bg.forward(&mut graph, fake_x)?;

        let d_fake_y = bdy.forward(&mut graph, fake_y)?;
        let d_fake_x = bdx.forward(&mut graph, fake_x)?;

        let ones_y =
            graph.input(graph.shape(d_fake_y).to_vec().as_slice(), vec![1.0; graph.values(d_fake_y).len()]);
        let ones_x =
            graph.input(graph.shape(d_fake_x).to_vec().as_slice(), vec![1.0; graph.values(d_fake_x).len()]);
        let adv_xy = graph.mse_loss(d_fake_y, ones_y)?;
        let adv_yx = graph.mse_loss(d_fake_x, ones_x)?;
        let cyc_xy = graph.l1_loss(rec_x, x_in)?;
        let cyc_yx = graph.l1_loss(rec_y, y_in)?;

        let adv = graph.add(adv_xy, adv_yx)?;
        let cyc_xy_w = graph.scale(cyc_xy, self.cfg.lambda_cycle_xy)?;
        let cyc_yx_w = graph.scale(cyc_yx, self.cfg.lambda_cycle_yx)?;
        let cyc = graph.add(cyc_xy_w, cyc_yx_w)?;
        let mut total = graph.add(adv, cyc)?;

        let identity = if self.cfg.identity_weight > 0.0 {
            let idt_y = bg.forward(&mut graph, y_in)?;
            let idt_x = bf.forward(&mut graph, x_in)?;
            let l_y = graph.l1_loss(idt_y, y_in)?;
            let l_x = graph.l1_loss(idt_x, x_in)?;
            let idt = graph.add(l_y, l_x)?;
            let idt_w = graph.scale(idt, self.cfg.identity_weight)?;
            total = graph.add(total, idt_w)?;
            Some(idt)
        } else {
            None
        };

        Ok((graph, GenGraphNodes { total, adv_xy, adv_yx, cyc_xy, cyc_yx, identity, fake_x, fake_y }))
    }

    fn read_components(graph: &Graph, nodes: &GenGraphNodes) -> GenLossComponents {
        GenLossComponents {
            adv_xy: graph.scalar_value(nodes.adv_xy),
            adv_yx: graph.scalar_value(nodes.adv_yx),
            cyc_xy: graph.scalar_value(nodes.cyc_xy),
            cyc_yx: graph.scalar_value(nodes.cyc_yx),
            identity: nodes.identity.map_or(0.0, |n| graph.scalar_value(n)),
            total: graph.scalar_value(nodes.total),
        }
    }

    /// Evaluates the generator objective without updating anything.
    pub fn generator_loss_components(&mut self, x: &Tensor, y: &Tensor) -> Result<GenLossComponents> {
        let (graph, nodes) = self.build_generator_graph(x, y)?;
        Ok(Self::read_components(&graph, &nodes))
    }

    /// Both generators' parameters, in the order optimizer state and
    /// gradients use.
    pub fn generator_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.g.params_mut();
        v.extend(self.f.params_mut());
        v
    }

    /// Analytic gradient of the generator objective for every generator
    /// parameter, aligned with [`TranslatorPair::generator_params_mut`].
    /// Parameter grad buffers are left cleared.
    pub fn generator_grads(&mut self, x: &Tensor, y: &Tensor) -> Result<(GenLossComponents, Vec<Vec<f64>>)> {
        let (mut graph, nodes) = self.build_generator_graph(x, y)?;
        graph.backward(nodes.total)?;
        let comps = Self::read_components(&graph, &nodes);
        let mut grads = Vec::new();
        for p in self.generator_params_mut() {
            let id = p.node_id.expect("bound this graph");
            grads.push(graph.grad(id).to_vec());
            p.zero_grad();
        }
        Ok((comps, grads))
    }

    /// One generator update; returns the loss parts plus the produced fake
    /// batches (as raw values) for the discriminator steps.
    fn generator_step(&mut self, x: &Tensor, y: &Tensor) -> Result<(GenLossComponents, Vec<f64>, Vec<f64>)> {
        let (mut graph, nodes) = self.build_generator_graph(x, y)?;
        graph.backward(nodes.total)?;
        let comps = Self::read_components(&graph, &nodes);
        let fake_x_vals = graph.values(nodes.fake_x).to_vec();
        let fake_y_vals = graph.values(nodes.fake_y).to_vec();

        for p in self.g.params_mut() {
            graph.accumulate_grad_into(p.node_id.expect("bound"), p)?;
        }
        for p in self.f.params_mut() {
            graph.accumulate_grad_into(p.node_id.expect("bound"), p)?;
        }
        let mut params = self.g.params_mut();
        params.extend(self.f.params_mut());
        self.adam_g.step(&mut params)?;
        Ok((comps, fake_x_vals, fake_y_vals))
    }

    /// One discriminator update against a real batch and detached fake
    /// values; returns the loss.
    fn discriminator_step(&mut self, dir: Direction, real: &Tensor, fake_vals: Vec<f64>) -> Result<f64> {
        let mut graph = Graph::new();
        let real_in = graph.input(&real.shape, real.values.clone());
        let fake_in = graph.input(&real.shape, fake_vals);
        let (net, adam) = match dir {
            Direction::XToY => (&mut self.d_y, &mut self.adam_dy),
            Direction::YToX => (&mut self.d_x, &mut self.adam_dx),
        };
        let bound = net.bind(&mut graph, true);
        let d_real = bound.forward(&mut graph, real_in)?;
        let d_fake = bound.forward(&mut graph, fake_in)?;
        let loss = discriminator_loss(&mut graph, d_real, d_fake)?;
        graph.backward(loss)?;
        let loss_v = graph.scalar_value(loss);
        for p in net.params_mut() {
            graph.accumulate_grad_into(p.node_id.expect("bound"), p)?;
        }
        adam.step(&mut net.params_mut())?;
        Ok(loss_v)
    }

    /// Alternating training loop. Each iteration samples one batch per
    /// domain, steps both generators jointly, then steps each discriminator
    /// on (real, detached fake). With `out_dir` set, checkpoints and the
    /// loss history are written there.
    pub fn train(&mut self, xs: &[ImageRgb], ys: &[ImageRgb], out_dir: Option<&Path>) -> Result<()> {
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::Dataset("translator training needs nonempty domains".into()));
        }
        let s = self.cfg.image_size;
        for img in xs.iter().chain(ys) {
            if img.width != s || img.height != s {
                return Err(Error::Dataset(format!(
                    "training image is {}x{}, configured size is {s}",
                    img.width, img.height
                )));
            }
        }
        // Separate stream from initialization so parameters never depend on
        // the sampling sequence.
        let mut rng = ChaCha12Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut pool_x = FakePool::new(self.cfg.replay_buffer);
        let mut pool_y = FakePool::new(self.cfg.replay_buffer);
        let started = std::time::Instant::now();

        while self.iteration < self.cfg.iterations {
            let xb: Vec<&ImageRgb> =
                (0..self.cfg.batch).map(|_| &xs[rng.random_range(0..xs.len())]).collect();
            let yb: Vec<&ImageRgb> =
                (0..self.cfg.batch).map(|_| &ys[rng.random_range(0..ys.len())]).collect();
            let x = images_to_batch(&xb)?;
            let y = images_to_batch(&yb)?;

            let (comps, fake_x_vals, fake_y_vals) = self.generator_step(&x, &y)?;
            let d_y_loss =
                self.discriminator_step(Direction::XToY, &y, pool_y.swap(&mut rng, fake_y_vals))?;
            let d_x_loss =
                self.discriminator_step(Direction::YToX, &x, pool_x.swap(&mut rng, fake_x_vals))?;

            self.iteration += 1;
            let record = LossRecord {
                iteration: self.iteration,
                d_x_loss,
                d_y_loss,
                adv_xy: comps.adv_xy,
                adv_yx: comps.adv_yx,
                cyc_xy: comps.cyc_xy,
                cyc_yx: comps.cyc_yx,
            };
            let finite = [d_x_loss, d_y_loss, comps.total].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Diverged {
                    iteration: self.iteration,
                    details: format!("{record:?}"),
                });
            }
            self.history.push(record);

            if let (Some(dir), true) = (out_dir, self.cfg.checkpoint_every > 0) {
                if self.iteration.is_multiple_of(self.cfg.checkpoint_every) {
                    self.save(&dir.join("checkpoint_latest.dgck"))?;
                }
            }
            if self.iteration.is_multiple_of(200) || self.iteration == self.cfg.iterations {
                eprintln!(
                    "[translate] iter {}/{} total {:.4} cyc {:.4}/{:.4} d {:.4}/{:.4} ({:.1}s)",
                    self.iteration,
                    self.cfg.iterations,
                    comps.total,
                    comps.cyc_xy,
                    comps.cyc_yx,
                    d_x_loss,
                    d_y_loss,
                    started.elapsed().as_secs_f64()
                );
            }
        }

        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.save(&dir.join("translator.dgck"))?;
            std::fs::write(dir.join("loss_history.csv"), self.history_csv())
                .map_err(|e| Error::io(dir.join("loss_history.csv"), e))?;
        }
        Ok(())
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,d_x_loss,d_y_loss,adv_xy,adv_yx,cyc_xy,cyc_yx\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration, r.d_x_loss, r.d_y_loss, r.adv_xy, r.adv_yx, r.cyc_xy, r.cyc_yx
            ));
        }
        out
    }

    /// Runs one image through G (x to y) or F (y to x) and maps the tanh
    /// output back to [0,1]. The caller pairs the result with the original
    /// label map; geometry is untouched by design.
    pub fn translate(&mut self, img: &ImageRgb, dir: Direction) -> Result<ImageRgb> {
        let s = self.cfg.image_size;
        if img.width != s || img.height != s {
            return Err(Error::DimensionMismatch(format!(
                "input is {}x{}, translator was built for {s}x{s}",
                img.width, img.height
            )));
        }
        let x = images_to_batch(&[img])?;
        let mut graph = Graph::new();
        let net = match dir {
            Direction::XToY => &mut self.g,
            Direction::YToX => &mut self.f,
        };
        let bound = net.bind(&mut graph, false);
        let x_in = graph.input(&x.shape, x.values.clone());
        let out = bound.forward(&mut graph, x_in)?;
        Ok(batch_to_images(graph.values(out), 1, s, s).remove(0))
    }

    /// Writes all four networks, the three optimizer states, the iteration
    /// counter, and the loss history into one checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        self.g.named("g", &mut entries);
        self.f.named("f", &mut entries);
        self.d_x.named("dx", &mut entries);
        self.d_y.named("dy", &mut entries);
        self.adam_g.export("adam_g", &mut entries);
        self.adam_dx.export("adam_dx", &mut entries);
        self.adam_dy.export("adam_dy", &mut entries);

        let c = &self.cfg;
        for (name, v) in [
            ("meta.iteration", self.iteration as f64),
            ("meta.nf", c.nf as f64),
            ("meta.n_res_blocks", c.n_res_blocks as f64),
            ("meta.image_size", c.image_size as f64),
            ("meta.seed", c.seed as f64),
            ("meta.lr", c.lr),
            ("meta.beta1", c.beta1),
            ("meta.lambda_cycle_xy", c.lambda_cycle_xy),
            ("meta.lambda_cycle_yx", c.lambda_cycle_yx),
            ("meta.identity_weight", c.identity_weight),
            ("meta.replay_buffer", if c.replay_buffer { 1.0 } else { 0.0 }),
            ("meta.iterations", c.iterations as f64),
            ("meta.batch", c.batch as f64),
            ("meta.checkpoint_every", c.checkpoint_every as f64),
        ] {
            entries.push((name.to_string(), checkpoint::scalar_entry(v)));
        }

        let mut hist = Vec::with_capacity(self.history.len() * 6);
        for r in &self.history {
            hist.extend_from_slice(&[r.d_x_loss, r.d_y_loss, r.adv_xy, r.adv_yx, r.cyc_xy, r.cyc_yx]);
        }
        entries.push((
            "history".to_string(),
            Tensor::from_values(&[self.history.len(), 6], hist)
                .unwrap_or_else(|_| Tensor::zeros(&[0, 6])),
        ));

        let refs: Vec<(&str, &Tensor)> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        checkpoint::save(path, &refs)
    }

    pub fn load(path: &Path) -> Result<TranslatorPair> {
        let entries = checkpoint::load(path)?;
        let meta = |name: &str| -> Result<f64> {
            checkpoint::find_scalar(&entries, name)
                .ok_or_else(|| Error::parse(path, format!("missing {name}")))
        };
        let cfg = TranslatorConfig {
            nf: meta("meta.nf")? as usize,
            n_res_blocks: meta("meta.n_res_blocks")? as usize,
            lr: meta("meta.lr")?,
            beta1: meta("meta.beta1")?,
            lambda_cycle_xy: meta("meta.lambda_cycle_xy")?,
            lambda_cycle_yx: meta("meta.lambda_cycle_yx")?,
            identity_weight: meta("meta.identity_weight")?,
            replay_buffer: meta("meta.replay_buffer")? != 0.0,
            iterations: meta("meta.iterations")? as u64,
            batch: meta("meta.batch")? as usize,
            image_size: meta("meta.image_size")? as usize,
            seed: meta("meta.seed")? as u64,
            checkpoint_every: meta("meta.checkpoint_every")? as u64,
        };
        let mut pair = TranslatorPair::new(cfg)?;
        pair.g.restore("g", &entries)?;
        pair.f.restore("f", &entries)?;
        pair.d_x.restore("dx", &entries)?;
        pair.d_y.restore("dy", &entries)?;
        let n_gen = pair.generator_params_mut().len();
        let n_d = pair.d_x.params_mut().len();
        pair.adam_g.import("adam_g", &entries, n_gen)?;
        pair.adam_dx.import("adam_dx", &entries, n_d)?;
        pair.adam_dy.import("adam_dy", &entries, n_d)?;
        pair.iteration = meta("meta.iteration")? as u64;

        let hist = checkpoint::find(&entries, "history")
            .ok_or_else(|| Error::parse(path, "missing history"))?;
        if hist.shape.len() != 2 || hist.shape[1] != 6 || hist.shape[0] != pair.iteration as usize {
            return Err(Error::parse(path, "history does not match the iteration counter"));
        }
        pair.history = hist
            .values
            .chunks(6)
            .enumerate()
            .map(|(i, c)| LossRecord {
                iteration: i as u64 + 1,
                d_x_loss: c[0],
                d_y_loss: c[1],
                adv_xy: c[2],
                adv_yx: c[3],
                cyc_xy: c[4],
                cyc_yx: c[5],
            })
            .collect();
        Ok(pair)
    }
}

/// Pool of past generated batches; with probability 1/2 the discriminator
/// sees an older fake instead of the newest one.
struct FakePool {
    enabled: bool,
    items: Vec<Vec<f64>>,
}

impl FakePool {
    fn new(enabled: bool) -> Self {
        FakePool { enabled, items: Vec::new() }
    }

    fn swap(&mut self, rng: &mut ChaCha12Rng, fake: Vec<f64>) -> Vec<f64> {
        if !self.enabled {
            return fake;
        }
        if self.items.len() < POOL_SIZE {
            self.items.push(fake.clone());
            return fake;
        }
        if rng.random::<f64>() < 0.5 {
            let slot = rng.random_range(0..self.items.len());
            std::mem::replace(&mut self.items[slot], fake)
        } else {
            fake
        }
    }
}

/// Stacks images into an NCHW batch mapped from [0,1] to [-1,1].
pub fn images_to_batch(imgs: &[&ImageRgb]) -> Result<Tensor> {
    let Some(first) = imgs.first() else {
        return Err(Error::Dataset("empty batch".into()));
    };
    let (w, h) = (first.width, first.height);
    let mut values = Vec::with_capacity(imgs.len() * 3 * h * w);
    for img in imgs {
        if img.width != w || img.height != h {
            return Err(Error::DimensionMismatch("mixed image sizes in one batch".into()));
        }
        values.extend(img.data.iter().map(|&v| 2.0 * v - 1.0));
    }
    Tensor::from_values(&[imgs.len(), 3, h, w], values)
}

/// Splits an NCHW [-1,1] batch back into [0,1] images.
pub fn batch_to_images(values: &[f64], n: usize, h: usize, w: usize) -> Vec<ImageRgb> {
    let plane = 3 * h * w;
    (0..n)
        .map(|i| {
            let mut img = ImageRgb::new(w, h);
            for (o, &v) in img.data.iter_mut().zip(&values[i * plane..(i + 1) * plane]) {
                *o = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
            }
            img
        })
        .collect()
}

/// Order-insensitive digest of parameter bits, for detachment checks.
pub fn fingerprint(params: &[&Tensor]) -> u64 {
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    for t in params {
        for &v in &t.values {
            acc = acc.rotate_left(7) ^ v.to_bits();
        }
    }
    acc
}
