//! Compact encoder/decoder segmentation network: two stride-2 encoder
//! stages, two plain conv blocks, dropout, two upsampling decoder stages,
//! and an 8-class logit head. Trained with pixel-wise cross entropy.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imgproc::{ImageRgb, LabelMap};
use crate::translator::{images_to_batch, BoundConv, ConvLayer};
use crate::{AdamState, NUM_CLASSES};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const INORM_EPS: f64 = 1e-5;
const LRELU_SLOPE: f64 = 0.2;

/// Segmentation training knobs; defaults are the toy preset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub nf: usize,
    /// Drop rate applied before the decoder during training only.
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub iterations: u64,
    /// Iterations when adapting a trained model to a second set; 0 means
    /// `iterations / 4`.
    pub finetune_iterations: u64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            nf: 8,
            dropout: 0.5,
            lr: 1e-3,
            beta1: 0.9,
            iterations: 600,
            finetune_iterations: 0,
            batch: 4,
            seed: 0,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nf == 0 || self.batch == 0 {
            return Err(Error::Config("nf and batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.lr > 0.0 && self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::Config("lr must be positive and beta1 in (0,1)".into()));
        }
        Ok(())
    }

    pub fn effective_finetune_iterations(&self) -> u64 {
        if self.finetune_iterations > 0 {
            self.finetune_iterations
        } else {
            self.iterations / 4
        }
    }
}

/// The network, its optimizer, and training progress.
pub struct SegModel {
    pub cfg: SegConfig,
    enc1: ConvLayer,
    enc2: ConvLayer,
    mid1: ConvLayer,
    mid2: ConvLayer,
    dec1: ConvLayer,
    dec2: ConvLayer,
    head: ConvLayer,
    pub adam: AdamState,
    pub iteration: u64,
    /// (iteration, cross-entropy) pairs, one per completed step.
    pub history: Vec<(u64, f64)>,
    /// Advanced only while training; seeded per phase for reproducibility.
    dropout_rng: ChaCha12Rng,
}

struct BoundSeg {
    enc1: BoundConv,
    enc2: BoundConv,
    mid1: BoundConv,
    mid2: BoundConv,
    dec1: BoundConv,
    dec2: BoundConv,
    head: BoundConv,
}

impl SegModel {
    pub fn new(cfg: SegConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let nf = cfg.nf;
        let enc1 = ConvLayer::he_uniform(&mut rng, nf, 3, 3, 2, 1, false);
        let enc2 = ConvLayer::he_uniform(&mut rng, 2 * nf, nf, 3, 2, 1, false);
        let mid1 = ConvLayer::he_uniform(&mut rng, 2 * nf, 2 * nf, 3, 1, 1, false);
        let mid2 = ConvLayer::he_uniform(&mut rng, 2 * nf, 2 * nf, 3, 1, 1, false);
        let dec1 = ConvLayer::he_uniform(&mut rng, nf, 2 * nf, 3, 1, 1, false);
        let dec2 = ConvLayer::he_uniform(&mut rng, nf, nf, 3, 1, 1, false);
        let head = ConvLayer::he_uniform(&mut rng, NUM_CLASSES, nf, 3, 1, 1, true);
        let adam = AdamState::segnet(cfg.lr);
        let dropout_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
        Ok(SegModel {
            cfg,
            enc1,
            enc2,
            mid1,
            mid2,
            dec1,
            dec2,
            head,
            adam,
            iteration: 0,
            history: Vec::new(),
            dropout_rng,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.enc1.params_mut();
        v.extend(self.enc2.params_mut());
        v.extend(self.mid1.params_mut());
        v.extend(self.mid2.params_mut());
        v.extend(self.dec1.params_mut());
        v.extend(self.dec2.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|t| t.numel()).sum()
    }

    fn bind(&mut self, g: &mut Graph, trainable: bool) -> BoundSeg {
        BoundSeg {
            enc1: self.enc1.bind(g, trainable),
            enc2: self.enc2.bind(g, trainable),
            mid1: self.mid1.bind(g, trainable),
            mid2: self.mid2.bind(g, trainable),
            dec1: self.dec1.bind(g, trainable),
            dec2: self.dec2.bind(g, trainable),
            head: self.head.bind(g, trainable),
        }
    }

    /// Builds the forward pass up to the logits. `dropout_rng` being Some
    /// marks a training pass.
    fn forward(
        bound: &BoundSeg,
        g: &mut Graph,
        x: NodeId,
        dropout: Option<(f64, &mut ChaCha12Rng)>,
    ) -> Result<NodeId> {
        let norm_act = |g: &mut Graph, h: NodeId| -> Result<NodeId> {
            let h = g.instance_norm(h, INORM_EPS)?;
            g.leaky_relu(h, LRELU_SLOPE)
        };
        let mut h = bound.enc1.apply(g, x)?;
        h = norm_act(g, h)?;
        h = bound.enc2.apply(g, h)?;
        h = norm_act(g, h)?;
        h = bound.mid1.apply(g, h)?;
        h = norm_act(g, h)?;
        h = bound.mid2.apply(g, h)?;
        h = norm_act(g, h)?;
        if let Some((rate, rng)) = dropout {
            if rate > 0.0 {
                h = g.dropout(h, rate, rng)?;
            }
        }
        h = g.upsample_nearest2(h)?;
        h = bound.dec1.apply(g, h)?;
        h = norm_act(g, h)?;
        h = g.upsample_nearest2(h)?;
        h = bound.dec2.apply(g, h)?;
        h = norm_act(g, h)?;
        bound.head.apply(g, h)
    }

    /// Per-pixel class prediction. Softmax preserves the logit order, so
    /// the argmax is taken on logits directly; ties go to the lowest class
    /// index.
    pub fn predict(&mut self, img: &ImageRgb) -> Result<LabelMap> {
        check_extents(img.width, img.height)?;
        let (w, h) = (img.width, img.height);
        let x = images_to_batch(&[img])?;
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let x_in = graph.input(&x.shape, x.values.clone());
        let logits = Self::forward(&bound, &mut graph, x_in, None)?;
        let vals = graph.values(logits);
        let plane = w * h;
        let mut out = LabelMap::new(w, h);
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = vals[p];
            for c in 1..NUM_CLASSES {
                let v = vals[c * plane + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            out.data[p] = best as u8;
        }
        Ok(out)
    }

    /// One optimizer step on a prepared batch; returns the loss.
    fn train_step(&mut self, x: &Tensor, labels: &[u8]) -> Result<f64> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, true);
        let x_in = graph.input(&x.shape, x.values.clone());
        let rate = self.cfg.dropout;
        let logits =
            Self::forward(&bound, &mut graph, x_in, Some((rate, &mut self.dropout_rng)))?;
        let loss = graph.cross_entropy_logits(logits, labels, NUM_CLASSES)?;
        graph.backward(loss)?;
        let loss_v = graph.scalar_value(loss);
        for p in self.params_mut() {
            graph.accumulate_grad_into(p.node_id.expect("bound"), p)?;
        }
        let SegModel { adam, .. } = self;
        let mut params = Vec::new();
        params.extend(self.enc1.params_mut());
        params.extend(self.enc2.params_mut());
        params.extend(self.mid1.params_mut());
        params.extend(self.mid2.params_mut());
        params.extend(self.dec1.params_mut());
        params.extend(self.dec2.params_mut());
        params.extend(self.head.params_mut());
        adam.step(&mut params)?;
        Ok(loss_v)
    }

    /// Trains for `iterations` total steps (the counter carries across
    /// calls, so a partially trained model continues rather than restarts).
    pub fn train(
        &mut self,
        images: &[ImageRgb],
        labels: &[LabelMap],
        iterations: u64,
        label: &str,
    ) -> Result<()> {
        validate_pairs(images, labels)?;
        let mut rng = ChaCha12Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let started = std::time::Instant::now();
        let target = self.iteration + iterations;
        while self.iteration < target {
            let idx: Vec<usize> =
                (0..self.cfg.batch).map(|_| rng.random_range(0..images.len())).collect();
            let batch: Vec<&ImageRgb> = idx.iter().map(|&i| &images[i]).collect();
            let x = images_to_batch(&batch)?;
            let mut y = Vec::with_capacity(self.cfg.batch * images[0].data.len() / 3);
            for &i in &idx {
                y.extend_from_slice(&labels[i].data);
            }
            let loss = self.train_step(&x, &y)?;
            self.iteration += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iteration: self.iteration,
                    details: format!("cross entropy {loss}"),
                });
            }
            self.history.push((self.iteration, loss));
            if self.iteration.is_multiple_of(100) || self.iteration == target {
                eprintln!(
                    "[seg {label}] iter {}/{} loss {:.4} ({:.1}s)",
                    self.iteration,
                    target,
                    loss,
                    started.elapsed().as_secs_f64()
                );
            }
        }
        Ok(())
    }

    /// Swaps in a fresh optimizer and a phase-specific dropout stream, then
    /// trains on the new set for the finetune budget.
    pub fn finetune(&mut self, images: &[ImageRgb], labels: &[LabelMap]) -> Result<()> {
        self.adam = AdamState::segnet(self.cfg.lr);
        self.dropout_rng = ChaCha12Rng::seed_from_u64(self.cfg.seed ^ 0x0b4e_7a3d_8c2f_1e65);
        let budget = self.cfg.effective_finetune_iterations();
        self.train(images, labels, budget, "finetune")
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in &self.history {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }

    fn named(&self) -> Vec<(String, Tensor)> {
        let mut entries = Vec::new();
        self.enc1.named("seg.enc1", &mut entries);
        self.enc2.named("seg.enc2", &mut entries);
        self.mid1.named("seg.mid1", &mut entries);
        self.mid2.named("seg.mid2", &mut entries);
        self.dec1.named("seg.dec1", &mut entries);
        self.dec2.named("seg.dec2", &mut entries);
        self.head.named("seg.head", &mut entries);
        entries
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = self.named();
        self.adam.export("adam", &mut entries);
        let c = &self.cfg;
        for (name, v) in [
            ("meta.iteration", self.iteration as f64),
            ("meta.nf", c.nf as f64),
            ("meta.dropout", c.dropout),
            ("meta.lr", c.lr),
            ("meta.beta1", c.beta1),
            ("meta.iterations", c.iterations as f64),
            ("meta.finetune_iterations", c.finetune_iterations as f64),
            ("meta.batch", c.batch as f64),
            ("meta.seed", c.seed as f64),
        ] {
            entries.push((name.to_string(), checkpoint::scalar_entry(v)));
        }
        let refs: Vec<(&str, &Tensor)> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        checkpoint::save(path, &refs)
    }

    pub fn load(path: &Path) -> Result<SegModel> {
        let entries = checkpoint::load(path)?;
        let meta = |name: &str| -> Result<f64> {
            checkpoint::find_scalar(&entries, name)
                .ok_or_else(|| Error::parse(path, format!("missing {name}")))
        };
        let cfg = SegConfig {
            nf: meta("meta.nf")? as usize,
            dropout: meta("meta.dropout")?,
            lr: meta("meta.lr")?,
            beta1: meta("meta.beta1")?,
            iterations: meta("meta.iterations")? as u64,
            finetune_iterations: meta("meta.finetune_iterations")? as u64,
            batch: meta("meta.batch")? as usize,
            seed: meta("meta.seed")? as u64,
        };
        let mut model = SegModel::new(cfg)?;
        for (field, prefix) in [
            (&mut model.enc1, "seg.enc1"),
            (&mut model.enc2, "seg.enc2"),
            (&mut model.mid1, "seg.mid1"),
            (&mut model.mid2, "seg.mid2"),
            (&mut model.dec1, "seg.dec1"),
            (&mut model.dec2, "seg.dec2"),
            (&mut model.head, "seg.head"),
        ] {
            field.restore(prefix, &entries)?;
        }
        let n = model.params_mut().len();
        model.adam.import("adam", &entries, n)?;
        model.iteration = meta("meta.iteration")? as u64;
        Ok(model)
    }

    /// Test helper and sanity hook: forces the logit head to zeros so every
    /// pixel ties and the argmax tie-break is observable.
    pub fn zero_head(&mut self) {
        for p in self.head.params_mut() {
            p.values.fill(0.0);
        }
    }
}

fn check_extents(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 || !w.is_multiple_of(4) || !h.is_multiple_of(4) {
        return Err(Error::DimensionMismatch(format!(
            "segmentation input {w}x{h} must have extents divisible by 4"
        )));
    }
    Ok(())
}

fn validate_pairs(images: &[ImageRgb], labels: &[LabelMap]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Dataset("segmentation training needs at least one image".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} images but {} label maps",
            images.len(),
            labels.len()
        )));
    }
    let (w, h) = (images[0].width, images[0].height);
    check_extents(w, h)?;
    for (img, lab) in images.iter().zip(labels) {
        if img.width != w || img.height != h || lab.width != w || lab.height != h {
            return Err(Error::Dataset("mixed extents in the training set".into()));
        }
        if let Some(&bad) = lab.data.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::ClassRange { found: bad as usize, limit: NUM_CLASSES });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmetrics::{confusion_matrix, mean_iou};

    fn micro_cfg() -> SegConfig {
        SegConfig { nf: 4, iterations: 40, batch: 2, seed: 0, ..Default::default() }
    }

    fn blocky_sample(seed: u64, size: usize) -> (ImageRgb, LabelMap) {
        // Left half class 1 (greenish), right half class 2 (reddish), with
        // per-pixel jitter so the net sees non-constant input.
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut img = ImageRgb::new(size, size);
        let mut lab = LabelMap::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let left = x < size / 2;
                let base = if left { [0.1, 0.8, 0.2] } else { [0.9, 0.2, 0.1] };
                let jitter: [f64; 3] = std::array::from_fn(|c| {
                    (base[c] + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0)
                });
                img.set_pixel(x, y, jitter);
                lab.data[y * size + x] = if left { 1 } else { 2 };
            }
        }
        (img, lab)
    }

    #[test]
    fn zeroed_head_predicts_class_zero_everywhere() {
        let mut model = SegModel::new(micro_cfg()).unwrap();
        model.zero_head();
        let (img, _) = blocky_sample(1, 8);
        let pred = model.predict(&img).unwrap();
        assert!(pred.data.iter().all(|&c| c == 0));
    }

    #[test]
    fn prediction_has_input_extents_and_valid_classes() {
        let mut model = SegModel::new(micro_cfg()).unwrap();
        let (img, _) = blocky_sample(2, 12);
        let pred = model.predict(&img).unwrap();
        assert_eq!((pred.width, pred.height), (12, 12));
        assert!(pred.data.iter().all(|&c| (c as usize) < NUM_CLASSES));
    }

    #[test]
    fn indivisible_extents_are_rejected() {
        let mut model = SegModel::new(micro_cfg()).unwrap();
        let img = ImageRgb::new(10, 10);
        assert!(model.predict(&img).is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let mut model = SegModel::new(micro_cfg()).unwrap();
        let (img, mut lab) = blocky_sample(3, 8);
        lab.data[0] = 8;
        assert!(matches!(
            model.train(&[img], &[lab], 1, "test"),
            Err(Error::ClassRange { found: 8, limit: 8 })
        ));
    }

    #[test]
    fn loss_descends_on_a_single_image() {
        let mut cfg = micro_cfg();
        cfg.iterations = 120;
        cfg.dropout = 0.0;
        let mut model = SegModel::new(cfg).unwrap();
        let (img, lab) = blocky_sample(4, 16);
        model.train(&[img], &[lab], 120, "test").unwrap();
        let first = model.history[0].1;
        let last = model.history.last().unwrap().1;
        assert!(
            last < first * 0.5,
            "cross entropy should at least halve: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_deterministic_even_with_dropout() {
        let run = || {
            let mut model = SegModel::new(micro_cfg()).unwrap();
            let (img, lab) = blocky_sample(5, 8);
            model.train(&[img], &[lab], 10, "test").unwrap();
            model.history.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn small_overfit_reaches_high_iou_on_its_own_training_set() {
        let mut cfg = micro_cfg();
        cfg.nf = 8;
        cfg.dropout = 0.0;
        let mut model = SegModel::new(cfg).unwrap();
        let samples: Vec<(ImageRgb, LabelMap)> =
            (0..4).map(|i| blocky_sample(10 + i, 16)).collect();
        let images: Vec<ImageRgb> = samples.iter().map(|(i, _)| i.clone()).collect();
        let labels: Vec<LabelMap> = samples.iter().map(|(_, l)| l.clone()).collect();
        model.train(&images, &labels, 300, "test").unwrap();

        let mut confusion = crate::segmetrics::ConfusionMatrix::new(NUM_CLASSES);
        for (img, lab) in samples.iter() {
            let pred = model.predict(img).unwrap();
            confusion.merge(&confusion_matrix(&[(lab, &pred)], NUM_CLASSES).unwrap()).unwrap();
        }
        let report = mean_iou(&confusion);
        let mean = report.mean.expect("classes present");
        assert!(mean > 0.9, "train-set mean IOU {mean} should exceed 0.9");
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let dir = std::env::temp_dir().join("domaingap-segnet-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("seg.dgck");

        let mut model = SegModel::new(micro_cfg()).unwrap();
        let (img, lab) = blocky_sample(20, 8);
        model.train(std::slice::from_ref(&img), &[lab], 5, "test").unwrap();
        model.save(&path).unwrap();

        let mut loaded = SegModel::load(&path).unwrap();
        assert_eq!(loaded.iteration, 5);
        assert_eq!(loaded.predict(&img).unwrap().data, model.predict(&img).unwrap().data);
    }

    #[test]
    fn finetune_resets_the_optimizer_but_keeps_weights_learning() {
        let mut cfg = micro_cfg();
        cfg.finetune_iterations = 5;
        let mut model = SegModel::new(cfg).unwrap();
        let (img, lab) = blocky_sample(30, 8);
        model
            .train(std::slice::from_ref(&img), std::slice::from_ref(&lab), 5, "test")
            .unwrap();
        let before = model.adam.t;
        model.finetune(&[img], &[lab]).unwrap();
        assert_eq!(model.iteration, 10);
        assert!(model.adam.t <= 5, "optimizer was rebuilt (t was {before}, now {})", model.adam.t);
    }
}
