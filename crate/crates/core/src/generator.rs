//! U-Net distortion generator and its trainer against a frozen embedder.
//!
//! The generator is pushed to move images far from their originals in pixel
//! space while keeping their embeddings within a margin `alpha`:
//!
//! `loss = (1 − pi_emb)·(−d_img(G(X), X)) + pi_emb·ReLU(d_emb − alpha)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::{epoch_seed, EmbedCache, EmbeddingNet};
use crate::image::{Image, Shape};
use crate::metrics::{embedding_distance, l2_distance, ImageDistance};
use crate::nn::layers::{self, Conv2d};
use crate::nn::params::he_normal;
use crate::nn::{accumulate_gradients, all_finite, Adam, ParamLayout, Scalar};
use crate::{Error, Result};

/// Anything that maps an image to a distorted image of the same shape.
pub trait Distort: Sync {
    fn distort(&self, image: &Image) -> Result<Image>;
}

/// Test double that returns its input unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityGenerator;

impl Distort for IdentityGenerator {
    fn distort(&self, image: &Image) -> Result<Image> {
        Ok(image.clone())
    }
}

/// A loaded generator: a trained network or the identity test double.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Generator {
    Net(GeneratorNet<f32>),
    Identity(Shape),
}

impl Generator {
    pub fn input_shape(&self) -> Shape {
        match self {
            Generator::Net(n) => n.arch().input_shape(),
            Generator::Identity(s) => *s,
        }
    }
}

impl Distort for Generator {
    fn distort(&self, image: &Image) -> Result<Image> {
        match self {
            Generator::Net(n) => n.distort(image),
            Generator::Identity(s) if image.shape() != *s => Err(Error::Dimension(format!(
                "generator expects {s}, got {}",
                image.shape()
            ))),
            Generator::Identity(_) => IdentityGenerator.distort(image),
        }
    }
}

/// Channel widths of the two-level U-Net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorArch {
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub enc1_channels: usize,
    pub enc2_channels: usize,
    pub bottleneck_channels: usize,
    pub dec2_channels: usize,
    pub dec1_channels: usize,
    pub leaky_slope: f64,
}

impl GeneratorArch {
    pub fn mnist() -> Self {
        Self {
            input_width: 28,
            input_height: 28,
            input_channels: 1,
            enc1_channels: 32,
            enc2_channels: 64,
            bottleneck_channels: 128,
            dec2_channels: 64,
            dec1_channels: 32,
            leaky_slope: 0.01,
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.input_width, self.input_height, self.input_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width < 4 || self.input_height < 4 {
            return Err(Error::Validation("generator input must be at least 4x4".into()));
        }
        let sizes = [
            self.input_channels,
            self.enc1_channels,
            self.enc2_channels,
            self.bottleneck_channels,
            self.dec2_channels,
            self.dec1_channels,
        ];
        if sizes.contains(&0) {
            return Err(Error::Validation("generator layer sizes must be nonzero".into()));
        }
        Ok(())
    }

    fn build(&self) -> (ParamLayout, UNet, Vec<(&'static str, usize)>) {
        let mut l = ParamLayout::new();
        let mut conv = |name: &'static str, cin: usize, cout: usize, kernel: usize| Conv2d {
            cin,
            cout,
            kernel,
            weight: l.push(format!("{name}.weight"), &[cout, cin, kernel, kernel]),
            bias: l.push(format!("{name}.bias"), &[cout]),
        };
        let net = UNet {
            enc1: conv("enc1", self.input_channels, self.enc1_channels, 3),
            enc2: conv("enc2", self.enc1_channels, self.enc2_channels, 3),
            bottleneck: conv("bottleneck", self.enc2_channels, self.bottleneck_channels, 3),
            dec2: conv(
                "dec2",
                self.bottleneck_channels + self.enc2_channels,
                self.dec2_channels,
                3,
            ),
            dec1: conv(
                "dec1",
                self.dec2_channels + self.enc1_channels,
                self.dec1_channels,
                3,
            ),
            head: conv("head", self.dec1_channels, self.input_channels, 1),
        };
        let fan_ins = vec![
            ("enc1.weight", net.enc1.patch_len()),
            ("enc2.weight", net.enc2.patch_len()),
            ("bottleneck.weight", net.bottleneck.patch_len()),
            ("dec2.weight", net.dec2.patch_len()),
            ("dec1.weight", net.dec1.patch_len()),
            ("head.weight", net.head.patch_len()),
        ];
        (l, net, fan_ins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UNet {
    enc1: Conv2d,
    enc2: Conv2d,
    bottleneck: Conv2d,
    dec2: Conv2d,
    dec1: Conv2d,
    head: Conv2d,
}

#[derive(Debug, Clone, Default)]
pub struct GenCache<T> {
    cols: [Vec<T>; 6],
    e1: Vec<T>,
    i1: Vec<u32>,
    e2: Vec<T>,
    i2: Vec<u32>,
    b: Vec<T>,
    d2: Vec<T>,
    d1: Vec<T>,
    out: Vec<T>,
}

/// U-Net generator with sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet<T = f32> {
    arch: GeneratorArch,
    layout: ParamLayout,
    net: UNet,
    params: Vec<T>,
}

fn concat<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn init(arch: GeneratorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (layout, net, fan_ins) = arch.build();
        let params = he_normal(&layout, &fan_ins, seed);
        Ok(Self {
            arch,
            layout,
            net,
            params,
        })
    }

    pub fn from_params(arch: GeneratorArch, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let (layout, net, _) = arch.build();
        if params.len() != layout.total() {
            return Err(Error::Validation(format!(
                "generator expects {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            layout,
            net,
            params,
        })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> GeneratorNet<U> {
        GeneratorNet {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            net: self.net,
            params: self.params.iter().map(|&p| U::from_f64(p.as_f64())).collect(),
        }
    }

    fn sizes(&self) -> [(usize, usize); 3] {
        let (h, w) = (self.arch.input_height, self.arch.input_width);
        [(h, w), (h / 2, w / 2), (h / 4, w / 4)]
    }

    /// Distorted image with every intensity in (0, 1).
    pub fn generate(&self, image: &Image<T>) -> Result<Image<T>> {
        if image.shape() != self.arch.input_shape() {
            return Err(Error::Dimension(format!(
                "generator expects {}, got {}",
                self.arch.input_shape(),
                image.shape()
            )));
        }
        let out = self.forward(image.pixels(), &mut GenCache::default());
        Image::new(image.shape(), out)
    }

    pub fn forward(&self, x: &[T], cache: &mut GenCache<T>) -> Vec<T> {
        let a = &self.arch;
        let slope = T::from_f64(a.leaky_slope);
        let [s0, s1, s2] = self.sizes();
        let p = &self.params;
        let n = &self.net;
        let [c0, c1, c2, c3, c4, c5] = &mut cache.cols;

        let mut e1 = n.enc1.forward(p, x, s0.0, s0.1, c0);
        layers::leaky_relu(&mut e1, slope);
        let (p1, i1) = layers::max_pool2(&e1, a.enc1_channels, s0.0, s0.1);
        let mut e2 = n.enc2.forward(p, &p1, s1.0, s1.1, c1);
        layers::leaky_relu(&mut e2, slope);
        let (p2, i2) = layers::max_pool2(&e2, a.enc2_channels, s1.0, s1.1);
        let mut b = n.bottleneck.forward(p, &p2, s2.0, s2.1, c2);
        layers::leaky_relu(&mut b, slope);

        let u2 = layers::upsample_nearest(&b, a.bottleneck_channels, s2, s1);
        let mut d2 = n.dec2.forward(p, &concat(&u2, &e2), s1.0, s1.1, c3);
        layers::leaky_relu(&mut d2, slope);
        let u1 = layers::upsample_nearest(&d2, a.dec2_channels, s1, s0);
        let mut d1 = n.dec1.forward(p, &concat(&u1, &e1), s0.0, s0.1, c4);
        layers::leaky_relu(&mut d1, slope);
        let mut out = n.head.forward(p, &d1, s0.0, s0.1, c5);
        layers::sigmoid(&mut out);

        cache.e1 = e1;
        cache.i1 = i1;
        cache.e2 = e2;
        cache.i2 = i2;
        cache.b = b;
        cache.d2 = d2;
        cache.d1 = d1;
        cache.out = out.clone();
        out
    }

    /// Adds parameter gradients for `dout` (gradient w.r.t. the output
    /// image) into `grads`.
    pub fn backward(&self, cache: &GenCache<T>, dout: &[T], grads: &mut [T]) {
        let a = &self.arch;
        let slope = T::from_f64(a.leaky_slope);
        let [s0, s1, s2] = self.sizes();
        let p = &self.params;
        let n = &self.net;
        let [c0, c1, c2, c3, c4, c5] = &cache.cols;
        let hw0 = s0.0 * s0.1;
        let hw1 = s1.0 * s1.1;

        let mut dhead = dout.to_vec();
        layers::sigmoid_backward(&mut dhead, &cache.out);
        let mut dd1 = n
            .head
            .backward(p, &dhead, c5, s0.0, s0.1, Some(&mut *grads), true)
            .expect("input grad requested");
        layers::leaky_relu_backward(&mut dd1, &cache.d1, slope);
        let dcat1 = n
            .dec1
            .backward(p, &dd1, c4, s0.0, s0.1, Some(&mut *grads), true)
            .expect("input grad requested");
        let (du1, de1_skip) = dcat1.split_at(a.dec2_channels * hw0);
        let mut dd2 = layers::upsample_nearest_backward(du1, a.dec2_channels, s1, s0);
        layers::leaky_relu_backward(&mut dd2, &cache.d2, slope);
        let dcat2 = n
            .dec2
            .backward(p, &dd2, c3, s1.0, s1.1, Some(&mut *grads), true)
            .expect("input grad requested");
        let (du2, de2_skip) = dcat2.split_at(a.bottleneck_channels * hw1);
        let mut db = layers::upsample_nearest_backward(du2, a.bottleneck_channels, s2, s1);
        layers::leaky_relu_backward(&mut db, &cache.b, slope);
        let dp2 = n
            .bottleneck
            .backward(p, &db, c2, s2.0, s2.1, Some(&mut *grads), true)
            .expect("input grad requested");
        let mut de2 = layers::max_pool2_backward(&dp2, &cache.i2, cache.e2.len());
        for (d, &s) in de2.iter_mut().zip(de2_skip) {
            *d += s;
        }
        layers::leaky_relu_backward(&mut de2, &cache.e2, slope);
        let dp1 = n
            .enc2
            .backward(p, &de2, c1, s1.0, s1.1, Some(&mut *grads), true)
            .expect("input grad requested");
        let mut de1 = layers::max_pool2_backward(&dp1, &cache.i1, cache.e1.len());
        for (d, &s) in de1.iter_mut().zip(de1_skip) {
            *d += s;
        }
        layers::leaky_relu_backward(&mut de1, &cache.e1, slope);
        n.enc1.backward(p, &de1, c0, s0.0, s0.1, Some(grads), false);
    }
}

impl Distort for GeneratorNet<f32> {
    fn distort(&self, image: &Image) -> Result<Image> {
        let mut out = self.generate(image)?;
        out.set_label(image.label());
        Ok(out)
    }
}

/// Hyperparameters of the generator trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTrainConfig {
    /// Embedding drift tolerated before the hinge activates.
    pub margin: f64,
    pub pi_emb: f64,
    pub distance: ImageDistance,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Images drawn (seeded, without replacement) per epoch; 0 means all.
    pub images_per_epoch: usize,
    pub seed: u64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            pi_emb: 0.9,
            distance: ImageDistance::L2,
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 20,
            images_per_epoch: 0,
            seed: 0,
        }
    }
}

impl GeneratorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.pi_emb) {
            return Err(Error::Config(format!("pi_emb {} outside [0, 1]", self.pi_emb)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.distance.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Value of the trainer objective for one image, with its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerLoss {
    pub total: f64,
    /// `−d_img(G(X), X)`, never positive.
    pub image: f64,
    /// `ReLU(d_emb − alpha)`, never negative.
    pub embedding: f64,
    pub d_img: f64,
    pub d_emb: f64,
}

impl TrainerLoss {
    pub fn from_distances(d_img: f64, d_emb: f64, margin: f64, pi_emb: f64) -> Self {
        let image = -d_img;
        let embedding = (d_emb - margin).max(0.0);
        Self {
            total: (1.0 - pi_emb) * image + pi_emb * embedding,
            image,
            embedding,
            d_img,
            d_emb,
        }
    }
}

/// Trainer objective for a single image.
pub fn trainer_loss<T: Scalar>(
    x: &Image<T>,
    gen: &GeneratorNet<T>,
    emb: &EmbeddingNet<T>,
    config: &GeneratorTrainConfig,
) -> Result<TrainerLoss> {
    let y = gen.generate(x)?;
    let target = emb.embed(x)?;
    let (loss, _) = output_loss_and_gradient(&y, x, &target, emb, config)?;
    Ok(loss)
}

/// Trainer objective as a function of the generator output `y`, and its
/// gradient with respect to every pixel of `y`.
pub fn output_loss_and_gradient<T: Scalar>(
    y: &Image<T>,
    x: &Image<T>,
    target: &[T],
    emb: &EmbeddingNet<T>,
    config: &GeneratorTrainConfig,
) -> Result<(TrainerLoss, Vec<T>)> {
    y.ensure_same_shape(x)?;
    let mut cache = EmbedCache::default();
    let ey = emb.forward(y.pixels(), &mut cache);
    let d_img = config.distance.distance(y, x)?;
    let d_emb = embedding_distance(&ey, target)?;
    let loss = TrainerLoss::from_distances(d_img, d_emb, config.margin, config.pi_emb);

    let img_w = T::from_f64(-(1.0 - config.pi_emb));
    let mut grad: Vec<T> = config
        .distance
        .gradient(y, x)?
        .into_iter()
        .map(|g| img_w * g)
        .collect();
    if d_emb > config.margin && config.pi_emb > 0.0 {
        let w = T::from_f64(2.0 * config.pi_emb);
        let dy: Vec<T> = ey.iter().zip(target).map(|(&a, &b)| w * (a - b)).collect();
        let dx = emb
            .backward(&cache, &dy, None, true)
            .expect("input grad requested");
        for (g, d) in grad.iter_mut().zip(dx) {
            *g += d;
        }
    }
    Ok((loss, grad))
}

/// Mean trainer loss over a batch of `(image, target embedding)` pairs and
/// its gradient with respect to the generator parameters.
pub fn batch_loss_and_gradient<T: Scalar>(
    gen: &GeneratorNet<T>,
    emb: &EmbeddingNet<T>,
    batch: &[(&Image<T>, &[T])],
    config: &GeneratorTrainConfig,
) -> Result<(TrainerLoss, Vec<T>)> {
    let scale = T::from_f64(1.0 / batch.len().max(1) as f64);
    let (grad, losses) = accumulate_gradients(batch, gen.layout.total(), |&(x, target), grad| {
        let mut cache = GenCache::default();
        let out = gen.forward(x.pixels(), &mut cache);
        let y = Image::new(x.shape(), out)?;
        let (loss, dy) = output_loss_and_gradient(&y, x, target, emb, config)?;
        let dy: Vec<T> = dy.into_iter().map(|g| g * scale).collect();
        gen.backward(&cache, &dy, grad);
        Ok::<_, Error>(loss)
    })?;
    Ok((mean_loss(&losses), grad))
}

fn mean_loss(losses: &[TrainerLoss]) -> TrainerLoss {
    let n = losses.len().max(1) as f64;
    let sum = |f: fn(&TrainerLoss) -> f64| losses.iter().map(f).sum::<f64>() / n;
    TrainerLoss {
        total: sum(|l| l.total),
        image: sum(|l| l.image),
        embedding: sum(|l| l.embedding),
        d_img: sum(|l| l.d_img),
        d_emb: sum(|l| l.d_emb),
    }
}

/// Per-epoch means of the trainer objective and any collapse warnings.
#[derive(Debug, Clone, Default)]
pub struct GeneratorTrace {
    pub epochs: Vec<TrainerLoss>,
    pub warnings: Vec<String>,
}

const COLLAPSE_IMAGE_LOSS: f64 = 0.05;
const COLLAPSE_EMBEDDING_LOSS: f64 = 1e-6;
const COLLAPSE_EPOCHS: usize = 3;

/// Trains a fresh generator against the frozen `emb`.
pub fn train_generator(
    dataset: &Dataset,
    emb: &EmbeddingNet<f32>,
    arch: GeneratorArch,
    config: &GeneratorTrainConfig,
) -> Result<(GeneratorNet<f32>, GeneratorTrace)> {
    let gen = GeneratorNet::init(arch, config.seed)?;
    train_generator_from(gen, dataset, emb, config)
}

pub fn train_generator_from(
    mut gen: GeneratorNet<f32>,
    dataset: &Dataset,
    emb: &EmbeddingNet<f32>,
    config: &GeneratorTrainConfig,
) -> Result<(GeneratorNet<f32>, GeneratorTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config(
            "generator training needs a nonempty dataset".into(),
        ));
    }
    if !all_finite(emb.params()) {
        return Err(Error::Validation(
            "embedding network has non-finite weights".into(),
        ));
    }
    if emb.arch().input_shape() != gen.arch.input_shape() {
        return Err(Error::Dimension(format!(
            "embedding takes {}, generator produces {}",
            emb.arch().input_shape(),
            gen.arch.input_shape()
        )));
    }
    let targets: Vec<Vec<f32>> = dataset
        .images
        .par_iter()
        .map(|img| emb.embed(img))
        .collect::<Result<_>>()?;

    let per_epoch = match config.images_per_epoch {
        0 => dataset.len(),
        n => n.min(dataset.len()),
    };
    let mut adam = Adam::<f32>::new(config.learning_rate, gen.layout.total());
    let mut trace = GeneratorTrace::default();
    let mut collapsed_run = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch)));
        order.truncate(per_epoch);
        let mut losses = Vec::with_capacity(per_epoch.div_ceil(config.batch_size));
        let mut weights = Vec::with_capacity(losses.capacity());
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<(&Image, &[f32])> = idx
                .iter()
                .map(|&i| (&dataset.images[i], targets[i].as_slice()))
                .collect();
            let (loss, grad) = batch_loss_and_gradient(&gen, emb, &batch, config)?;
            if !loss.total.is_finite() || !all_finite(&grad) {
                return Err(Error::Diverged(format!(
                    "non-finite generator loss in epoch {}: exploding gradients; \
                     lower the learning rate or raise pi_emb / lower alpha",
                    epoch + 1
                )));
            }
            adam.step(&mut gen.params, &grad);
            losses.push(loss);
            weights.push(idx.len() as f64);
        }
        let total_w: f64 = weights.iter().sum();
        let wmean = |f: fn(&TrainerLoss) -> f64| {
            losses.iter().zip(&weights).map(|(l, w)| f(l) * w).sum::<f64>() / total_w
        };
        let epoch_loss = TrainerLoss {
            total: wmean(|l| l.total),
            image: wmean(|l| l.image),
            embedding: wmean(|l| l.embedding),
            d_img: wmean(|l| l.d_img),
            d_emb: wmean(|l| l.d_emb),
        };
        log::info!(
            "generator epoch {}/{}: total {:.6} l_img {:.6} l_emb {:.6} (d_emb {:.4})",
            epoch + 1,
            config.epochs,
            epoch_loss.total,
            epoch_loss.image,
            epoch_loss.embedding,
            epoch_loss.d_emb
        );
        if epoch_loss.image.abs() < COLLAPSE_IMAGE_LOSS && epoch_loss.embedding < COLLAPSE_EMBEDDING_LOSS {
            collapsed_run += 1;
        } else {
            collapsed_run = 0;
        }
        if collapsed_run == COLLAPSE_EPOCHS {
            let msg = format!(
                "identity/gamma-shift collapse: |l_img| < {COLLAPSE_IMAGE_LOSS} with l_emb ~ 0 for \
                 {COLLAPSE_EPOCHS} epochs (ending at epoch {}); pi_emb = {} may be too large or \
                 alpha = {} too small",
                epoch + 1,
                config.pi_emb,
                config.margin
            );
            log::warn!("{msg}");
            trace.warnings.push(msg);
        }
        trace.epochs.push(epoch_loss);
    }
    Ok((gen, trace))
}

/// One row of a margin sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub alpha: f64,
    pub outcome: std::result::Result<SweepSummary, String>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    /// Mean L2 distance between held-out images and their distortions.
    pub mean_d_img: f64,
    /// Mean squared embedding drift on held-out images.
    pub mean_d_emb: f64,
    /// Distortions of the first few held-out images.
    pub samples: Vec<Image>,
    pub trace: GeneratorTrace,
}

const SWEEP_SAMPLES: usize = 4;

/// Trains one generator per margin (same seed each time) and summarizes it
/// on held-out images. Failures are recorded per entry.
pub fn margin_sweep(
    train: &Dataset,
    heldout: &Dataset,
    emb: &EmbeddingNet<f32>,
    alphas: &[f64],
    arch: &GeneratorArch,
    base: &GeneratorTrainConfig,
) -> Result<Vec<SweepEntry>> {
    if alphas.is_empty() {
        return Err(Error::Parameter("margin sweep needs at least one alpha".into()));
    }
    if let Some(bad) = alphas.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::Parameter(format!("alpha {bad} must be >= 0")));
    }
    if heldout.is_empty() {
        return Err(Error::Parameter("margin sweep needs held-out images".into()));
    }
    Ok(alphas
        .par_iter()
        .map(|&alpha| {
            let config = GeneratorTrainConfig {
                margin: alpha,
                ..base.clone()
            };
            let outcome = train_generator(train, emb, arch.clone(), &config)
                .and_then(|(gen, trace)| summarize(&gen, emb, heldout, trace))
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("margin sweep alpha={alpha} failed: {e}");
            }
            SweepEntry { alpha, outcome }
        })
        .collect())
}

fn summarize(
    gen: &GeneratorNet<f32>,
    emb: &EmbeddingNet<f32>,
    heldout: &Dataset,
    trace: GeneratorTrace,
) -> Result<SweepSummary> {
    let rows: Vec<(f64, f64, Image)> = heldout
        .images
        .par_iter()
        .map(|x| {
            let y = gen.distort(x)?;
            let d_img = l2_distance(&y, x)?;
            let d_emb = embedding_distance(&emb.embed(&y)?, &emb.embed(x)?)?;
            Ok((d_img, d_emb, y))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok(SweepSummary {
        mean_d_img: rows.iter().map(|r| r.0).sum::<f64>() / n,
        mean_d_emb: rows.iter().map(|r| r.1).sum::<f64>() / n,
        samples: rows.into_iter().take(SWEEP_SAMPLES).map(|r| r.2).collect(),
        trace,
    })
}
