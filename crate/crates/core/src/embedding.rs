//! Triplet-loss embedding network mapping images onto the unit hypersphere.
//!
//! Architecture: conv3×3 → LeakyReLU → maxpool2 → conv3×3 → LeakyReLU →
//! maxpool2 → dense → LeakyReLU → dense → L2 normalization.

use serde::{Deserialize, Serialize};

use crate::data::{sample_triplets, Dataset};
use crate::image::{Image, Shape};
use crate::metrics::embedding_distance;
use crate::nn::layers::{self, Conv2d, Dense};
use crate::nn::params::he_normal;
use crate::nn::{accumulate_gradients, all_finite, Adam, ParamLayout, Scalar};
use crate::{Error, Result};

/// Layer sizes and constants of an [`EmbeddingNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingArch {
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden_units: usize,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
    pub norm_epsilon: f64,
}

impl EmbeddingArch {
    pub fn mnist() -> Self {
        Self {
            input_width: 28,
            input_height: 28,
            input_channels: 1,
            conv1_channels: 32,
            conv2_channels: 64,
            hidden_units: 128,
            embedding_dim: 10,
            leaky_slope: 0.01,
            norm_epsilon: 1e-8,
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.input_width, self.input_height, self.input_channels)
    }

    fn flat_len(&self) -> usize {
        self.conv2_channels * (self.input_height / 4) * (self.input_width / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width < 4 || self.input_height < 4 {
            return Err(Error::Validation("embedding input must be at least 4x4".into()));
        }
        let sizes = [
            self.input_channels,
            self.conv1_channels,
            self.conv2_channels,
            self.hidden_units,
            self.embedding_dim,
        ];
        if sizes.contains(&0) {
            return Err(Error::Validation("embedding layer sizes must be nonzero".into()));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::Validation("norm_epsilon must be positive".into()));
        }
        Ok(())
    }

    fn build(&self) -> (ParamLayout, Layers, Vec<(&'static str, usize)>) {
        let mut l = ParamLayout::new();
        let (c0, c1, c2) = (self.input_channels, self.conv1_channels, self.conv2_channels);
        let conv1 = Conv2d {
            cin: c0,
            cout: c1,
            kernel: 3,
            weight: l.push("conv1.weight", &[c1, c0, 3, 3]),
            bias: l.push("conv1.bias", &[c1]),
        };
        let conv2 = Conv2d {
            cin: c1,
            cout: c2,
            kernel: 3,
            weight: l.push("conv2.weight", &[c2, c1, 3, 3]),
            bias: l.push("conv2.bias", &[c2]),
        };
        let flat = self.flat_len();
        let dense1 = Dense {
            inputs: flat,
            outputs: self.hidden_units,
            weight: l.push("dense1.weight", &[self.hidden_units, flat]),
            bias: l.push("dense1.bias", &[self.hidden_units]),
        };
        let dense2 = Dense {
            inputs: self.hidden_units,
            outputs: self.embedding_dim,
            weight: l.push("dense2.weight", &[self.embedding_dim, self.hidden_units]),
            bias: l.push("dense2.bias", &[self.embedding_dim]),
        };
        let fan_ins = vec![
            ("conv1.weight", c0 * 9),
            ("conv2.weight", c1 * 9),
            ("dense1.weight", flat),
            ("dense2.weight", self.hidden_units),
        ];
        (
            l,
            Layers {
                conv1,
                conv2,
                dense1,
                dense2,
            },
            fan_ins,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layers {
    conv1: Conv2d,
    conv2: Conv2d,
    dense1: Dense,
    dense2: Dense,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct EmbedCache<T> {
    cols1: Vec<T>,
    act1: Vec<T>,
    pool1: Vec<u32>,
    cols2: Vec<T>,
    act2: Vec<T>,
    pool2: Vec<u32>,
    flat: Vec<T>,
    hidden: Vec<T>,
    output: Vec<T>,
    norm: T,
}

/// Embedding network with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet<T = f32> {
    arch: EmbeddingArch,
    layout: ParamLayout,
    layers: Layers,
    params: Vec<T>,
}

/// Adam state and hyperparameters for [`train_embedding`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletTrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub triplets_per_epoch: usize,
    pub seed: u64,
}

impl Default for TripletTrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            learning_rate: 5e-5,
            batch_size: 64,
            epochs: 10,
            triplets_per_epoch: 30_000,
            seed: 0,
        }
    }
}

impl TripletTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> EmbeddingNet<T> {
    /// He-normal weights (variance 1/fan-in), zero biases.
    pub fn init(arch: EmbeddingArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (layout, layers, fan_ins) = arch.build();
        let params = he_normal(&layout, &fan_ins, seed);
        Ok(Self {
            arch,
            layout,
            layers,
            params,
        })
    }

    pub fn from_params(arch: EmbeddingArch, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let (layout, layers, _) = arch.build();
        if params.len() != layout.total() {
            return Err(Error::Validation(format!(
                "embedding expects {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            layout,
            layers,
            params,
        })
    }

    pub fn arch(&self) -> &EmbeddingArch {
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

    pub fn dim(&self) -> usize {
        self.arch.embedding_dim
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingNet<U> {
        EmbeddingNet {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            layers: self.layers,
            params: self.params.iter().map(|&p| U::from_f64(p.as_f64())).collect(),
        }
    }

    /// Unit-norm embedding of a validated image.
    pub fn embed(&self, image: &Image<T>) -> Result<Vec<T>> {
        if image.shape() != self.arch.input_shape() {
            return Err(Error::Dimension(format!(
                "embedding expects {}, got {}",
                self.arch.input_shape(),
                image.shape()
            )));
        }
        Ok(self.forward(image.pixels(), &mut EmbedCache::default()))
    }

    /// Forward pass over raw channel-major pixels, filling `cache`.
    pub fn forward(&self, x: &[T], cache: &mut EmbedCache<T>) -> Vec<T> {
        let a = &self.arch;
        let slope = T::from_f64(a.leaky_slope);
        let (h0, w0) = (a.input_height, a.input_width);
        let (h1, w1) = (h0 / 2, w0 / 2);
        let p = &self.params;
        let l = &self.layers;

        let mut act1 = l.conv1.forward(p, x, h0, w0, &mut cache.cols1);
        layers::leaky_relu(&mut act1, slope);
        let (pooled1, idx1) = layers::max_pool2(&act1, a.conv1_channels, h0, w0);
        let mut act2 = l.conv2.forward(p, &pooled1, h1, w1, &mut cache.cols2);
        layers::leaky_relu(&mut act2, slope);
        let (flat, idx2) = layers::max_pool2(&act2, a.conv2_channels, h1, w1);
        let mut hidden = l.dense1.forward(p, &flat);
        layers::leaky_relu(&mut hidden, slope);
        let output = l.dense2.forward(p, &hidden);
        let (y, norm) = layers::l2_normalize(&output, T::from_f64(a.norm_epsilon));

        cache.act1 = act1;
        cache.pool1 = idx1;
        cache.act2 = act2;
        cache.pool2 = idx2;
        cache.flat = flat;
        cache.hidden = hidden;
        cache.output = y.clone();
        cache.norm = norm;
        y
    }

    /// Backward pass from `dy` (gradient w.r.t. the normalized embedding).
    /// Weight gradients are added into `grads` when given; the input
    /// gradient is returned when requested.
    pub fn backward(
        &self,
        cache: &EmbedCache<T>,
        dy: &[T],
        mut grads: Option<&mut [T]>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let a = &self.arch;
        let slope = T::from_f64(a.leaky_slope);
        let (h0, w0) = (a.input_height, a.input_width);
        let (h1, w1) = (h0 / 2, w0 / 2);
        let p = &self.params;
        let l = &self.layers;

        let dz = layers::l2_normalize_backward(dy, &cache.output, cache.norm);
        let mut dhidden = l
            .dense2
            .backward(p, &dz, &cache.hidden, grads.as_deref_mut(), true)
            .expect("input grad requested");
        layers::leaky_relu_backward(&mut dhidden, &cache.hidden, slope);
        let dflat = l
            .dense1
            .backward(p, &dhidden, &cache.flat, grads.as_deref_mut(), true)
            .expect("input grad requested");
        let mut dact2 = layers::max_pool2_backward(&dflat, &cache.pool2, cache.act2.len());
        layers::leaky_relu_backward(&mut dact2, &cache.act2, slope);
        let dpool1 = l
            .conv2
            .backward(p, &dact2, &cache.cols2, h1, w1, grads.as_deref_mut(), true)
            .expect("input grad requested");
        let mut dact1 = layers::max_pool2_backward(&dpool1, &cache.pool1, cache.act1.len());
        layers::leaky_relu_backward(&mut dact1, &cache.act1, slope);
        l.conv1
            .backward(p, &dact1, &cache.cols1, h0, w0, grads, want_input_grad)
    }
}

/// `ReLU(d(a, p) − d(a, n) + margin)` with squared Euclidean distances.
pub fn triplet_loss<T: Scalar>(a: &[T], p: &[T], n: &[T], margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::Parameter(format!("margin must be > 0, got {margin}")));
    }
    let d_ap = embedding_distance(a, p)?;
    let d_an = embedding_distance(a, n)?;
    Ok((d_ap - d_an + margin).max(0.0))
}

/// Mean triplet loss over a batch and its gradient with respect to every
/// network parameter.
pub fn batch_loss_and_gradient<T: Scalar>(
    net: &EmbeddingNet<T>,
    batch: &[(&Image<T>, &Image<T>, &Image<T>)],
    margin: f64,
) -> Result<(f64, Vec<T>)> {
    let scale = T::from_f64(1.0 / batch.len().max(1) as f64);
    let (grad, losses) = accumulate_gradients(batch, net.layout.total(), |&(a, p, n), grad| {
        let mut caches: [EmbedCache<T>; 3] = Default::default();
        let ea = net.forward(a.pixels(), &mut caches[0]);
        let ep = net.forward(p.pixels(), &mut caches[1]);
        let en = net.forward(n.pixels(), &mut caches[2]);
        let loss = triplet_loss(&ea, &ep, &en, margin)?;
        if loss > 0.0 {
            let two = T::from_f64(2.0) * scale;
            let da: Vec<T> = ep.iter().zip(&en).map(|(&p, &n)| two * (n - p)).collect();
            let dp: Vec<T> = ep.iter().zip(&ea).map(|(&p, &a)| two * (p - a)).collect();
            let dn: Vec<T> = ea.iter().zip(&en).map(|(&a, &n)| two * (a - n)).collect();
            net.backward(&caches[0], &da, Some(&mut *grad), false);
            net.backward(&caches[1], &dp, Some(&mut *grad), false);
            net.backward(&caches[2], &dn, Some(&mut *grad), false);
        }
        Ok::<f64, Error>(loss)
    })?;
    let mean = losses.iter().sum::<f64>() / batch.len().max(1) as f64;
    Ok((mean, grad))
}

pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Result of [`train_embedding`].
#[derive(Debug, Clone)]
pub struct EmbeddingTrace {
    /// Mean triplet loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Triplet training with uniformly sampled triplets and Adam.
pub fn train_embedding(
    dataset: &Dataset,
    arch: EmbeddingArch,
    config: &TripletTrainConfig,
) -> Result<(EmbeddingNet<f32>, EmbeddingTrace)> {
    train_embedding_from(EmbeddingNet::init(arch, config.seed)?, dataset, config)
}

/// Continues training an existing network.
pub fn train_embedding_from(
    mut net: EmbeddingNet<f32>,
    dataset: &Dataset,
    config: &TripletTrainConfig,
) -> Result<(EmbeddingNet<f32>, EmbeddingTrace)> {
    config.validate()?;
    let classes = dataset.class_indices();
    if dataset.is_empty() || classes.len() < 2 {
        return Err(Error::Config(
            "embedding training needs a dataset with at least two classes".into(),
        ));
    }
    if let Some(img) = dataset.images.first() {
        if img.shape() != net.arch.input_shape() {
            return Err(Error::Dimension(format!(
                "dataset images are {}, network expects {}",
                img.shape(),
                net.arch.input_shape()
            )));
        }
    }
    let mut adam = Adam::<f32>::new(config.learning_rate, net.layout.total());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let triplets = sample_triplets(dataset, config.triplets_per_epoch, epoch_seed(config.seed, epoch))?;
        let mut total = 0.0;
        for batch in triplets.chunks(config.batch_size) {
            let batch: Vec<_> = batch.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
            let (loss, grad) = batch_loss_and_gradient(&net, &batch, config.margin)?;
            if !loss.is_finite() || !all_finite(&grad) {
                return Err(Error::Diverged(format!(
                    "non-finite triplet loss in epoch {}",
                    epoch + 1
                )));
            }
            total += loss * batch.len() as f64;
            adam.step(&mut net.params, &grad);
        }
        let mean = total / triplets.len().max(1) as f64;
        log::info!(
            "embedding epoch {}/{}: mean triplet loss {mean:.6}",
            epoch + 1,
            config.epochs
        );
        epoch_losses.push(mean);
    }
    Ok((net, EmbeddingTrace { epoch_losses }))
}
