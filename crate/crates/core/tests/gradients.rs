//! Finite-difference checks for network parameter gradients in f64.

mod common;

use common::{random_image, rel_err, rng};
use embedsafe::embedding::{self, EmbeddingArch, EmbeddingNet};
use embedsafe::generator::{self, GeneratorArch, GeneratorNet, GeneratorTrainConfig};
use embedsafe::image::{Image, Shape};
use embedsafe::metrics::ImageDistance;
use rand::seq::index::sample;

const H: f64 = 1e-6;
const SHAPE: Shape = Shape {
    width: 5,
    height: 5,
    channels: 1,
};

fn tiny_embedding(seed: u64) -> EmbeddingNet<f64> {
    let arch = EmbeddingArch {
        input_width: 5,
        input_height: 5,
        conv1_channels: 3,
        conv2_channels: 4,
        hidden_units: 6,
        embedding_dim: 4,
        ..EmbeddingArch::mnist()
    };
    EmbeddingNet::init(arch, seed).unwrap()
}

fn tiny_generator(seed: u64) -> GeneratorNet<f64> {
    let arch = GeneratorArch {
        input_width: 5,
        input_height: 5,
        enc1_channels: 2,
        enc2_channels: 3,
        bottleneck_channels: 4,
        dec2_channels: 3,
        dec1_channels: 2,
        ..GeneratorArch::mnist()
    };
    GeneratorNet::init(arch, seed).unwrap()
}

/// Vector relative error `|g - fd| / max(|fd|, floor)`.
fn vec_rel_err(g: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = g.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

#[test]
fn embedding_parameter_gradient_matches_finite_differences() {
    let mut r = rng(11);
    for seed in 0..5 {
        let mut net = tiny_embedding(seed);
        let imgs: Vec<Image<f64>> = (0..6).map(|_| random_image(&mut r, SHAPE)).collect();
        let batch: Vec<_> = imgs.chunks(3).map(|c| (&c[0], &c[1], &c[2])).collect();
        // A large margin keeps every hinge active.
        let margin = 5.0;
        let (_, grad) = embedding::batch_loss_and_gradient(&net, &batch, margin).unwrap();
        let idx = sample(&mut r, grad.len(), 40);
        let mut g = Vec::new();
        let mut fd = Vec::new();
        for i in idx.iter() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + H;
            let up = embedding::batch_loss_and_gradient(&net, &batch, margin)
                .unwrap()
                .0;
            net.params_mut()[i] = orig - H;
            let down = embedding::batch_loss_and_gradient(&net, &batch, margin)
                .unwrap()
                .0;
            net.params_mut()[i] = orig;
            g.push(grad[i]);
            fd.push((up - down) / (2.0 * H));
        }
        let e = vec_rel_err(&g, &fd);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn generator_parameter_gradient_matches_finite_differences() {
    let mut r = rng(12);
    for (seed, distance) in [
        ImageDistance::L1,
        ImageDistance::L2,
        ImageDistance::dssim(),
        ImageDistance::Sobel,
        ImageDistance::combined(),
    ]
    .into_iter()
    .enumerate()
    {
        let emb = tiny_embedding(seed as u64);
        let mut gen = tiny_generator(seed as u64);
        let config = GeneratorTrainConfig {
            margin: 0.0,
            distance,
            ..Default::default()
        };
        let xs: Vec<Image<f64>> = (0..3).map(|_| random_image(&mut r, SHAPE)).collect();
        let targets: Vec<Vec<f64>> = xs.iter().map(|x| emb.embed(x).unwrap()).collect();
        let batch: Vec<(&Image<f64>, &[f64])> =
            xs.iter().zip(&targets).map(|(x, t)| (x, t.as_slice())).collect();
        let loss =
            |g: &GeneratorNet<f64>| generator::batch_loss_and_gradient(g, &emb, &batch, &config).unwrap();
        let (_, grad) = loss(&gen);
        let idx = sample(&mut r, grad.len(), 40);
        let (mut g, mut fd) = (Vec::new(), Vec::new());
        for i in idx.iter() {
            let orig = gen.params()[i];
            gen.params_mut()[i] = orig + H;
            let up = loss(&gen).0.total;
            gen.params_mut()[i] = orig - H;
            let down = loss(&gen).0.total;
            gen.params_mut()[i] = orig;
            g.push(grad[i]);
            fd.push((up - down) / (2.0 * H));
        }
        let e = vec_rel_err(&g, &fd);
        assert!(e < 1e-4, "{}: relative error {e}", distance.name());
    }
}

#[test]
fn embedding_input_gradient_matches_finite_differences() {
    let mut r = rng(13);
    let net = tiny_embedding(3);
    for _ in 0..10 {
        let x = random_image(&mut r, SHAPE);
        let w: Vec<f64> = (0..4).map(|k| k as f64 - 1.5).collect();
        let f = |px: &[f64]| -> f64 {
            let y = net.embed(&Image::new(SHAPE, px.to_vec()).unwrap()).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut cache = Default::default();
        net.forward(x.pixels(), &mut cache);
        let dx = net.backward(&cache, &w, None, true).unwrap();
        for i in 0..x.pixels().len() {
            let mut p = x.pixels().to_vec();
            p[i] += H;
            let up = f(&p);
            p[i] -= 2.0 * H;
            let down = f(&p);
            let fd = (up - down) / (2.0 * H);
            assert!(rel_err(dx[i], fd) < 1e-4, "pixel {i}: {} vs {fd}", dx[i]);
        }
    }
}
