#![allow(dead_code)]

use std::path::PathBuf;

use embedsafe::data::{load_idx, Dataset, Split};
use embedsafe::image::{Image, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// MNIST directory: `EMBEDSAFE_MNIST_DIR` or `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("EMBEDSAFE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist_paths() -> [PathBuf; 4] {
    let d = mnist_dir();
    let paths = [
        d.join("train-images-idx3-ubyte"),
        d.join("train-labels-idx1-ubyte"),
        d.join("t10k-images-idx3-ubyte"),
        d.join("t10k-labels-idx1-ubyte"),
    ];
    for p in &paths {
        assert!(
            p.is_file(),
            "MNIST file {} missing; set EMBEDSAFE_MNIST_DIR to a directory with the four uncompressed IDX files",
            p.display()
        );
    }
    paths
}

pub fn mnist() -> (Dataset, Dataset) {
    let [a, b, c, d] = mnist_paths();
    (
        load_idx(&a, &b, Split::Train).expect("train split"),
        load_idx(&c, &d, Split::Test).expect("test split"),
    )
}

pub fn random_image<R: Rng>(rng: &mut R, shape: Shape) -> Image<f64> {
    let px = (0..shape.len()).map(|_| rng.gen::<f64>()).collect();
    Image::new(shape, px).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}
