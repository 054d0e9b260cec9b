//! Behaviour of the embedding and generator networks and their trainers,
//! including frozen regression fixtures for seed-0 initializations.

mod common;

use embedsafe::data::{Dataset, Split};
use embedsafe::embedding::{train_embedding, triplet_loss, EmbeddingArch, EmbeddingNet, TripletTrainConfig};
use embedsafe::generator::{
    train_generator, trainer_loss, Distort, GeneratorArch, GeneratorNet, GeneratorTrainConfig, TrainerLoss,
};
use embedsafe::image::{Image, Shape};
use embedsafe::Error;
use rand::Rng;

fn fixture_image() -> Image {
    let px = (0..784)
        .map(|i| {
            let (y, x) = (i / 28, i % 28);
            ((x * 3 + y * 5) % 17) as f32 / 16.0
        })
        .collect();
    Image::new(Shape::MNIST, px).unwrap()
}

/// Every 61st coordinate of the distortion, plus the sum.
fn probe(v: &[f32]) -> (Vec<f32>, f64) {
    (
        v.iter().step_by(61).copied().collect(),
        v.iter().map(|&x| x as f64).sum(),
    )
}

const EMBED_FIXTURE: [f32; 10] = [
    -0.35267556,
    -0.101813875,
    -0.4431734,
    -0.14064948,
    0.597136,
    0.0061402414,
    -0.20252384,
    0.3052994,
    -0.27413505,
    -0.2882466,
];
const DISTORT_FIXTURE: [f32; 13] = [
    0.43397382, 0.29395798, 0.4060815, 0.29917577, 0.41630867, 0.26224405, 0.41834596, 0.38468584, 0.4237883,
    0.36597338, 0.3797179, 0.42809606, 0.30835998,
];
const DISTORT_SUM: f64 = 293.54982551932335;

#[test]
fn seed_zero_embedding_fixture() {
    let emb = EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 0).unwrap();
    let e = emb.embed(&fixture_image()).unwrap();
    for (a, b) in e.iter().zip(EMBED_FIXTURE) {
        assert!((a - b).abs() < 1e-5, "{e:?}");
    }
    // Zero biases and a blank image leave nothing to normalize.
    let blank = emb.embed(&Image::filled(Shape::MNIST, 0.0).unwrap()).unwrap();
    assert!(blank.iter().all(|v| *v == 0.0));
}

#[test]
fn seed_zero_distortion_fixture() {
    let gen = GeneratorNet::<f32>::init(GeneratorArch::mnist(), 0).unwrap();
    let (coords, sum) = probe(gen.distort(&fixture_image()).unwrap().pixels());
    for (a, b) in coords.iter().zip(DISTORT_FIXTURE) {
        assert!((a - b).abs() < 1e-5, "{coords:?}");
    }
    assert!((sum - DISTORT_SUM).abs() < 1e-3, "{sum}");
}

#[test]
fn init_is_deterministic_and_seed_dependent() {
    let a = EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 7).unwrap();
    assert_eq!(a, EmbeddingNet::init(EmbeddingArch::mnist(), 7).unwrap());
    assert_ne!(
        a.params(),
        EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 8)
            .unwrap()
            .params()
    );
    let g = GeneratorNet::<f32>::init(GeneratorArch::mnist(), 7).unwrap();
    assert_eq!(
        g.params(),
        GeneratorNet::<f32>::init(GeneratorArch::mnist(), 7)
            .unwrap()
            .params()
    );
}

#[test]
fn init_variance_matches_fan_in() {
    let net = EmbeddingNet::<f64>::init(EmbeddingArch::mnist(), 3).unwrap();
    let mut checked = 0;
    for spec in net.layout().specs() {
        let w = &net.params()[spec.range()];
        if spec.name.ends_with(".bias") {
            assert!(w.iter().all(|v| *v == 0.0), "{}", spec.name);
            continue;
        }
        if w.len() < 1000 {
            continue;
        }
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let fan_in = spec.shape[1..].iter().product::<usize>() as f64;
        let expected = 1.0 / fan_in;
        assert!(
            (var / expected - 1.0).abs() < 0.2,
            "{}: {var} vs {expected}",
            spec.name
        );
        checked += 1;
    }
    assert_eq!(checked, 3);
}

#[test]
fn unit_norm_on_random_inputs() {
    let net = EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 0).unwrap();
    let mut r = common::rng(5);
    for _ in 0..1000 {
        let x = Image::new(Shape::MNIST, (0..784).map(|_| r.gen::<f32>()).collect()).unwrap();
        let n = net.embed(&x).unwrap().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-6, "{n}");
    }
}

#[test]
fn shape_and_range_preconditions() {
    let net = EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 0).unwrap();
    let small = Image::filled(Shape::new(27, 28, 1), 0.5f32).unwrap();
    assert!(matches!(net.embed(&small), Err(Error::Dimension(_))));
    let gen = GeneratorNet::<f32>::init(GeneratorArch::mnist(), 0).unwrap();
    assert!(matches!(gen.distort(&small), Err(Error::Dimension(_))));
    assert!(Image::new(Shape::new(1, 1, 1), vec![1.5f32]).is_err());
    assert!(Image::new(Shape::new(1, 1, 1), vec![-0.1f32]).is_err());
}

#[test]
fn triplet_loss_examples() {
    let m = 0.2;
    let l = |a: [f64; 2], p: [f64; 2], n: [f64; 2]| triplet_loss(&a, &p, &n, m).unwrap();
    assert_eq!(l([1.0, 0.0], [1.0, 0.0], [0.0, 1.0]), 0.0);
    assert!((l([1.0, 0.0], [1.0, 0.0], [1.0, 0.0]) - 0.2).abs() < 1e-15);
    assert!((l([1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]) - 2.2).abs() < 1e-12);
    assert!(matches!(
        triplet_loss(&[1.0], &[1.0, 0.0], &[0.0, 1.0], m),
        Err(Error::Dimension(_))
    ));
    assert!(triplet_loss(&[1.0], &[1.0], &[1.0], 0.0).is_err());
}

#[test]
fn trainer_loss_examples() {
    let l = TrainerLoss::from_distances(0.8, 0.1, 0.3, 0.9);
    assert!((l.total - -0.08).abs() < 1e-12);
    assert_eq!(TrainerLoss::from_distances(0.8, 0.3, 0.3, 0.9).embedding, 0.0);
    let only_emb = TrainerLoss::from_distances(0.8, 0.5, 0.3, 1.0);
    assert!((only_emb.total - 0.2).abs() < 1e-12);
    let only_img = TrainerLoss::from_distances(0.8, 0.5, 0.3, 0.0);
    assert_eq!(only_img.total, -0.8);
}

/// Small synthetic dataset: three classes of noisy bar images.
fn bars(n: usize, seed: u64) -> Dataset {
    let mut r = common::rng(seed);
    let images = (0..n)
        .map(|i| {
            let class = (i % 3) as u8;
            let px = (0..784)
                .map(|p| {
                    let (y, x): (usize, usize) = (p / 28, p % 28);
                    let on = match class {
                        0 => (12..16).contains(&x),
                        1 => (12..16).contains(&y),
                        _ => x.abs_diff(y) < 3,
                    };
                    let base: f32 = if on { 0.9 } else { 0.05 };
                    (base + r.gen_range(-0.05..0.05f32)).clamp(0.0, 1.0)
                })
                .collect();
            Image::new(Shape::MNIST, px).unwrap().with_label(class)
        })
        .collect();
    Dataset {
        images,
        split: Split::Train,
        seed,
    }
}

fn small_config(epochs: usize) -> TripletTrainConfig {
    TripletTrainConfig {
        epochs,
        triplets_per_epoch: 256,
        batch_size: 32,
        learning_rate: 1e-3,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_init() {
    let ds = bars(30, 1);
    let (net, trace) = train_embedding(&ds, EmbeddingArch::mnist(), &small_config(0)).unwrap();
    assert_eq!(net, EmbeddingNet::init(EmbeddingArch::mnist(), 0).unwrap());
    assert!(trace.epoch_losses.is_empty());

    let gen_cfg = GeneratorTrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let (gen, trace) = train_generator(&ds, &net, GeneratorArch::mnist(), &gen_cfg).unwrap();
    assert_eq!(
        gen.params(),
        GeneratorNet::<f32>::init(GeneratorArch::mnist(), 0)
            .unwrap()
            .params()
    );
    assert!(trace.epochs.is_empty());
}

#[test]
fn embedding_training_is_deterministic_and_reduces_loss() {
    let (train, _) = common::mnist();
    let subset = train.take(500);
    let config = TripletTrainConfig {
        epochs: 2,
        triplets_per_epoch: 1000,
        ..Default::default()
    };
    let (a, ta) = train_embedding(&subset, EmbeddingArch::mnist(), &config).unwrap();
    assert!(ta.epoch_losses[1] < ta.epoch_losses[0], "{:?}", ta.epoch_losses);
    let (b, tb) = train_embedding(&subset, EmbeddingArch::mnist(), &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.epoch_losses, tb.epoch_losses);
}

#[test]
fn embedding_training_rejects_degenerate_data() {
    let ds = bars(30, 3);
    let one_class = Dataset {
        images: ds
            .images
            .iter()
            .filter(|i| i.label() == Some(0))
            .cloned()
            .collect(),
        ..ds.clone()
    };
    assert!(train_embedding(&one_class, EmbeddingArch::mnist(), &small_config(1)).is_err());
    let empty = Dataset {
        images: Vec::new(),
        ..ds
    };
    assert!(train_embedding(&empty, EmbeddingArch::mnist(), &small_config(1)).is_err());
}

#[test]
fn generator_training_freezes_embedding_and_is_deterministic() {
    let ds = bars(24, 4);
    let (emb, _) = train_embedding(&ds, EmbeddingArch::mnist(), &small_config(1)).unwrap();
    let before = emb.clone();
    let cfg = GeneratorTrainConfig {
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    let (g1, t1) = train_generator(&ds, &emb, GeneratorArch::mnist(), &cfg).unwrap();
    assert_eq!(emb, before);
    let (g2, t2) = train_generator(&ds, &emb, GeneratorArch::mnist(), &cfg).unwrap();
    assert_eq!(g1.params(), g2.params());
    assert_eq!(t1.epochs, t2.epochs);
    for e in &t1.epochs {
        assert!((e.total - (0.1 * e.image + 0.9 * e.embedding)).abs() < 1e-9);
    }
    let x = &ds.images[0];
    let l = trainer_loss(x, &g1, &emb, &cfg).unwrap();
    assert!(l.image <= 0.0 && l.embedding >= 0.0);
}

#[test]
fn generator_training_rejects_broken_embedding() {
    let ds = bars(6, 5);
    let mut emb = EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 0).unwrap();
    emb.params_mut()[0] = f32::NAN;
    let err = train_generator(
        &ds,
        &emb,
        GeneratorArch::mnist(),
        &GeneratorTrainConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}
