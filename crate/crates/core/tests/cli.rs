//! End-to-end runs of the `embedsafe` binary on a small synthetic dataset.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embedsafe::checkpoint::ModelCheckpoint;
use embedsafe::data::{encode_idx_images, encode_pgm, Dataset, Split};
use embedsafe::embedding::{EmbeddingArch, EmbeddingNet};
use embedsafe::image::{Image, Shape};
use rand::Rng;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_embedsafe"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ten classes of noisy 28×28 patterns: class `c` lights rows `2c..2c+4`.
fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut r = common::rng(seed);
    let images = (0..n)
        .map(|i| {
            let c = (i % 10) as u8;
            let lo = 2 * c as usize + 2;
            let px = (0..784)
                .map(|p| {
                    let on = (lo..lo + 4).contains(&(p / 28));
                    let base: f32 = if on { 0.85 } else { 0.05 };
                    (base + r.gen_range(-0.05..0.05f32)).clamp(0.0, 1.0)
                })
                .collect();
            Image::new(Shape::MNIST, px).unwrap().with_label(c)
        })
        .collect();
    Dataset {
        images,
        split: Split::Train,
        seed,
    }
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        synthetic(120, 1)
            .write_idx(&d.join("train-images"), &d.join("train-labels"))
            .unwrap();
        synthetic(80, 2)
            .write_idx(&d.join("test-images"), &d.join("test-labels"))
            .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn config(&self) -> Value {
        json!({
            "seed": 3,
            "data": {
                "images_path": "train-images",
                "labels_path": "train-labels",
                "test_images_path": "test-images",
                "test_labels_path": "test-labels"
            },
            "embedding": {
                "epochs": 1,
                "triplets_per_epoch": 64,
                "batch_size": 16,
                "arch": {
                    "input_width": 28, "input_height": 28, "input_channels": 1,
                    "conv1_channels": 4, "conv2_channels": 4, "hidden_units": 16,
                    "embedding_dim": 10, "leaky_slope": 0.01, "norm_epsilon": 1e-8
                }
            },
            "generator": {
                "epochs": 1,
                "batch_size": 16,
                "images_per_epoch": 32,
                "arch": {
                    "input_width": 28, "input_height": 28, "input_channels": 1,
                    "enc1_channels": 4, "enc2_channels": 4, "bottleneck_channels": 4,
                    "dec2_channels": 4, "dec1_channels": 4, "leaky_slope": 0.01
                }
            },
            "eval": {
                "enrolled_per_class": 3,
                "attempts": 20,
                "threshold_count": 50,
                "fraction": 0.5,
                "pairs_per_class": 5,
                "pca_per_class": 5,
                "sweep_alphas": [0.0, 0.4],
                "sweep_heldout": 10
            }
        })
    }

    fn write_config(&self, name: &str, cfg: &Value) -> String {
        fs::write(self.path(name), serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
        self.s(name)
    }
}

#[test]
fn invalid_config_exits_2_with_field_message() {
    let ws = Workspace::new();
    let mut cfg = ws.config();
    cfg["generator"]["distance"] = json!("l3");
    let c = ws.write_config("bad.json", &cfg);
    let o = run(&["train-embedding", "--config", &c, "--out", &ws.s("out")]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("generator.distance"), "{}", stderr(&o));

    let mut cfg = ws.config();
    cfg["embedding"]["learning_rat"] = json!(0.1);
    let c = ws.write_config("typo.json", &cfg);
    let o = run(&["train-embedding", "--config", &c, "--out", &ws.s("out")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn data_errors_exit_3() {
    let ws = Workspace::new();
    let mut cfg = ws.config();
    cfg["data"]["images_path"] = json!("nowhere");
    let c = ws.write_config("c.json", &cfg);
    let o = run(&["train-embedding", "--config", &c, "--out", &ws.s("out")]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    // labels file handed over as the image file
    let mut cfg = ws.config();
    cfg["data"]["images_path"] = json!("train-labels");
    let c = ws.write_config("c2.json", &cfg);
    assert_eq!(
        code(&run(&["train-embedding", "--config", &c, "--out", &ws.s("out")])),
        3
    );
}

#[test]
fn corrupted_checkpoint_exits_4() {
    let ws = Workspace::new();
    let c = ws.write_config("c.json", &ws.config());
    let net = EmbeddingNet::<f32>::init(EmbeddingArch::mnist(), 0).unwrap();
    let mut ckpt = ModelCheckpoint::from_embedding(&net, Value::Null);
    ckpt.manifest.tensors[2].offset += 4;
    fs::write(ws.path("bad.ckpt"), ckpt.to_bytes()).unwrap();
    let o = run(&[
        "train-generator",
        "--config",
        &c,
        "--embedding",
        &ws.s("bad.ckpt"),
        "--out",
        &ws.s("out"),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("validation"), "{}", stderr(&o));
}

#[test]
fn wrong_shape_exits_5() {
    let ws = Workspace::new();
    ModelCheckpoint::identity(Shape::MNIST)
        .save(&ws.path("id.ckpt"))
        .unwrap();
    let img = Image::filled(Shape::new(20, 20, 1), 0.5f32).unwrap();
    fs::write(ws.path("small.pgm"), encode_pgm(&img)).unwrap();
    let o = run(&[
        "distort",
        "--generator",
        &ws.s("id.ckpt"),
        "--in",
        &ws.s("small.pgm"),
        "--out",
        &ws.s("o.pgm"),
    ]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));

    fs::write(
        ws.path("small-idx"),
        encode_idx_images(Shape::new(20, 20, 1), &[vec![0; 400]]),
    )
    .unwrap();
    let o = run(&[
        "distort",
        "--generator",
        &ws.s("id.ckpt"),
        "--in",
        &ws.s("small-idx"),
        "--out",
        &ws.s("o-idx"),
    ]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_exits_6() {
    let ws = Workspace::new();
    let c = ws.write_config("c.json", &ws.config());
    let o = run(&["evaluate", "auth", "--config", &c, "--out", &ws.s("out")]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
    let o = run(&[
        "evaluate",
        "distances",
        "--config",
        &c,
        "--generator",
        &ws.s("absent.ckpt"),
        "--out",
        &ws.s("out"),
    ]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
}

#[test]
fn identity_distortion_preserves_bytes() {
    let ws = Workspace::new();
    ModelCheckpoint::identity(Shape::MNIST)
        .save(&ws.path("id.ckpt"))
        .unwrap();
    let o = run(&[
        "distort",
        "--generator",
        &ws.s("id.ckpt"),
        "--in",
        &ws.s("test-images"),
        "--out",
        &ws.s("out-idx"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = fs::read(ws.path("out-idx")).unwrap();
    assert_eq!(out, fs::read(ws.path("test-images")).unwrap());
    assert_eq!(&out[..4], &[0, 0, 8, 3]);
    assert_eq!(u32::from_be_bytes(out[4..8].try_into().unwrap()), 80);

    let img = &synthetic(1, 9).images[0];
    fs::write(ws.path("one.pgm"), encode_pgm(img)).unwrap();
    let o = run(&[
        "distort",
        "--generator",
        &ws.s("id.ckpt"),
        "--in",
        &ws.s("one.pgm"),
        "--out",
        &ws.s("two.pgm"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = fs::read(ws.path("two.pgm")).unwrap();
    assert!(out.starts_with(b"P5\n28 28\n255\n"));
    assert_eq!(out, fs::read(ws.path("one.pgm")).unwrap());
}

#[test]
fn zero_epochs_writes_init_checkpoint() {
    let ws = Workspace::new();
    let mut cfg = ws.config();
    cfg["embedding"]["epochs"] = json!(0);
    let c = ws.write_config("c.json", &cfg);
    let o = run(&["train-embedding", "--config", &c, "--out", &ws.s("out")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let net = ModelCheckpoint::load(&ws.path("out/embedding.ckpt"))
        .unwrap()
        .to_embedding()
        .unwrap();
    let arch: EmbeddingArch = serde_json::from_value(cfg["embedding"]["arch"].clone()).unwrap();
    assert_eq!(net, EmbeddingNet::init(arch, 3).unwrap());
    assert_eq!(
        fs::read_to_string(ws.path("out/embedding_loss.csv")).unwrap(),
        "epoch,mean_triplet_loss\n"
    );
}

#[test]
fn identity_generator_reports() {
    let ws = Workspace::new();
    let c = ws.write_config("c.json", &ws.config());
    ModelCheckpoint::identity(Shape::MNIST)
        .save(&ws.path("id.ckpt"))
        .unwrap();
    let o = run(&[
        "evaluate",
        "distances",
        "--config",
        &c,
        "--generator",
        &ws.s("id.ckpt"),
        "--out",
        &ws.s("d"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(ws.path("d/distances.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("class,real_gen,real_real,gen_gen"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], "0.000000", "{line}");
        assert_eq!(f[2], f[3], "{line}");
        rows += 1;
    }
    assert_eq!(rows, 10);
}

fn pipeline(ws: &Workspace, out: &str) {
    let c = ws.write_config("c.json", &ws.config());
    let o = |p: &str| ws.s(&format!("{out}/{p}"));
    let steps: Vec<Vec<String>> = vec![
        vec![
            "train-embedding".into(),
            "--config".into(),
            c.clone(),
            "--out".into(),
            o(""),
        ],
        vec![
            "train-generator".into(),
            "--config".into(),
            c.clone(),
            "--embedding".into(),
            o("embedding.ckpt"),
            "--out".into(),
            o(""),
        ],
    ];
    for s in steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        let r = run(&args);
        assert_eq!(code(&r), 0, "{args:?}: {}", stderr(&r));
    }
    for mode in ["distances", "pca", "auth", "margin-sweep"] {
        let r = run(&[
            "evaluate",
            mode,
            "--config",
            &c,
            "--embedding",
            &o("embedding.ckpt"),
            "--generator",
            &o("generator.ckpt"),
            "--out",
            &o(mode),
        ]);
        assert_eq!(code(&r), 0, "{mode}: {}", stderr(&r));
    }
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_deterministic_and_reports_follow_schemas() {
    let ws = Workspace::new();
    pipeline(&ws, "run1");
    pipeline(&ws, "run2");
    let (a, b) = (tree(&ws.path("run1")), tree(&ws.path("run2")));
    assert_eq!(a.len(), b.len());
    for ((pa, da), (pb, db)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(da == db, "{} differs between runs", pa.display());
    }

    let read = |p: &str| fs::read_to_string(ws.path("run1").join(p)).unwrap();
    let header = |p: &str| read(p).lines().next().unwrap().to_string();
    assert_eq!(
        header("auth/auth_distorted.csv"),
        "tau,tp,fp,fn,tn,precision,recall,f1"
    );
    assert_eq!(
        header("auth/auth_control.csv"),
        "tau,tp,fp,fn,tn,precision,recall,f1"
    );
    assert_eq!(
        header("auth/auth_distorted_summary.csv"),
        "best_tau,precision,recall,f1,eer"
    );
    assert_eq!(header("pca/pca.csv"), "class,kind,pc1,pc2,pc3");
    assert_eq!(header("generator_loss.csv"), "epoch,total,l_img,l_emb");
    assert_eq!(
        header("margin-sweep/margin_sweep.csv"),
        "alpha,mean_d_img,mean_d_emb,status"
    );
    assert_eq!(read("auth/auth_distorted.csv").lines().count(), 51);
    for line in read("pca/pca.csv").lines().skip(1) {
        let kind = line.split(',').nth(1).unwrap();
        assert!(kind == "real" || kind == "generated", "{line}");
    }
    for (p, bytes) in &a {
        if p.extension().is_some_and(|e| e == "csv") {
            let text = std::str::from_utf8(bytes).unwrap();
            assert!(!text.contains('\r'));
            for field in text.lines().skip(1).flat_map(|l| l.split(',')) {
                if let Some((_, frac)) = field.split_once('.') {
                    assert_eq!(frac.len(), 6, "{}: {field}", p.display());
                }
            }
        }
    }
    let gen_ckpt = ModelCheckpoint::load(&ws.path("run1/generator.ckpt")).unwrap();
    let sha = embedsafe::checkpoint::file_sha256(&ws.path("run1/embedding.ckpt")).unwrap();
    assert_eq!(gen_ckpt.manifest.config["embedding_sha256"], json!(sha));
}
