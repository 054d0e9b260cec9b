//! Command-line driver.
//!
//! Exit codes: 0 ok, 1 other failure, 2 config, 3 data, 4 checkpoint,
//! 5 shape, 6 missing artifact.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{file_sha256, ModelCheckpoint};
use crate::config::RunConfig;
use crate::data::{self, filter_by_classes, Dataset, Split};
use crate::embedding::{train_embedding, EmbeddingNet};
use crate::eval::{self, EvaluationReport};
use crate::generator::{margin_sweep, train_generator, Distort, Generator, GeneratorTrainConfig};
use crate::report::{fmt6, fmt_opt, scatter_svg, write_atomic, Csv, ScatterPoint};
use crate::{Error, Image};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;
pub const EXIT_SHAPE: u8 = 5;
pub const EXIT_MISSING: u8 = 6;

pub const EMBEDDING_CHECKPOINT: &str = "embedding.ckpt";
pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";

#[derive(Debug, Parser)]
#[command(
    name = "embedsafe",
    version,
    about = "Embedding-preserving distortion of MNIST digits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the triplet embedding network.
    TrainEmbedding {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the checkpoint and loss trace.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the distortion generator against a frozen embedding checkpoint.
    TrainGenerator {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Distort an IDX image file or a single PGM image.
    Distort {
        #[arg(long)]
        generator: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce evaluation reports.
    Evaluate {
        #[arg(value_enum)]
        mode: EvalMode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Output directory for reports.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Distances,
    Pca,
    Auth,
    MarginSweep,
}

/// An error tagged with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn fail(code: u8) -> impl FnOnce(Error) -> CliError {
    move |error| {
        let code = match error {
            Error::Dimension(_) => EXIT_SHAPE,
            _ => code,
        };
        CliError { code, error }
    }
}

fn missing(what: &str) -> CliError {
    CliError {
        code: EXIT_MISSING,
        error: Error::MissingArtifact(format!("{what} checkpoint is required for this mode")),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(fail(EXIT_CONFIG))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_split(cfg: &RunConfig, split: Split) -> CliResult<Dataset> {
    let d = &cfg.data;
    let (images, labels, limit) = match split {
        Split::Train => (&d.images_path, &d.labels_path, d.train_limit),
        Split::Test => (&d.test_images_path, &d.test_labels_path, d.test_limit),
    };
    let ds = data::load_idx(images, labels, split).map_err(fail(EXIT_DATA))?;
    let ds = match limit {
        Some(n) => ds.take(n),
        None => ds,
    };
    let expected = cfg.embedding.arch.input_shape();
    if let Some(img) = ds.images.first().filter(|i| i.shape() != expected) {
        return Err(fail(EXIT_SHAPE)(Error::Dimension(format!(
            "{} holds {} images, config expects {expected}",
            images.display(),
            img.shape()
        ))));
    }
    Ok(ds)
}

fn load_checkpoint(path: &Path) -> CliResult<ModelCheckpoint> {
    if !path.exists() {
        return Err(CliError {
            code: EXIT_MISSING,
            error: Error::MissingArtifact(format!("{} does not exist", path.display())),
        });
    }
    ModelCheckpoint::load(path).map_err(fail(EXIT_CHECKPOINT))
}

fn load_embedding(path: Option<&Path>) -> CliResult<EmbeddingNet<f32>> {
    let path = path.ok_or_else(|| missing("embedding"))?;
    load_checkpoint(path)?
        .to_embedding()
        .map_err(fail(EXIT_CHECKPOINT))
}

fn load_generator(path: Option<&Path>) -> CliResult<Generator> {
    let path = path.ok_or_else(|| missing("generator"))?;
    load_checkpoint(path)?
        .to_generator()
        .map_err(fail(EXIT_CHECKPOINT))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(fail(EXIT_FAILURE))
}

fn write_csv(path: &Path, csv: &Csv) -> CliResult<()> {
    write(path, csv.as_str().as_bytes())
}

fn config_echo(cfg: &RunConfig, section: &str) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    let seed = cfg.seed;
    let picked = v
        .get_mut(section)
        .map(serde_json::Value::take)
        .unwrap_or_default();
    serde_json::json!({ "seed": seed, section: picked })
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::TrainEmbedding { config, out, seed } => cmd_train_embedding(&config, &out, seed),
        Command::TrainGenerator {
            config,
            embedding,
            out,
            seed,
        } => cmd_train_generator(&config, &embedding, &out, seed),
        Command::Distort {
            generator,
            input,
            out,
        } => cmd_distort(&generator, &input, &out),
        Command::Evaluate {
            mode,
            config,
            embedding,
            generator,
            out,
            seed,
        } => cmd_evaluate(
            mode,
            &config,
            embedding.as_deref(),
            generator.as_deref(),
            &out,
            seed,
        ),
    }
}

pub fn cmd_train_embedding(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let train = load_split(&cfg, Split::Train)?;
    let (net, trace) = train_embedding(&train, cfg.embedding.arch.clone(), &cfg.triplet_config())
        .map_err(fail(EXIT_FAILURE))?;
    let ckpt = ModelCheckpoint::from_embedding(&net, config_echo(&cfg, "embedding"));
    write(&out.join(EMBEDDING_CHECKPOINT), &ckpt.to_bytes())?;
    let mut csv = Csv::new(&["epoch", "mean_triplet_loss"]);
    for (i, l) in trace.epoch_losses.iter().enumerate() {
        csv.row(&[(i + 1).to_string(), fmt6(*l)]);
    }
    write_csv(&out.join("embedding_loss.csv"), &csv)
}

pub fn cmd_train_generator(config: &Path, embedding: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let gcfg = cfg.generator_config().map_err(fail(EXIT_CONFIG))?;
    let before = file_sha256(embedding).map_err(fail(EXIT_MISSING))?;
    let emb = load_embedding(Some(embedding))?;
    let train = load_split(&cfg, Split::Train)?;
    let (gen, trace) =
        train_generator(&train, &emb, cfg.generator.arch.clone(), &gcfg).map_err(fail(EXIT_FAILURE))?;
    let after = file_sha256(embedding).map_err(fail(EXIT_CHECKPOINT))?;
    if before != after {
        return Err(fail(EXIT_CHECKPOINT)(Error::Validation(
            "embedding checkpoint changed during generator training".into(),
        )));
    }
    let mut echo = config_echo(&cfg, "generator");
    echo["embedding_sha256"] = serde_json::Value::String(before);
    let ckpt = ModelCheckpoint::from_generator(&gen, echo);
    write(&out.join(GENERATOR_CHECKPOINT), &ckpt.to_bytes())?;
    let mut csv = Csv::new(&["epoch", "total", "l_img", "l_emb"]);
    for (i, l) in trace.epochs.iter().enumerate() {
        csv.row(&[
            (i + 1).to_string(),
            fmt6(l.total),
            fmt6(l.image),
            fmt6(l.embedding),
        ]);
    }
    write_csv(&out.join("generator_loss.csv"), &csv)
}

pub fn cmd_distort(generator: &Path, input: &Path, out: &Path) -> CliResult<()> {
    let gen = load_generator(Some(generator))?;
    let bytes = std::fs::read(input).map_err(|e| fail(EXIT_DATA)(Error::io(input, e)))?;
    let shape = gen.input_shape();
    if bytes.starts_with(b"P5") {
        let img = data::decode_pgm(&bytes).map_err(fail(EXIT_DATA))?;
        let y = gen.distort(&img).map_err(fail(EXIT_SHAPE))?;
        return write(out, &data::encode_pgm(&y));
    }
    let (in_shape, raw) = data::parse_idx_images(&bytes).map_err(fail(EXIT_DATA))?;
    if in_shape != shape {
        return Err(fail(EXIT_SHAPE)(Error::Dimension(format!(
            "input images are {in_shape}, generator expects {shape}"
        ))));
    }
    let outputs: Vec<Vec<u8>> = raw
        .par_iter()
        .map(|b| {
            let img = Image::from_bytes(in_shape, b)?;
            Ok(gen.distort(&img)?.to_bytes())
        })
        .collect::<crate::Result<_>>()
        .map_err(fail(EXIT_FAILURE))?;
    write(out, &data::encode_idx_images(shape, &outputs))
}

pub fn cmd_evaluate(
    mode: EvalMode,
    config: &Path,
    embedding: Option<&Path>,
    generator: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    match mode {
        EvalMode::Distances => {
            let gen = load_generator(generator)?;
            let test = load_split(&cfg, Split::Test)?;
            eval_distances(&cfg, &test, &gen, out)
        }
        EvalMode::Pca => {
            let emb = load_embedding(embedding)?;
            let gen = load_generator(generator)?;
            let test = load_split(&cfg, Split::Test)?;
            eval_pca(&cfg, &test, &gen, &emb, out)
        }
        EvalMode::Auth => {
            let emb = load_embedding(embedding)?;
            let gen = load_generator(generator)?;
            let train = load_split(&cfg, Split::Train)?;
            let test = load_split(&cfg, Split::Test)?;
            eval_auth(&cfg, &train, &test, &gen, &emb, out)
        }
        EvalMode::MarginSweep => {
            let emb = load_embedding(embedding)?;
            let train = load_split(&cfg, Split::Train)?;
            let test = load_split(&cfg, Split::Test)?;
            eval_margin_sweep(&cfg, &train, &test, &emb, out)
        }
    }
}

fn eval_distances(cfg: &RunConfig, test: &Dataset, gen: &Generator, out: &Path) -> CliResult<()> {
    let sub = test
        .subsample(cfg.eval.fraction, cfg.seed)
        .map_err(fail(EXIT_CONFIG))?;
    let rows = eval::distance_table(&sub, gen, &[], cfg.eval.pairs_per_class, cfg.seed)
        .map_err(fail(EXIT_FAILURE))?;
    let mut csv = Csv::new(&["class", "real_gen", "real_real", "gen_gen"]);
    for r in rows {
        csv.row(&[
            r.class.to_string(),
            fmt6(r.real_gen),
            fmt6(r.real_real),
            fmt6(r.gen_gen),
        ]);
    }
    write_csv(&out.join("distances.csv"), &csv)
}

fn eval_pca(
    cfg: &RunConfig,
    test: &Dataset,
    gen: &Generator,
    emb: &EmbeddingNet<f32>,
    out: &Path,
) -> CliResult<()> {
    let sub = test
        .subsample(cfg.eval.fraction, cfg.seed)
        .map_err(fail(EXIT_CONFIG))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked: Vec<Image> = Vec::new();
    for &c in &cfg.eval.pca_classes {
        let mut imgs = filter_by_classes(&sub, &[c]).images;
        imgs.shuffle(&mut rng);
        imgs.truncate(cfg.eval.pca_per_class);
        picked.extend(imgs);
    }
    let embedded: Vec<(u8, Vec<f64>, Vec<f64>)> = picked
        .par_iter()
        .map(|x| {
            let real = emb.embed(x)?;
            let generated = emb.embed(&gen.distort(x)?)?;
            let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
            Ok((x.label().unwrap_or(0), widen(real), widen(generated)))
        })
        .collect::<crate::Result<_>>()
        .map_err(fail(EXIT_FAILURE))?;
    let vectors: Vec<&[f64]> = embedded
        .iter()
        .flat_map(|(_, r, g)| [r.as_slice(), g.as_slice()])
        .collect();
    let pca = eval::pca_project(&vectors, 3).map_err(fail(EXIT_FAILURE))?;
    let mut csv = Csv::new(&["class", "kind", "pc1", "pc2", "pc3"]);
    let mut points = Vec::new();
    for (i, p) in pca.points.iter().enumerate() {
        let class = embedded[i / 2].0;
        let generated = i % 2 == 1;
        let kind = if generated { "generated" } else { "real" };
        csv.row(&[
            class.to_string(),
            kind.to_string(),
            fmt6(p[0]),
            fmt6(p[1]),
            fmt6(p[2]),
        ]);
        points.push(ScatterPoint {
            class,
            generated,
            x: p[0],
            y: p[1],
        });
    }
    write_csv(&out.join("pca.csv"), &csv)?;
    let mut var = Csv::new(&["component", "explained_variance_ratio"]);
    for (i, r) in pca.explained_variance_ratio.iter().enumerate() {
        var.row(&[format!("pc{}", i + 1), fmt6(*r)]);
    }
    write_csv(&out.join("pca_variance.csv"), &var)?;
    write(
        &out.join("pca.svg"),
        scatter_svg(
            &points,
            "embeddings of real (filled) and generated (hollow) images",
        )
        .as_bytes(),
    )
}

fn auth_csvs(report: &EvaluationReport) -> (Csv, Csv, Csv) {
    let mut sweep = Csv::new(&["tau", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]);
    for r in &report.rows {
        let c = r.confusion;
        sweep.row(&[
            fmt6(r.tau),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            fmt_opt(r.metrics.precision),
            fmt_opt(r.metrics.recall),
            fmt_opt(r.metrics.f1),
        ]);
    }
    let mut summary = Csv::new(&["best_tau", "precision", "recall", "f1", "eer"]);
    let b = &report.best;
    summary.row(&[
        fmt6(b.tau),
        fmt_opt(b.metrics.precision),
        fmt_opt(b.metrics.recall),
        fmt_opt(b.metrics.f1),
        fmt6(report.eer),
    ]);
    let mut roc = Csv::new(&["fpr", "tpr"]);
    for (f, t) in &report.roc {
        roc.row(&[fmt6(*f), fmt6(*t)]);
    }
    (sweep, summary, roc)
}

fn eval_auth(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    gen: &Generator,
    emb: &EmbeddingNet<f32>,
    out: &Path,
) -> CliResult<()> {
    let protocol = cfg.auth_protocol();
    let sets = eval::select_auth_sets(train, test, &protocol).map_err(|e| match e {
        Error::Sampling(_) => fail(EXIT_DATA)(e),
        _ => fail(EXIT_CONFIG)(e),
    })?;
    let outcome = eval::mock_auth_eval(&sets, gen, emb, &protocol).map_err(fail(EXIT_FAILURE))?;
    for (name, report) in [("distorted", &outcome.distorted), ("control", &outcome.control)] {
        let (sweep, summary, roc) = auth_csvs(report);
        write_csv(&out.join(format!("auth_{name}.csv")), &sweep)?;
        write_csv(&out.join(format!("auth_{name}_summary.csv")), &summary)?;
        write_csv(&out.join(format!("roc_{name}.csv")), &roc)?;
    }
    Ok(())
}

fn eval_margin_sweep(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    emb: &EmbeddingNet<f32>,
    out: &Path,
) -> CliResult<()> {
    let e = &cfg.eval;
    let base = cfg.generator_config().map_err(fail(EXIT_CONFIG))?;
    let base = GeneratorTrainConfig {
        images_per_epoch: match e.sweep_train_images {
            0 => base.images_per_epoch,
            n => n,
        },
        epochs: match e.sweep_epochs {
            0 => base.epochs,
            n => n,
        },
        ..base
    };
    let heldout = test.take(e.sweep_heldout.max(1));
    let entries = margin_sweep(train, &heldout, emb, &e.sweep_alphas, &cfg.generator.arch, &base)
        .map_err(fail(EXIT_CONFIG))?;
    let mut csv = Csv::new(&["alpha", "mean_d_img", "mean_d_emb", "status"]);
    for (i, entry) in entries.iter().enumerate() {
        match &entry.outcome {
            Ok(s) => {
                csv.row(&[
                    fmt6(entry.alpha),
                    fmt6(s.mean_d_img),
                    fmt6(s.mean_d_emb),
                    "ok".into(),
                ]);
                for (j, img) in s.samples.iter().enumerate() {
                    write(
                        &out.join(format!("margin_sweep_{i}_sample_{j}.pgm")),
                        &data::encode_pgm(img),
                    )?;
                }
            }
            Err(msg) => {
                log::error!("alpha {}: {msg}", entry.alpha);
                csv.row(&[fmt6(entry.alpha), "nan".into(), "nan".into(), "failed".into()]);
            }
        }
    }
    write_csv(&out.join("margin_sweep.csv"), &csv)
}
