//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingArch, TripletTrainConfig};
use crate::eval::{AuthProtocol, ThresholdSweep};
use crate::generator::{GeneratorArch, GeneratorTrainConfig};
use crate::metrics::{ImageDistance, DEFAULT_KAPPA1, DEFAULT_KAPPA2, DEFAULT_OMEGA};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// IDX file locations. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub images_path: PathBuf,
    pub labels_path: PathBuf,
    pub test_images_path: PathBuf,
    pub test_labels_path: PathBuf,
    /// Keep only the first `n` training images.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub triplets_per_epoch: usize,
    pub arch: EmbeddingArch,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let t = TripletTrainConfig::default();
        Self {
            margin: t.margin,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            triplets_per_epoch: t.triplets_per_epoch,
            arch: EmbeddingArch::mnist(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub margin: f64,
    pub pi_emb: f64,
    /// One of `l1`, `l2`, `dssim`, `sobel`, `combined`.
    pub distance: String,
    pub omega: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 means the whole training split.
    pub images_per_epoch: usize,
    pub arch: GeneratorArch,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorTrainConfig::default();
        Self {
            margin: g.margin,
            pi_emb: g.pi_emb,
            distance: g.distance.name().to_string(),
            omega: DEFAULT_OMEGA,
            kappa1: DEFAULT_KAPPA1,
            kappa2: DEFAULT_KAPPA2,
            learning_rate: g.learning_rate,
            batch_size: g.batch_size,
            epochs: g.epochs,
            images_per_epoch: g.images_per_epoch,
            arch: GeneratorArch::mnist(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub stored_classes: Vec<u8>,
    pub negative_classes: Option<Vec<u8>>,
    pub enrolled_per_class: usize,
    pub threshold_min: f64,
    pub threshold_max: f64,
    pub threshold_count: usize,
    pub attempts: usize,
    pub claimed_identity: bool,
    /// Share of the test split used by the distance table and PCA.
    pub fraction: f64,
    pub pairs_per_class: usize,
    pub pca_classes: Vec<u8>,
    pub pca_per_class: usize,
    pub sweep_alphas: Vec<f64>,
    /// Training images per margin-sweep run (0 = generator.images_per_epoch).
    pub sweep_train_images: usize,
    pub sweep_epochs: usize,
    pub sweep_heldout: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = AuthProtocol::default();
        Self {
            stored_classes: p.stored_classes,
            negative_classes: None,
            enrolled_per_class: p.enrolled_per_class,
            threshold_min: p.sweep.min,
            threshold_max: p.sweep.max,
            threshold_count: p.sweep.count,
            attempts: p.attempts,
            claimed_identity: false,
            fraction: 0.2,
            pairs_per_class: 500,
            pca_classes: vec![1, 2, 3],
            pca_per_class: 300,
            sweep_alphas: vec![0.0, 0.1, 0.2, 0.4, 0.8],
            sweep_train_images: 0,
            sweep_epochs: 0,
            sweep_heldout: 500,
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving data paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            let d = &mut cfg.data;
            for p in [
                &mut d.images_path,
                &mut d.labels_path,
                &mut d.test_images_path,
                &mut d.test_labels_path,
            ] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.triplet_config()
            .validate()
            .map_err(|e| field("embedding", e))?;
        self.embedding
            .arch
            .validate()
            .map_err(|e| field("embedding.arch", e))?;
        self.generator_config()?
            .validate()
            .map_err(|e| field("generator", e))?;
        self.generator
            .arch
            .validate()
            .map_err(|e| field("generator.arch", e))?;
        if self.generator.arch.input_shape() != self.embedding.arch.input_shape() {
            return Err(field("generator.arch", "input shape must match embedding.arch"));
        }
        let e = &self.eval;
        self.sweep().validate().map_err(|err| field("eval", err))?;
        if !(e.fraction > 0.0 && e.fraction <= 1.0) {
            return Err(field("eval.fraction", format!("{} outside (0, 1]", e.fraction)));
        }
        if e.stored_classes.is_empty() {
            return Err(field("eval.stored_classes", "must not be empty"));
        }
        if let Some(c) = e
            .stored_classes
            .iter()
            .chain(e.pca_classes.iter())
            .find(|&&c| c > 9)
        {
            return Err(field("eval", format!("class {c} is not a digit")));
        }
        if e.attempts == 0 {
            return Err(field("eval.attempts", "must be >= 1"));
        }
        if e.enrolled_per_class == 0 {
            return Err(field("eval.enrolled_per_class", "must be >= 1"));
        }
        if let Some(a) = e.sweep_alphas.iter().find(|a| !(**a >= 0.0)) {
            return Err(field("eval.sweep_alphas", format!("{a} must be >= 0")));
        }
        Ok(())
    }

    pub fn triplet_config(&self) -> TripletTrainConfig {
        let e = &self.embedding;
        TripletTrainConfig {
            margin: e.margin,
            learning_rate: e.learning_rate,
            batch_size: e.batch_size,
            epochs: e.epochs,
            triplets_per_epoch: e.triplets_per_epoch,
            seed: self.seed,
        }
    }

    pub fn image_distance(&self) -> Result<ImageDistance> {
        let g = &self.generator;
        Ok(match g.distance.as_str() {
            "l1" => ImageDistance::L1,
            "l2" => ImageDistance::L2,
            "dssim" => ImageDistance::Dssim {
                kappa1: g.kappa1,
                kappa2: g.kappa2,
            },
            "sobel" => ImageDistance::Sobel,
            "combined" => ImageDistance::Combined { omega: g.omega },
            other => {
                return Err(field(
                    "generator.distance",
                    format!("unknown distance `{other}`, expected l1|l2|dssim|sobel|combined"),
                ))
            }
        })
    }

    pub fn generator_config(&self) -> Result<GeneratorTrainConfig> {
        let g = &self.generator;
        Ok(GeneratorTrainConfig {
            margin: g.margin,
            pi_emb: g.pi_emb,
            distance: self.image_distance()?,
            learning_rate: g.learning_rate,
            batch_size: g.batch_size,
            epochs: g.epochs,
            images_per_epoch: g.images_per_epoch,
            seed: self.seed,
        })
    }

    pub fn sweep(&self) -> ThresholdSweep {
        ThresholdSweep {
            min: self.eval.threshold_min,
            max: self.eval.threshold_max,
            count: self.eval.threshold_count,
        }
    }

    pub fn auth_protocol(&self) -> AuthProtocol {
        let e = &self.eval;
        AuthProtocol {
            stored_classes: e.stored_classes.clone(),
            negative_classes: e.negative_classes.clone(),
            enrolled_per_class: e.enrolled_per_class,
            attempts: e.attempts,
            sweep: self.sweep(),
            claimed_identity: e.claimed_identity,
            seed: self.seed,
        }
    }
}
