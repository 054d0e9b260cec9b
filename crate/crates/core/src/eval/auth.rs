use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{filter_by_classes, Dataset};
use crate::embedding::EmbeddingNet;
use crate::generator::{Distort, IdentityGenerator};
use crate::metrics::embedding_distance;
use crate::{Error, Image, Result};

/// A stored enrollment artifact and its cached embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub identity: u8,
    pub image: Image,
    pub embedding: Vec<f32>,
}

/// In-memory template database.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateStore {
    entries: Vec<Template>,
}

/// Outcome of one verification attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub accepted: bool,
    /// `None` when no template was eligible.
    pub identity: Option<u8>,
    pub distance: Option<f64>,
}

impl TemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a store from saved entries, checking every cached embedding
    /// against `emb`.
    pub fn from_entries(entries: Vec<Template>, emb: &EmbeddingNet<f32>) -> Result<Self> {
        let store = Self { entries };
        store.revalidate(emb)?;
        Ok(store)
    }

    pub fn entries(&self) -> &[Template] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores `gen(image)` and its embedding under `identity`.
    pub fn enroll(
        &mut self,
        image: &Image,
        identity: u8,
        gen: &dyn Distort,
        emb: &EmbeddingNet<f32>,
    ) -> Result<()> {
        let template = gen.distort(image)?;
        let embedding = emb.embed(&template)?;
        self.entries.push(Template {
            identity,
            image: template,
            embedding,
        });
        Ok(())
    }

    pub fn revalidate(&self, emb: &EmbeddingNet<f32>) -> Result<()> {
        for (i, t) in self.entries.iter().enumerate() {
            if emb.embed(&t.image)? != t.embedding {
                return Err(Error::Validation(format!(
                    "template {i} (identity {}) has a stale cached embedding",
                    t.identity
                )));
            }
        }
        Ok(())
    }

    /// Closest template to `probe` (restricted to `claimed` if given).
    pub fn best_match(&self, probe: &[f32], claimed: Option<u8>) -> Result<Option<(u8, f64)>> {
        let mut best: Option<(u8, f64)> = None;
        for t in &self.entries {
            if claimed.is_some_and(|c| c != t.identity) {
                continue;
            }
            let d = embedding_distance(probe, &t.embedding)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((t.identity, d));
            }
        }
        Ok(best)
    }

    /// Accepts iff the smallest embedding distance to any template is
    /// strictly below `tau`.
    pub fn verify(&self, probe: &Image, emb: &EmbeddingNet<f32>, tau: f64) -> Result<Verification> {
        self.verify_claim(probe, emb, tau, None)
    }

    pub fn verify_claim(
        &self,
        probe: &Image,
        emb: &EmbeddingNet<f32>,
        tau: f64,
        claimed: Option<u8>,
    ) -> Result<Verification> {
        if !(tau >= 0.0) {
            return Err(Error::Parameter(format!("threshold {tau} must be >= 0")));
        }
        let e = emb.embed(probe)?;
        Ok(match self.best_match(&e, claimed)? {
            Some((identity, d)) => Verification {
                accepted: d < tau,
                identity: Some(identity),
                distance: Some(d),
            },
            None => Verification {
                accepted: false,
                identity: None,
                distance: None,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    /// `(fpr, tpr)`; `None` when a population is empty.
    pub fn rates(&self) -> Option<(f64, f64)> {
        if self.positives() == 0 || self.negatives() == 0 {
            return None;
        }
        Some((
            self.fp as f64 / self.negatives() as f64,
            self.tp as f64 / self.positives() as f64,
        ))
    }
}

/// Precision, recall, and F1; `None` marks an undefined ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn compute_metrics(c: &ConfusionMatrix) -> Metrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    Metrics {
        precision,
        recall,
        f1,
    }
}

/// ROC points sorted by false-positive rate, then true-positive rate.
pub fn roc(confusions: &[ConfusionMatrix]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = confusions.iter().filter_map(ConfusionMatrix::rates).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts
}

/// Rate at which `fpr = 1 − tpr`, interpolated linearly between the two
/// neighbouring ROC points that bracket the crossing.
pub fn compute_eer(roc: &[(f64, f64)]) -> Result<f64> {
    if roc.len() < 2 {
        return Err(Error::Interpolation(format!(
            "need at least two ROC points, got {}",
            roc.len()
        )));
    }
    let g = |&(fpr, tpr): &(f64, f64)| fpr - (1.0 - tpr);
    for w in roc.windows(2) {
        let (g0, g1) = (g(&w[0]), g(&w[1]));
        if g0 == 0.0 {
            return Ok(w[0].0);
        }
        if g0 < 0.0 && g1 >= 0.0 {
            let t = g0 / (g0 - g1);
            return Ok(w[0].0 + t * (w[1].0 - w[0].0));
        }
    }
    let last = roc[roc.len() - 1];
    if g(&last) == 0.0 {
        return Ok(last.0);
    }
    Err(Error::Interpolation("ROC never crosses fpr = 1 - tpr".into()))
}

/// Uniform grid of `count` thresholds from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSweep {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 4.0,
            count: 1000,
        }
    }
}

impl ThresholdSweep {
    pub fn validate(&self) -> Result<()> {
        if !(self.min >= 0.0 && self.min < self.max) || !self.max.is_finite() {
            return Err(Error::Config(format!(
                "threshold range [{}, {}] must satisfy 0 <= min < max",
                self.min, self.max
            )));
        }
        if self.count < 2 {
            return Err(Error::Config("threshold_count must be >= 2".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.max
                } else {
                    self.min + step * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Row with the best F1; ties go to the smallest threshold.
    pub best: SweepRow,
    pub rows: Vec<SweepRow>,
    pub roc: Vec<(f64, f64)>,
    pub eer: f64,
}

impl EvaluationReport {
    /// Builds the sweep from per-probe best distances (`None` never accepts).
    pub fn from_scores(
        positives: &[Option<f64>],
        negatives: &[Option<f64>],
        sweep: &ThresholdSweep,
    ) -> Result<Self> {
        sweep.validate()?;
        let below = |scores: &[Option<f64>], tau: f64| {
            scores.iter().filter(|s| s.is_some_and(|d| d < tau)).count() as u64
        };
        let rows: Vec<SweepRow> = sweep
            .thresholds()
            .into_iter()
            .map(|tau| {
                let tp = below(positives, tau);
                let fp = below(negatives, tau);
                let confusion =
                    ConfusionMatrix::new(tp, fp, positives.len() as u64 - tp, negatives.len() as u64 - fp);
                SweepRow {
                    tau,
                    confusion,
                    metrics: compute_metrics(&confusion),
                }
            })
            .collect();
        let mut best = rows[0];
        for r in &rows[1..] {
            if r.metrics.f1.unwrap_or(f64::NEG_INFINITY) > best.metrics.f1.unwrap_or(f64::NEG_INFINITY) {
                best = *r;
            }
        }
        let confusions: Vec<ConfusionMatrix> = rows.iter().map(|r| r.confusion).collect();
        let roc = roc(&confusions);
        let eer = compute_eer(&roc)?;
        Ok(Self { best, rows, roc, eer })
    }

    pub fn best_threshold(&self) -> f64 {
        self.best.tau
    }
}

/// Parameters of the mock authentication experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthProtocol {
    pub stored_classes: Vec<u8>,
    /// Drawn by seed from the remaining classes when `None`.
    pub negative_classes: Option<Vec<u8>>,
    pub enrolled_per_class: usize,
    pub attempts: usize,
    pub sweep: ThresholdSweep,
    /// Compare each probe only with templates of its claimed identity.
    pub claimed_identity: bool,
    pub seed: u64,
}

impl Default for AuthProtocol {
    fn default() -> Self {
        Self {
            stored_classes: vec![1, 2, 3],
            negative_classes: None,
            enrolled_per_class: 10,
            attempts: 1000,
            sweep: ThresholdSweep::default(),
            claimed_identity: false,
            seed: 0,
        }
    }
}

/// Enrollment images and the two probe populations.
#[derive(Debug, Clone)]
pub struct AuthSets {
    pub enroll: Dataset,
    pub positives: Dataset,
    pub negatives: Dataset,
    pub negative_classes: Vec<u8>,
}

fn shuffled_take(d: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    Dataset {
        images: idx.into_iter().map(|i| d.images[i].clone()).collect(),
        split: d.split,
        seed: d.seed,
    }
}

/// Draws enrollment images from `enroll_pool` and probes from `probe_pool`.
pub fn select_auth_sets(
    enroll_pool: &Dataset,
    probe_pool: &Dataset,
    protocol: &AuthProtocol,
) -> Result<AuthSets> {
    let stored: BTreeSet<u8> = protocol.stored_classes.iter().copied().collect();
    if stored.is_empty() {
        return Err(Error::Config("stored_classes must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let negative_classes = match &protocol.negative_classes {
        Some(c) => c.clone(),
        None => {
            let mut others: Vec<u8> = (0..10u8).filter(|c| !stored.contains(c)).collect();
            others.shuffle(&mut rng);
            others.truncate(stored.len());
            others.sort_unstable();
            others
        }
    };
    if let Some(c) = negative_classes.iter().find(|c| stored.contains(c)) {
        return Err(Error::Protocol(format!(
            "class {c} is both stored and a negative class"
        )));
    }
    let mut enroll_images = Vec::new();
    for &c in &stored {
        let pool = filter_by_classes(enroll_pool, &[c]);
        if pool.len() < protocol.enrolled_per_class {
            return Err(Error::Sampling(format!(
                "class {c} has {} enrollment images, {} requested",
                pool.len(),
                protocol.enrolled_per_class
            )));
        }
        enroll_images.extend(shuffled_take(&pool, protocol.enrolled_per_class, &mut rng).images);
    }
    let stored_vec: Vec<u8> = stored.into_iter().collect();
    let positives = shuffled_take(
        &filter_by_classes(probe_pool, &stored_vec),
        protocol.attempts,
        &mut rng,
    );
    let negatives = shuffled_take(
        &filter_by_classes(probe_pool, &negative_classes),
        protocol.attempts,
        &mut rng,
    );
    for (name, d) in [("positive", &positives), ("negative", &negatives)] {
        if d.len() < protocol.attempts {
            log::warn!(
                "only {} {name} probes available, {} requested",
                d.len(),
                protocol.attempts
            );
        }
    }
    Ok(AuthSets {
        enroll: Dataset {
            images: enroll_images,
            split: enroll_pool.split,
            seed: enroll_pool.seed,
        },
        positives,
        negatives,
        negative_classes,
    })
}

/// Enrolls `sets.enroll` through `enroll_gen` and sweeps thresholds over
/// both probe populations. The control run passes the identity map here;
/// nothing else differs.
pub fn evaluate_store(
    sets: &AuthSets,
    enroll_gen: &dyn Distort,
    emb: &EmbeddingNet<f32>,
    protocol: &AuthProtocol,
) -> Result<(TemplateStore, EvaluationReport)> {
    let labels = |d: &Dataset| -> BTreeSet<u8> { d.images.iter().filter_map(Image::label).collect() };
    let (pos, neg) = (labels(&sets.positives), labels(&sets.negatives));
    if let Some(c) = pos.intersection(&neg).next() {
        return Err(Error::Protocol(format!(
            "class {c} appears among both positive and negative probes"
        )));
    }
    let stored: BTreeSet<u8> = protocol.stored_classes.iter().copied().collect();
    if let Some(c) = pos.difference(&stored).next() {
        return Err(Error::Protocol(format!("positive probe of unstored class {c}")));
    }
    if let Some(c) = neg.intersection(&stored).next() {
        return Err(Error::Protocol(format!("negative probe of stored class {c}")));
    }

    let templates: Vec<Template> = sets
        .enroll
        .images
        .par_iter()
        .map(|img| {
            let identity = img
                .label()
                .ok_or_else(|| Error::Protocol("enrollment image without a label".into()))?;
            let mut one = TemplateStore::new();
            one.enroll(img, identity, enroll_gen, emb)?;
            Ok(one.entries.pop().expect("just enrolled"))
        })
        .collect::<Result<_>>()?;
    let store = TemplateStore { entries: templates };

    let stored_vec: Vec<u8> = stored.into_iter().collect();
    let scores = |d: &Dataset, positive: bool| -> Result<Vec<Option<f64>>> {
        d.images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let claimed = protocol.claimed_identity.then(|| {
                    if positive {
                        img.label().unwrap_or(stored_vec[i % stored_vec.len()])
                    } else {
                        stored_vec[i % stored_vec.len()]
                    }
                });
                let e = emb.embed(img)?;
                Ok(store.best_match(&e, claimed)?.map(|(_, d)| d))
            })
            .collect()
    };
    let report = EvaluationReport::from_scores(
        &scores(&sets.positives, true)?,
        &scores(&sets.negatives, false)?,
        &protocol.sweep,
    )?;
    Ok((store, report))
}

/// With-distortion report and the no-distortion control on the same probes.
#[derive(Debug, Clone)]
pub struct AuthOutcome {
    pub distorted: EvaluationReport,
    pub control: EvaluationReport,
}

pub fn mock_auth_eval(
    sets: &AuthSets,
    gen: &dyn Distort,
    emb: &EmbeddingNet<f32>,
    protocol: &AuthProtocol,
) -> Result<AuthOutcome> {
    let (_, distorted) = evaluate_store(sets, gen, emb, protocol)?;
    let (_, control) = evaluate_store(sets, &IdentityGenerator, emb, protocol)?;
    Ok(AuthOutcome { distorted, control })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_reproduce_reported_panels() {
        let m = compute_metrics(&ConfusionMatrix::new(1171, 32, 29, 1168));
        assert!((m.precision.unwrap() - 0.97340).abs() < 1e-5);
        assert!((m.recall.unwrap() - 0.97583).abs() < 1e-5);
        assert!((m.f1.unwrap() - 0.97461).abs() < 1e-5);
        let m = compute_metrics(&ConfusionMatrix::new(1174, 29, 26, 1171));
        assert!((m.precision.unwrap() - 0.97589).abs() < 1e-5);
        assert!((m.recall.unwrap() - 0.97833).abs() < 1e-5);
        assert!((m.f1.unwrap() - 0.97711).abs() < 1e-5);
    }

    #[test]
    fn undefined_metrics_are_marked() {
        let m = compute_metrics(&ConfusionMatrix::new(0, 0, 5, 5));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert_eq!(compute_metrics(&ConfusionMatrix::default()).recall, None);
    }

    #[test]
    fn eer_of_eight_scores() {
        let pos = [0.1, 0.2, 0.3, 0.6].map(Some);
        let neg = [0.4, 0.5, 0.7, 0.8].map(Some);
        let r = EvaluationReport::from_scores(&pos, &neg, &ThresholdSweep::default()).unwrap();
        assert!((r.eer - 0.25).abs() < 1e-12);
    }

    #[test]
    fn separable_scores() {
        let pos = vec![Some(0.1); 20];
        let neg = vec![Some(3.9); 20];
        let r = EvaluationReport::from_scores(&pos, &neg, &ThresholdSweep::default()).unwrap();
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.best.metrics.f1, Some(1.0));
        assert!(r.best.tau > 0.1 && r.best.tau <= 3.9);
        // smallest threshold among the ties
        let first = r.rows.iter().find(|x| x.metrics.f1 == Some(1.0)).unwrap();
        assert_eq!(first.tau, r.best.tau);
    }

    #[test]
    fn degenerate_roc_is_an_error() {
        assert!(matches!(compute_eer(&[(0.3, 0.3)]), Err(Error::Interpolation(_))));
        assert!(matches!(
            compute_eer(&[(0.0, 0.0), (0.1, 0.2)]),
            Err(Error::Interpolation(_))
        ));
    }

    #[test]
    fn sweep_endpoints() {
        let t = ThresholdSweep::default().thresholds();
        assert_eq!(t.len(), 1000);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[999], 4.0);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }
}
