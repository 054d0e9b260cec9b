use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::generator::Distort;
use crate::metrics::l2_distance;
use crate::Result;

/// Mean L2 distances for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub class: u8,
    /// `X` vs `G(X)` over every image that appears in a sampled pair.
    pub real_gen: f64,
    /// `X` vs `Y` over sampled same-class pairs.
    pub real_real: f64,
    /// `G(X)` vs `G(Y)` over the same pairs.
    pub gen_gen: f64,
    pub pairs: usize,
}

fn sample_pairs(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let all = n * (n - 1) / 2;
    if all <= count {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let p = (i.min(j), i.max(j));
        if seen.insert(p) {
            pairs.push(p);
        }
    }
    pairs
}

/// Per-class distance table over `classes` (all labels present when empty).
/// Classes with fewer than two images are skipped with a warning.
pub fn distance_table(
    real: &Dataset,
    gen: &dyn Distort,
    classes: &[u8],
    pairs_per_class: usize,
    seed: u64,
) -> Result<Vec<DistanceRow>> {
    let index = real.class_indices();
    let wanted: Vec<u8> = if classes.is_empty() {
        index.keys().copied().collect()
    } else {
        classes.to_vec()
    };
    let mut rows = Vec::new();
    for class in wanted {
        let members = index.get(&class).map_or(&[][..], |v| v.as_slice());
        if members.len() < 2 {
            log::warn!("class {class} has {} images; skipped", members.len());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64 + 1) << 32));
        let pairs = sample_pairs(members.len(), pairs_per_class.max(1), &mut rng);
        let used: Vec<usize> = pairs
            .iter()
            .flat_map(|&(i, j)| [i, j])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let generated: BTreeMap<usize, _> = used
            .par_iter()
            .map(|&i| gen.distort(&real.images[members[i]]).map(|g| (i, g)))
            .collect::<Result<_>>()?;
        let real_gen = used
            .iter()
            .map(|i| l2_distance(&real.images[members[*i]], &generated[i]))
            .sum::<Result<f64>>()?
            / used.len() as f64;
        let mut real_real = 0.0;
        let mut gen_gen = 0.0;
        for &(i, j) in &pairs {
            real_real += l2_distance(&real.images[members[i]], &real.images[members[j]])?;
            gen_gen += l2_distance(&generated[&i], &generated[&j])?;
        }
        rows.push(DistanceRow {
            class,
            real_gen,
            real_real: real_real / pairs.len() as f64,
            gen_gen: gen_gen / pairs.len() as f64,
            pairs: pairs.len(),
        });
    }
    Ok(rows)
}
