use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scalar;

/// Name, shape, and element offset of one parameter tensor inside a flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of parameter tensors packed back to back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.total += spec.len();
        self.specs.push(spec);
        offset
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// Fills weight tensors with N(0, 1/fan_in) and leaves everything else zero.
///
/// `fan_ins` pairs a weight tensor name with the number of inputs feeding
/// each unit of that layer. Tensors are filled in layout order from a single
/// seeded stream.
pub fn he_normal<T: Scalar>(layout: &ParamLayout, fan_ins: &[(&str, usize)], seed: u64) -> Vec<T> {
    let mut params = vec![T::zero(); layout.total()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in layout.specs() {
        let Some(&(_, fan_in)) = fan_ins.iter().find(|(n, _)| *n == spec.name) else {
            continue;
        };
        let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        for p in &mut params[spec.range()] {
            *p = T::from_f64(dist.sample(&mut rng));
        }
    }
    params
}
