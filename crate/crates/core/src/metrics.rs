//! Image and embedding distances, with analytic gradients of every image
//! distance with respect to the predicted image.
//!
//! All image distances are means over `W·H·C` pixels. Sums are accumulated
//! in `f64` regardless of the pixel type.

use crate::image::{Image, Shape};
use crate::nn::Scalar;
use crate::{Error, Result};

/// Default SSIM stabilizers for a dynamic range of 1.
pub const DEFAULT_KAPPA1: f64 = 1e-4;
pub const DEFAULT_KAPPA2: f64 = 9e-4;
pub const DEFAULT_OMEGA: f64 = 0.5;

/// Horizontal Sobel stencil, applied as a cross-correlation.
pub const SOBEL_X: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
/// Vertical Sobel stencil, applied as a cross-correlation.
pub const SOBEL_Y: [[i32; 3]; 3] = [[1, 2, 1], [0, 0, 0], [-1, -2, -1]];

/// Which pixel-space distance drives the generator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ImageDistance {
    L1,
    #[default]
    L2,
    Dssim {
        kappa1: f64,
        kappa2: f64,
    },
    Sobel,
    Combined {
        omega: f64,
    },
}

impl ImageDistance {
    pub fn dssim() -> Self {
        ImageDistance::Dssim {
            kappa1: DEFAULT_KAPPA1,
            kappa2: DEFAULT_KAPPA2,
        }
    }

    pub fn combined() -> Self {
        ImageDistance::Combined { omega: DEFAULT_OMEGA }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImageDistance::L1 => "l1",
            ImageDistance::L2 => "l2",
            ImageDistance::Dssim { .. } => "dssim",
            ImageDistance::Sobel => "sobel",
            ImageDistance::Combined { .. } => "combined",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ImageDistance::Dssim { kappa1, kappa2 } if !(kappa1 > 0.0 && kappa2 > 0.0) => {
                Err(Error::Parameter(format!(
                    "kappa constants must be positive, got {kappa1}, {kappa2}"
                )))
            }
            ImageDistance::Combined { omega } if !(0.0..=1.0).contains(&omega) => {
                Err(Error::Parameter(format!("omega {omega} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn distance<T: Scalar>(&self, pred: &Image<T>, truth: &Image<T>) -> Result<f64> {
        self.validate()?;
        match *self {
            ImageDistance::L1 => l1_distance(pred, truth),
            ImageDistance::L2 => l2_distance(pred, truth),
            ImageDistance::Dssim { kappa1, kappa2 } => dssim_distance(pred, truth, kappa1, kappa2),
            ImageDistance::Sobel => sobel_distance(pred, truth),
            ImageDistance::Combined { omega } => combined_distance(pred, truth, omega),
        }
    }

    /// Partial derivatives of [`Self::distance`] with respect to each pixel
    /// of `pred`.
    pub fn gradient<T: Scalar>(&self, pred: &Image<T>, truth: &Image<T>) -> Result<Vec<T>> {
        self.validate()?;
        pred.ensure_same_shape(truth)?;
        let (p, t) = (pred.pixels(), truth.pixels());
        let shape = pred.shape();
        Ok(match *self {
            ImageDistance::L1 => l1_gradient(p, t),
            ImageDistance::L2 => l2_gradient(p, t),
            ImageDistance::Dssim { kappa1, kappa2 } => dssim_gradient(p, t, kappa1, kappa2),
            ImageDistance::Sobel => sobel_gradient(p, t, &sobel_mask_raw(t, shape)),
            ImageDistance::Combined { omega } => {
                let l1 = l1_gradient(p, t);
                let sobel = sobel_gradient(p, t, &sobel_mask_raw(t, shape));
                let (w1, w2) = (T::from_f64(omega), T::from_f64(1.0 - omega));
                l1.iter().zip(&sobel).map(|(&a, &b)| w1 * a + w2 * b).collect()
            }
        })
    }
}

fn sign<T: Scalar>(d: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn l1_distance<T: Scalar>(pred: &Image<T>, truth: &Image<T>) -> Result<f64> {
    pred.ensure_same_shape(truth)?;
    let sum: f64 = pred
        .pixels()
        .iter()
        .zip(truth.pixels())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(sum / pred.pixels().len() as f64)
}

pub fn l2_distance<T: Scalar>(pred: &Image<T>, truth: &Image<T>) -> Result<f64> {
    pred.ensure_same_shape(truth)?;
    let sum: f64 = pred
        .pixels()
        .iter()
        .zip(truth.pixels())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / pred.pixels().len() as f64)
}

fn l1_gradient<T: Scalar>(p: &[T], t: &[T]) -> Vec<T> {
    let n = T::from_f64(p.len() as f64);
    p.iter().zip(t).map(|(&a, &b)| sign(a - b) / n).collect()
}

fn l2_gradient<T: Scalar>(p: &[T], t: &[T]) -> Vec<T> {
    let scale = T::from_f64(2.0 / p.len() as f64);
    p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect()
}

struct SsimStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn ssim_stats<T: Scalar>(x: &[T], y: &[T]) -> SsimStats {
    let n = x.len() as f64;
    let mu_x = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mu_y = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a.as_f64() - mu_x, b.as_f64() - mu_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    SsimStats {
        mu_x,
        mu_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    }
}

/// SSIM from whole-image statistics (population moments, no window).
pub fn ssim<T: Scalar>(x: &Image<T>, y: &Image<T>, kappa1: f64, kappa2: f64) -> Result<f64> {
    x.ensure_same_shape(y)?;
    let s = ssim_stats(x.pixels(), y.pixels());
    let num = (2.0 * s.mu_x * s.mu_y + kappa1) * (2.0 * s.cov + kappa2);
    let den = (s.mu_x * s.mu_x + s.mu_y * s.mu_y + kappa1) * (s.var_x + s.var_y + kappa2);
    Ok(num / den)
}

/// `(1 - SSIM) / 2`.
pub fn dssim_distance<T: Scalar>(pred: &Image<T>, truth: &Image<T>, kappa1: f64, kappa2: f64) -> Result<f64> {
    if !(kappa1 > 0.0 && kappa2 > 0.0) {
        return Err(Error::Parameter("kappa constants must be positive".into()));
    }
    Ok((1.0 - ssim(pred, truth, kappa1, kappa2)?) / 2.0)
}

fn dssim_gradient<T: Scalar>(p: &[T], t: &[T], kappa1: f64, kappa2: f64) -> Vec<T> {
    let n = p.len() as f64;
    let s = ssim_stats(p, t);
    let a = 2.0 * s.mu_x * s.mu_y + kappa1;
    let b = 2.0 * s.cov + kappa2;
    let c = s.mu_x * s.mu_x + s.mu_y * s.mu_y + kappa1;
    let d = s.var_x + s.var_y + kappa2;
    let cd = c * d;
    p.iter()
        .zip(t)
        .map(|(&xi, &yi)| {
            let da = 2.0 * s.mu_y / n;
            let db = 2.0 * (yi.as_f64() - s.mu_y) / n;
            let dc = 2.0 * s.mu_x / n;
            let dd = 2.0 * (xi.as_f64() - s.mu_x) / n;
            let dssim = (da * b + a * db) / cd - a * b * (dc * d + c * dd) / (cd * cd);
            T::from_f64(-0.5 * dssim)
        })
        .collect()
}

fn sobel_mask_raw<T: Scalar>(pixels: &[T], shape: Shape) -> Vec<f64> {
    let (w, h) = (shape.width, shape.height);
    let mut mask = vec![0.0; pixels.len()];
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    for c in 0..shape.channels {
        let plane = &pixels[c * w * h..(c + 1) * w * h];
        for y in 0..h {
            for x in 0..w {
                let at = |dy: isize, dx: isize| {
                    plane[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)].as_f64()
                };
                // separable form of the stencils; differences first so flat
                // regions give exactly zero
                let (mut gx, mut gy) = (0.0, 0.0);
                for (k, wk) in [1.0, 2.0, 1.0].into_iter().enumerate() {
                    let k = k as isize - 1;
                    gx += wk * (at(k, 1) - at(k, -1));
                    gy += wk * (at(-1, k) - at(1, k));
                }
                mask[c * w * h + y * w + x] = (gx * gx + gy * gy).sqrt();
            }
        }
    }
    mask
}

/// Per-pixel Sobel gradient magnitude with edge-replicate padding; channels
/// are processed independently.
pub fn sobel_mask<T: Scalar>(image: &Image<T>) -> Vec<f64> {
    sobel_mask_raw(image.pixels(), image.shape())
}

/// Edge-weighted L1: `Σ S(truth)·|pred − truth| / (W·H·C)`. The mask comes
/// from `truth` only, so the distance is not symmetric.
pub fn sobel_distance<T: Scalar>(pred: &Image<T>, truth: &Image<T>) -> Result<f64> {
    pred.ensure_same_shape(truth)?;
    let mask = sobel_mask(truth);
    let sum: f64 = pred
        .pixels()
        .iter()
        .zip(truth.pixels())
        .zip(&mask)
        .map(|((&a, &b), &m)| m * (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(sum / mask.len() as f64)
}

fn sobel_gradient<T: Scalar>(p: &[T], t: &[T], mask: &[f64]) -> Vec<T> {
    let n = p.len() as f64;
    p.iter()
        .zip(t)
        .zip(mask)
        .map(|((&a, &b), &m)| sign(a - b) * T::from_f64(m / n))
        .collect()
}

/// `omega·L1 + (1 − omega)·Sobel`.
pub fn combined_distance<T: Scalar>(pred: &Image<T>, truth: &Image<T>, omega: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Parameter(format!("omega {omega} outside [0, 1]")));
    }
    Ok(omega * l1_distance(pred, truth)? + (1.0 - omega) * sobel_distance(pred, truth)?)
}

/// Squared Euclidean distance between embeddings; `2 − 2⟨u, v⟩` on the unit
/// sphere.
pub fn embedding_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "embedding sizes differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum())
}
