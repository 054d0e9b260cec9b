use crate::nn::Scalar;
use crate::{Error, Result};

/// Width, height, and channel count of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub const MNIST: Shape = Shape {
        width: 28,
        height: 28,
        channels: 1,
    };

    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// Channel-major grid of intensities in `[0, 1]` with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    shape: Shape,
    pixels: Vec<T>,
    label: Option<u8>,
}

impl<T: Scalar> Image<T> {
    /// Builds an image, rejecting a wrong pixel count or any intensity
    /// outside `[0, 1]` (NaN included).
    pub fn new(shape: Shape, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "{} pixels for shape {shape}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::Parameter(format!("intensity {bad:?} outside [0, 1]")));
        }
        Ok(Self {
            shape,
            pixels,
            label: None,
        })
    }

    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    /// Scales raw bytes by 1/255.
    pub fn from_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        let scale = T::from_f64(255.0);
        Self::new(
            shape,
            bytes.iter().map(|&b| T::from_f64(b as f64) / scale).collect(),
        )
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn set_label(&mut self, label: Option<u8>) {
        self.label = label;
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    /// Quantizes to bytes with `round(p·255)`, halves rounded away from zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            shape: self.shape,
            pixels: self.pixels.iter().map(|&p| U::from_f64(p.as_f64())).collect(),
            label: self.label,
        }
    }

    pub(crate) fn ensure_same_shape<U>(&self, other: &Image<U>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "image shapes differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
