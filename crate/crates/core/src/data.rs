//! MNIST ingestion: IDX and PGM containers, triplet sampling, and class
//! filtering.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Shape};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A labeled image collection loaded from one pair of IDX files.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub split: Split,
    pub seed: u64,
}

/// Anchor and positive share a class; the negative comes from another one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet<'a> {
    pub anchor: &'a Image,
    pub positive: &'a Image,
    pub negative: &'a Image,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Decodes an IDX image file into `(shape, raw bytes per image)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Shape, Vec<&[u8]>)> {
    if bytes.len() < 16 {
        return Err(Error::Length(format!(
            "image header needs 16 bytes, got {}",
            bytes.len()
        )));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * size {
        return Err(Error::Length(format!(
            "{count} images of {rows}x{cols} need {} payload bytes, found {}",
            count * size,
            payload.len()
        )));
    }
    let images = (0..count).map(|i| &payload[i * size..(i + 1) * size]).collect();
    Ok((Shape::new(cols, rows, 1), images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::Length(format!(
            "label header needs 8 bytes, got {}",
            bytes.len()
        )));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Length(format!(
            "{count} labels declared, {} present",
            payload.len()
        )));
    }
    Ok(&payload[..count])
}

pub fn encode_idx_images(shape: Shape, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * shape.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(shape.height as u32).to_be_bytes());
    out.extend_from_slice(&(shape.width as u32).to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair, scaling bytes by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;
    dataset_from_idx(&image_bytes, &label_bytes, split)
}

pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<Dataset> {
    let (shape, raw) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != raw.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            raw.len(),
            labels.len()
        )));
    }
    let images = raw
        .into_iter()
        .zip(labels)
        .map(|(bytes, &label)| {
            if label > 9 {
                return Err(Error::Format(format!("label {label} outside 0..=9")));
            }
            Ok(Image::from_bytes(shape, bytes)?.with_label(label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        images,
        split,
        seed: 0,
    })
}

/// Reads an IDX images file without labels.
pub fn load_idx_images(path: &Path) -> Result<Vec<Image>> {
    let bytes = read(path)?;
    let (shape, raw) = parse_idx_images(&bytes)?;
    raw.into_iter().map(|b| Image::from_bytes(shape, b)).collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Image indices grouped by label, in ascending label order.
    pub fn class_indices(&self) -> BTreeMap<u8, Vec<usize>> {
        let mut map: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, img) in self.images.iter().enumerate() {
            if let Some(label) = img.label() {
                map.entry(label).or_default().push(i);
            }
        }
        map
    }

    /// Writes the dataset as an IDX image/label pair.
    pub fn write_idx(&self, images_path: &Path, labels_path: &Path) -> Result<()> {
        let shape = self.images.first().map(|i| i.shape()).unwrap_or(Shape::MNIST);
        let raw: Vec<Vec<u8>> = self.images.iter().map(|i| i.to_bytes()).collect();
        let labels: Vec<u8> = self.images.iter().map(|i| i.label().unwrap_or(0)).collect();
        crate::report::write_atomic(images_path, &encode_idx_images(shape, &raw))?;
        crate::report::write_atomic(labels_path, &encode_idx_labels(&labels))
    }

    /// Seeded subsample keeping `fraction` of the images (at least one),
    /// original order preserved.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Parameter(format!("fraction {fraction} outside (0, 1]")));
        }
        let keep = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len().max(1));
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(keep.min(self.len()));
        idx.sort_unstable();
        Ok(Dataset {
            images: idx.into_iter().map(|i| self.images[i].clone()).collect(),
            split: self.split,
            seed,
        })
    }

    /// First `n` images (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            images: self.images.iter().take(n).cloned().collect(),
            split: self.split,
            seed: self.seed,
        }
    }
}

/// Draws `n` triplets: a uniform anchor class with at least two images, two
/// distinct images from it, and a uniform negative from any other class.
pub fn sample_triplets(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<Triplet<'_>>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let classes = dataset.class_indices();
    let anchor_classes: Vec<u8> = classes
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(&c, _)| c)
        .collect();
    if anchor_classes.is_empty() {
        return Err(Error::Sampling("no class has two images".into()));
    }
    if classes.len() < 2 {
        return Err(Error::Sampling("need at least two classes for negatives".into()));
    }
    let all: Vec<u8> = classes.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ac = anchor_classes[rng.gen_range(0..anchor_classes.len())];
        let members = &classes[&ac];
        let a = rng.gen_range(0..members.len());
        let mut p = rng.gen_range(0..members.len() - 1);
        if p >= a {
            p += 1;
        }
        let mut nc_pos = rng.gen_range(0..all.len() - 1);
        if all[nc_pos] >= ac {
            nc_pos += 1;
        }
        let negatives = &classes[&all[nc_pos]];
        let neg = negatives[rng.gen_range(0..negatives.len())];
        out.push(Triplet {
            anchor: &dataset.images[members[a]],
            positive: &dataset.images[members[p]],
            negative: &dataset.images[neg],
        });
    }
    Ok(out)
}

/// Keeps images whose label is in `classes`, preserving order.
pub fn filter_by_classes(dataset: &Dataset, classes: &[u8]) -> Dataset {
    Dataset {
        images: dataset
            .images
            .iter()
            .filter(|img| img.label().is_some_and(|l| classes.contains(&l)))
            .cloned()
            .collect(),
        split: dataset.split,
        seed: dataset.seed,
    }
}

/// Binary PGM (`P5`, maxval 255), single channel.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let s = image.shape();
    let mut out = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
    out.extend(image.to_bytes());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Length("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() < w * h {
        return Err(Error::Length(format!(
            "PGM needs {} bytes, has {}",
            w * h,
            data.len()
        )));
    }
    Image::from_bytes(Shape::new(w, h, 1), &data[..w * h])
}
