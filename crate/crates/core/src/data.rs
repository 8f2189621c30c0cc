//! MNIST ingestion from IDX files, normalization, seeded batching, and a
//! synthetic stand-in dataset for machines without the MNIST files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Raw 8-bit images as stored in an IDX3 file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub pixels: Vec<u8>,
}

fn idx_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<RawImages> {
    if bytes.len() < 16 {
        return Err(idx_err(
            path,
            format!("header error: need 16 header bytes, got {}", bytes.len()),
        ));
    }
    match be_u32(bytes, 0) {
        IMAGE_MAGIC => {}
        LABEL_MAGIC => return Err(idx_err(path, "label magic in image file")),
        other => return Err(idx_err(path, format!("bad image magic {other:#010x}"))),
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    if rows != SIDE || cols != SIDE {
        return Err(idx_err(path, format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let expected = 16 + count * PIXELS;
    if bytes.len() != expected {
        return Err(idx_err(
            path,
            format!("truncated payload: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    Ok(RawImages {
        count,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(idx_err(
            path,
            format!("header error: need 8 header bytes, got {}", bytes.len()),
        ));
    }
    match be_u32(bytes, 0) {
        LABEL_MAGIC => {}
        IMAGE_MAGIC => return Err(idx_err(path, "image magic in label file")),
        other => return Err(idx_err(path, format!("bad label magic {other:#010x}"))),
    }
    let count = be_u32(bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(idx_err(
            path,
            format!("truncated payload: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let labels = bytes[8..].to_vec();
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= CLASSES) {
        return Err(idx_err(path, format!("label out of range: {l} at index {i}")));
    }
    Ok(labels)
}

pub fn load_idx_images(path: &Path) -> Result<RawImages> {
    parse_idx_images(&fs::read(path)?, path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?, path)
}

pub fn encode_idx_images(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(raw.count as u32).to_be_bytes());
    out.extend_from_slice(&(SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(SIDE as u32).to_be_bytes());
    out.extend_from_slice(&raw.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Affine pixel normalization `(x / 255 - mean) / std`, fitted on the
/// training split and reused for every other split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn fit(raw: &RawImages) -> Self {
        let n = raw.pixels.len().max(1) as f64;
        let mean = raw.pixels.iter().map(|&p| p as f64 / 255.0).sum::<f64>() / n;
        let var = raw
            .pixels
            .iter()
            .map(|&p| (p as f64 / 255.0 - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Normalization { mean, std }
    }

    pub fn apply(&self, byte: u8) -> f64 {
        (byte as f64 / 255.0 - self.mean) / self.std
    }

    pub fn normalize(&self, raw: &RawImages) -> Vec<f64> {
        raw.pixels.iter().map(|&p| self.apply(p)).collect()
    }
}

/// Normalized images `N x 1 x 28 x 28` with their labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    split: Split,
    norm: Normalization,
}

impl Dataset {
    pub fn from_raw(raw: &RawImages, labels: Vec<u8>, split: Split, norm: Normalization) -> Result<Self> {
        if raw.count != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: vec![raw.count],
                right: vec![labels.len()],
            });
        }
        if raw.count == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some((index, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= CLASSES) {
            return Err(Error::LabelOutOfRange {
                index,
                label: l as usize,
            });
        }
        let images = Tensor::new(vec![raw.count, 1, SIDE, SIDE], norm.normalize(raw))?;
        Ok(Dataset {
            images,
            labels,
            split,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images.data()[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Gathers the given samples into a `B x 1 x 28 x 28` tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_parts_unchecked(vec![indices.len(), 1, SIDE, SIDE], data)
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// First `n` samples (or all, when `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.gather(&idx),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            norm: self.norm,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

fn find_file(dir: &Path, name: &str) -> PathBuf {
    // Some mirrors ship `train-images.idx3-ubyte` instead of the dash form.
    let dashed = dir.join(name);
    if dashed.exists() {
        return dashed;
    }
    let dotted = dir.join(name.replacen("-idx", ".idx", 1));
    if dotted.exists() {
        dotted
    } else {
        dashed
    }
}

/// Loads the four standard MNIST files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let train_raw = load_idx_images(&find_file(dir, TRAIN_IMAGES))?;
    let train_labels = load_idx_labels(&find_file(dir, TRAIN_LABELS))?;
    let test_raw = load_idx_images(&find_file(dir, TEST_IMAGES))?;
    let test_labels = load_idx_labels(&find_file(dir, TEST_LABELS))?;
    from_raw_splits(&train_raw, train_labels, &test_raw, test_labels)
}

pub fn from_raw_splits(
    train_raw: &RawImages,
    train_labels: Vec<u8>,
    test_raw: &RawImages,
    test_labels: Vec<u8>,
) -> Result<Mnist> {
    let norm = Normalization::fit(train_raw);
    Ok(Mnist {
        train: Dataset::from_raw(train_raw, train_labels, Split::Train, norm)?,
        test: Dataset::from_raw(test_raw, test_labels, Split::Test, norm)?,
    })
}

/// Seeded Gaussian class blobs rendered as 8-bit images: each class has a
/// random prototype and samples add pixel noise around it.
pub fn synthetic_raw(count: usize, seed: u64, stream: u64) -> (RawImages, Vec<u8>) {
    let mut proto_rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| {
            let blob: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
            (0..PIXELS)
                .map(|_| (128.0 + 70.0 * blob.sample(&mut proto_rng)).clamp(0.0, 255.0))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    let noise = Normal::new(0.0, 60.0).unwrap();
    let mut pixels = Vec::with_capacity(count * PIXELS);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % CLASSES;
        labels.push(class as u8);
        for p in &prototypes[class] {
            pixels.push((p + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
        }
    }
    (RawImages { count, pixels }, labels)
}

/// Synthetic train split of `count` samples plus a test split of
/// `max(count / 6, 10)` samples.
pub fn synthetic(count: usize, seed: u64) -> Result<Mnist> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let (train_raw, train_labels) = synthetic_raw(count, seed, 0);
    let (test_raw, test_labels) = synthetic_raw((count / 6).max(10), seed, 1);
    from_raw_splits(&train_raw, train_labels, &test_raw, test_labels)
}

/// Deterministic shuffled mini-batches of `0..len`, keyed by `(seed, epoch)`.
/// The last partial batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
