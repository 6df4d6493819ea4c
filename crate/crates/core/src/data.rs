//! Datasets: IDX ingestion, synthetic Gaussian blobs and the validation split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Fraction of the training data held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::Shape {
                expected: vec![labels.len()],
                got: vec![inputs.batch()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.inputs.sample_shape()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Batch tensor and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.gather(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Reinterprets every sample with a new shape of the same length.
    pub fn reshaped(mut self, sample_shape: &[usize]) -> Result<Dataset> {
        if sample_shape == self.sample_shape() {
            return Ok(self);
        }
        let len: usize = sample_shape.iter().product();
        if len != self.inputs.sample_len() {
            return Err(Error::Shape {
                expected: sample_shape.to_vec(),
                got: self.sample_shape().to_vec(),
            });
        }
        let mut shape = vec![self.len()];
        shape.extend_from_slice(sample_shape);
        self.inputs = Tensor::new(shape, self.inputs.into_data())?;
        Ok(self)
    }

    /// Seeded split holding out `floor(fraction * n)` samples (at least one) for validation.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<Split> {
        let n = self.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!("cannot split a dataset of {n} samples")));
        }
        let n_val = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (val, train) = order.split_at(n_val);
        let mut val = val.to_vec();
        let mut train = train.to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok(Split {
            train: self.subset(&train),
            validation: self.subset(&val),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: "unexpected end of header".into(),
        })
}

fn expect_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let got = bytes.len() - header;
    if got != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (header + got.min(expected)) as u64,
            message: format!("payload is {got} bytes, header declares {expected}"),
        });
    }
    Ok(())
}

/// Parses an IDX image file: `(n, rows, cols)` of `u8`, scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    expect_payload(bytes, 16, n * rows * cols, path)?;
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

/// Parses an IDX label file of `u8` class indices.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    expect_payload(bytes, 8, n, path)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an IDX image/label pair. Samples have shape `[1, rows, cols]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let inputs = parse_idx_images(&img_bytes, images)?;
    let labels_v = parse_idx_labels(&lbl_bytes, labels)?;
    if inputs.batch() != labels_v.len() {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {} images", labels_v.len(), inputs.batch()),
        });
    }
    let classes = labels_v.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(inputs, labels_v, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    /// Root-mean-square distance between two blob means, in units of the
    /// per-coordinate noise standard deviation.
    pub separation: f64,
    /// Condition number of the noise covariance `I + a² 11ᵀ`: every sample
    /// adds one shared factor `a u` to all coordinates, with
    /// `a = sqrt((conditioning - 1) / dims)`. 1 keeps the blobs isotropic.
    #[serde(default = "default_conditioning")]
    pub conditioning: f64,
    /// Gaussian blobs per class; a class is an equal-weight mixture of them.
    #[serde(default = "default_clusters")]
    pub clusters: usize,
}

fn default_conditioning() -> f64 {
    1.0
}

fn default_clusters() -> usize {
    1
}

/// Gaussian blobs around random means `m ~ N(0, separation² / (2 dims) I)`,
/// `clusters` per class, with unit noise plus the optional shared factor.
/// Every coordinate has the same marginal scale. Samples cycle through the
/// classes and then through each class's blobs, so the label histogram is
/// exactly uniform.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 || spec.dims == 0 {
        return Err(Error::config(format!(
            "synthetic data needs >= 2 classes and >= 1 dims, got {} classes in {} dims",
            spec.classes, spec.dims
        )));
    }
    if spec.per_class == 0 || spec.clusters == 0 || !(spec.separation >= 0.0) || !(spec.conditioning >= 1.0) {
        return Err(Error::config(
            "synthetic data needs per_class >= 1, clusters >= 1, separation >= 0, conditioning >= 1",
        ));
    }
    let n = spec.classes * spec.per_class;
    let d = spec.dims;
    let spread = spec.separation / (2.0 * d as f64).sqrt();
    let common = ((spec.conditioning - 1.0) / d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // blob `c * clusters + k` is the k-th blob of class c
    let means: Vec<Vec<f64>> = (0..spec.classes * spec.clusters)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spread * z
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.classes;
        let blob = c * spec.clusters + (i / spec.classes) % spec.clusters;
        // isotropic data draws no shared factor, keeping its stream independent of the knob
        let shared = if common > 0.0 {
            let u: f64 = StandardNormal.sample(&mut rng);
            common * u
        } else {
            0.0
        };
        for mean in &means[blob] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(mean + noise + shared);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, spec.classes)
}
