//! Reference architectures: `simple-mlp` and the `cnn-lite` convolutional stand-in.

use std::borrow::Cow;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::prune::Mask;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Dense ReLU layers. `widths` lists the hidden widths; an empty list is a linear model.
    SimpleMlp,
    /// conv3x3(c1) -> ReLU -> 2x2 mean-pool -> conv3x3(c2) -> ReLU -> global mean-pool -> dense.
    /// `widths` is `[c1, c2]`.
    CnnLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights ~ U(-a, a) with a = sqrt(6 / fan_in); biases zero.
    #[default]
    HeUniform,
    /// Every parameter zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    #[serde(default)]
    pub widths: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Self {
        ModelSpec {
            arch: Architecture::SimpleMlp,
            widths: hidden.to_vec(),
            input_shape: vec![input],
            classes,
            init: InitScheme::HeUniform,
            seed,
        }
    }

    pub fn cnn_lite(input_shape: [usize; 3], channels: [usize; 2], classes: usize, seed: u64) -> Self {
        ModelSpec {
            arch: Architecture::CnnLite,
            widths: channels.to_vec(),
            input_shape: input_shape.to_vec(),
            classes,
            init: InitScheme::HeUniform,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config(format!("class count must be >= 2, got {}", self.classes)));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("layer widths must be >= 1"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::config(format!("invalid input shape {:?}", self.input_shape)));
        }
        match self.arch {
            Architecture::SimpleMlp => {
                if self.input_shape.len() != 1 {
                    return Err(Error::config("simple-mlp expects a flat input shape [features]"));
                }
            }
            Architecture::CnnLite => {
                if self.input_shape.len() != 3 {
                    return Err(Error::config("cnn-lite expects input shape [channels, height, width]"));
                }
                if self.widths.len() != 2 {
                    return Err(Error::config("cnn-lite expects exactly two channel counts"));
                }
                if self.input_shape[1] < 2 || self.input_shape[2] < 2 {
                    return Err(Error::config("cnn-lite needs spatial size of at least 2x2"));
                }
            }
        }
        Ok(())
    }

    /// Layer stack described by this spec.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        self.validate()?;
        let mut layers = Vec::new();
        match self.arch {
            Architecture::SimpleMlp => {
                let mut inputs = self.input_shape[0];
                for &w in &self.widths {
                    layers.push(Layer::Dense { inputs, outputs: w });
                    layers.push(Layer::Relu { len: w });
                    inputs = w;
                }
                layers.push(Layer::Dense {
                    inputs,
                    outputs: self.classes,
                });
            }
            Architecture::CnnLite => {
                let (c, h, w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let (c1, c2) = (self.widths[0], self.widths[1]);
                layers.push(Layer::Conv3x3 {
                    in_channels: c,
                    out_channels: c1,
                    height: h,
                    width: w,
                });
                layers.push(Layer::Relu { len: c1 * h * w });
                layers.push(Layer::MeanPool2 {
                    channels: c1,
                    height: h,
                    width: w,
                });
                let (h2, w2) = (h / 2, w / 2);
                layers.push(Layer::Conv3x3 {
                    in_channels: c1,
                    out_channels: c2,
                    height: h2,
                    width: w2,
                });
                layers.push(Layer::Relu { len: c2 * h2 * w2 });
                layers.push(Layer::GlobalMeanPool {
                    channels: c2,
                    height: h2,
                    width: w2,
                });
                layers.push(Layer::Dense {
                    inputs: c2,
                    outputs: self.classes,
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::config(format!("inconsistent layer shapes: {:?} -> {:?}", pair[0], pair[1])));
            }
        }
        Ok(layers)
    }
}

/// A network with flat parameters and its sparsity mask.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    ranges: Vec<Range<usize>>,
    params: Vec<f64>,
    mask: Mask,
    pruned: bool,
    id: u64,
    generation: u64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            ranges: self.ranges.clone(),
            params: self.params.clone(),
            mask: self.mask.clone(),
            pruned: self.pruned,
            id: next_id(),
            generation: 0,
        }
    }
}

impl Model {
    /// Deterministic construction from `spec.seed`; the mask starts all-ones.
    pub fn build(spec: &ModelSpec) -> Result<Model> {
        let layers = spec.layers()?;
        let mut ranges = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for layer in &layers {
            ranges.push(offset..offset + layer.param_count());
            offset += layer.param_count();
        }
        let mut params = vec![0.0; offset];
        if spec.init == InitScheme::HeUniform {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for (layer, range) in layers.iter().zip(&ranges) {
                let weights = layer.weight_count();
                if weights == 0 {
                    continue;
                }
                let bound = (6.0 / layer.fan_in() as f64).sqrt();
                for p in &mut params[range.start..range.start + weights] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
            ranges,
            mask: Mask::dense(offset),
            params,
            pruned: false,
            id: next_id(),
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter range of each layer in the flat vector.
    pub fn layer_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding batch caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    /// Mutable parameters alongside the read-only mask bits.
    pub(crate) fn params_and_mask(&mut self) -> (&mut [f64], &[bool]) {
        self.generation += 1;
        (&mut self.params, self.mask.bits())
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape {
                expected: vec![self.params.len()],
                got: vec![values.len()],
            });
        }
        self.params_mut().copy_from_slice(values);
        self.enforce_mask();
        Ok(())
    }

    /// Parameters with masked entries forced to zero.
    pub fn effective_params(&self) -> Cow<'_, [f64]> {
        if self.mask.is_dense() {
            return Cow::Borrowed(&self.params);
        }
        Cow::Owned(
            self.params
                .iter()
                .zip(self.mask.bits())
                .map(|(&p, &keep)| if keep { p } else { 0.0 })
                .collect(),
        )
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned
    }

    pub(crate) fn install_mask(&mut self, mask: Mask) {
        self.mask = mask;
        self.pruned = true;
        self.enforce_mask();
    }

    /// Zeroes every masked parameter.
    pub fn enforce_mask(&mut self) {
        if self.mask.is_dense() {
            return;
        }
        self.generation += 1;
        for (p, &keep) in self.params.iter_mut().zip(self.mask.bits()) {
            if !keep {
                *p = 0.0;
            }
        }
    }

    /// Largest absolute value stored at a masked position.
    pub fn masked_leak(&self) -> f64 {
        self.params
            .iter()
            .zip(self.mask.bits())
            .filter(|(_, &keep)| !keep)
            .map(|(p, _)| p.abs())
            .fold(0.0, f64::max)
    }

    pub fn zero_count(&self) -> usize {
        self.params.iter().filter(|&&p| p == 0.0).count()
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub(crate) fn generation(&self) -> u64 {
        self.generation
    }
}
