//! Pruning at initialization by connection sensitivity.
//!
//! The saliency of parameter `j` is `|g_j * w_j|`, normalised to sum to one,
//! where `g` is the mini-batch gradient at initialization. The top
//! `m - floor(s * m)` parameters are kept, ranked globally across layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn;
use crate::tensor::Tensor;

/// Binary keep-mask over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    bits: Vec<bool>,
    sparsity: f64,
}

impl Mask {
    pub fn dense(len: usize) -> Self {
        Mask {
            bits: vec![true; len],
            sparsity: 0.0,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let m = bits.len();
        let pruned = bits.iter().filter(|&&b| !b).count();
        let sparsity = if m == 0 { 0.0 } else { pruned as f64 / m as f64 };
        Mask { bits, sparsity }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Requested sparsity level (for top-k masks) or realised pruned fraction.
    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_dense(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

/// Number of parameters removed at sparsity `s`: `floor(s * m)`.
///
/// A relative slack of 1e-9 absorbs decimal rounding, so that e.g.
/// `s = 0.29, m = 100` prunes 29 rather than 28.
pub fn pruned_count(sparsity: f64, m: usize) -> usize {
    let exact = sparsity * m as f64;
    ((exact + exact.abs() * 1e-9 + 1e-12).floor() as usize).min(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVector {
    values: Vec<f64>,
}

impl SaliencyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("saliency values must be finite and non-negative"));
        }
        Ok(SaliencyVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Saliency `|g_j w_j| / sum_i |g_i w_i|` from one mini-batch gradient.
pub fn connection_sensitivity(model: &Model, inputs: &Tensor, targets: &[usize]) -> Result<SaliencyVector> {
    if inputs.batch() == 0 {
        return Err(Error::InsufficientData("saliency batch is empty".into()));
    }
    let (_, _, grad) = nn::loss_and_gradient(model, inputs, targets)?;
    saliency_from(model.params(), grad.flat())
}

/// Normalised `|g ⊙ w|`; all zeros when the normaliser vanishes.
pub fn saliency_from(params: &[f64], grad: &[f64]) -> Result<SaliencyVector> {
    let mut values: Vec<f64> = params.iter().zip(grad).map(|(w, g)| (g * w).abs()).collect();
    let total: f64 = values.iter().sum();
    if !total.is_finite() {
        return Err(Error::NumericOverflow("saliency"));
    }
    if total > 0.0 {
        for v in &mut values {
            *v /= total;
        }
    }
    Ok(SaliencyVector { values })
}

/// Keeps the `m - floor(s * m)` most salient entries; ties go to the lower index.
pub fn topk_mask(saliency: &SaliencyVector, sparsity: f64) -> Result<Mask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::config(format!("sparsity must lie in [0, 1), got {sparsity}")));
    }
    let m = saliency.len();
    let keep = m - pruned_count(sparsity, m);
    let mut order: Vec<usize> = (0..m).collect();
    let v = saliency.values();
    // total_cmp is a total order on the (finite, non-negative) scores
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut bits = vec![false; m];
    for &i in &order[..keep] {
        bits[i] = true;
    }
    Ok(Mask { bits, sparsity })
}

/// Installs `mask` on the model and zeroes the masked parameters.
pub fn apply_mask(model: &mut Model, mask: Mask) -> Result<()> {
    if mask.len() != model.param_count() {
        return Err(Error::config(format!(
            "mask has {} entries for a model with {} parameters",
            mask.len(),
            model.param_count()
        )));
    }
    model.install_mask(mask);
    Ok(())
}

/// Saliency on the given batch, then top-k at `sparsity`, applied to an untrained model.
pub fn prune_at_init(model: &mut Model, inputs: &Tensor, targets: &[usize], sparsity: f64) -> Result<Mask> {
    if model.is_pruned() {
        return Err(Error::config("model is already pruned"));
    }
    let mask = if sparsity == 0.0 {
        Mask {
            bits: vec![true; model.param_count()],
            sparsity: 0.0,
        }
    } else {
        let saliency = connection_sensitivity(model, inputs, targets)?;
        topk_mask(&saliency, sparsity)?
    };
    apply_mask(model, mask.clone())?;
    Ok(mask)
}
