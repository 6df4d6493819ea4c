//! Local Lipschitz constant of the full gradient along the training trajectory.
//!
//! With `d = w_{k+1} - w_k`, the estimate at step `k` is
//! `max over γ in {δ, 2δ, ..., 1} of ‖∇f(w_k + γd) - ∇f(w_k)‖ / ‖γd‖`,
//! where `∇f` is taken over the entire training set.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::analysis::theory::{estimate_beta, estimate_delta, TheoryParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::SmoothnessConfig;
use crate::harness::trial::{init_pruned_model, BatchStream, StudyPoint, Workload};
use crate::models::Model;
use crate::nn;
use crate::optim::{self, OptimizerState};
use crate::quasirand::Metaparams;

/// Number of candidate step fractions for a given `delta` (10 for δ = 0.1).
pub fn candidate_count(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n = (1.0 / delta).round();
    if (n * delta - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("1/delta must be an integer, got delta = {delta}")));
    }
    Ok(n as usize)
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Hessian-free smoothness estimate between two consecutive iterates.
///
/// `grad_fn` is evaluated once at `w_k` and once per candidate fraction.
pub fn estimate_lipschitz<F>(mut grad_fn: F, w_k: &[f64], w_next: &[f64], delta: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = candidate_count(delta)?;
    if w_k.len() != w_next.len() {
        return Err(Error::Shape {
            expected: vec![w_k.len()],
            got: vec![w_next.len()],
        });
    }
    let d: Vec<f64> = w_next.iter().zip(w_k).map(|(a, b)| a - b).collect();
    let d_norm = norm(d.iter().copied());
    if d_norm == 0.0 {
        return Err(Error::DegenerateStep);
    }
    let g0 = grad_fn(w_k)?;
    let mut best = 0.0f64;
    let mut point = vec![0.0; w_k.len()];
    for i in 1..=n {
        let gamma = i as f64 / n as f64;
        for ((p, w), dj) in point.iter_mut().zip(w_k).zip(&d) {
            *p = w + gamma * dj;
        }
        let g = grad_fn(&point)?;
        let num = norm(g.iter().zip(&g0).map(|(a, b)| a - b));
        best = best.max(num / (gamma * d_norm));
    }
    if !best.is_finite() {
        return Err(Error::NumericOverflow("lipschitz estimate"));
    }
    Ok(best)
}

/// Full-training-set loss and gradient of `model` evaluated at `params`.
pub fn model_grad_at(model: &mut Model, dataset: &Dataset, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    model.set_params(params)?;
    let (loss, g) = nn::full_loss_and_gradient(model, dataset)?;
    Ok((loss, g.into_flat()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSample {
    pub step: u64,
    /// Absent when the update at this step was zero.
    pub lipschitz_hat: Option<f64>,
    /// Full training loss at `w_k`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessTrace {
    pub sparsity: f64,
    pub samples: Vec<SmoothnessSample>,
    /// Full training loss at `w_1`, before any update.
    pub initial_loss: f64,
    /// Full training loss after the last step.
    pub final_loss: f64,
}

impl SmoothnessTrace {
    /// Mean of the present estimates.
    pub fn average(&self) -> Option<f64> {
        let vals: Vec<f64> = self.samples.iter().filter_map(|s| s.lipschitz_hat).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Full training losses seen along the trace, in step order, from `w_1`
    /// through the weights after the last step.
    pub fn loss_history(&self) -> Vec<f64> {
        let mut out = vec![self.initial_loss];
        out.extend(self.samples.iter().map(|s| s.loss));
        out.push(self.final_loss);
        out
    }
}

/// Trains for `steps` updates and estimates smoothness at every multiple of
/// `stride`, giving `floor(steps / stride)` samples. A stride longer than the
/// run gives the single sample at the last step.
pub fn trace_smoothness(
    workload: &Workload,
    point: StudyPoint,
    metaparams: &Metaparams,
    seed: u64,
    steps: u64,
    stride: u64,
    delta: f64,
) -> Result<SmoothnessTrace> {
    workload.check_point(point)?;
    if stride == 0 || steps == 0 {
        return Err(Error::config("trace needs steps >= 1 and stride >= 1"));
    }
    candidate_count(delta)?;
    let opt = workload.optimizer_config(metaparams)?;
    let train = workload.train();
    let (mut model, rng) = init_pruned_model(workload, point.sparsity, seed)?;
    let mut probe = model.clone();
    let mut state = OptimizerState::new(model.param_count());
    let mut batches = BatchStream::new(train.len(), point.batch_size, rng);
    let initial_loss = nn::full_loss_and_gradient(&model, train)?.0;
    let mut samples = Vec::new();
    for k in 1..=steps {
        let (x, y) = train.batch(batches.next_batch());
        let (_, _, grad) = nn::loss_and_gradient(&model, &x, &y)?;
        let measure = k % stride == 0 || (stride > steps && k == steps);
        let before = measure.then(|| model.params().to_vec());
        optim::step(&mut model, &grad, &opt, &mut state)?;
        if let Some(w_k) = before {
            let mut base_loss = None;
            let est = estimate_lipschitz(
                |w| {
                    let (loss, g) = model_grad_at(&mut probe, train, w)?;
                    base_loss.get_or_insert(loss);
                    Ok(g)
                },
                &w_k,
                model.params(),
                delta,
            );
            let (lipschitz_hat, loss) = match est {
                Ok(l) => (Some(l), base_loss.expect("base gradient evaluated")),
                Err(Error::DegenerateStep) => (None, model_grad_at(&mut probe, train, &w_k)?.0),
                Err(e) => return Err(e),
            };
            samples.push(SmoothnessSample {
                step: k,
                lipschitz_hat,
                loss,
            });
        }
    }
    let final_loss = nn::full_loss_and_gradient(&model, train)?.0;
    Ok(SmoothnessTrace {
        sparsity: point.sparsity,
        samples,
        initial_loss,
        final_loss,
    })
}

/// Smoothness trace plus the β and Δ of one sparsity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessMeasurement {
    pub trace: SmoothnessTrace,
    /// β at the pruned initialization over the training set.
    pub beta: f64,
    /// Δ from the trace's full-training-loss history.
    pub delta: f64,
}

impl SmoothnessMeasurement {
    pub fn sparsity(&self) -> f64 {
        self.trace.sparsity
    }

    /// `TheoryParams` with the average L̂, or `None` when every step was degenerate.
    pub fn theory_params(&self) -> Option<TheoryParams> {
        self.trace
            .average()
            .map(|l| TheoryParams::measured(l, self.beta, self.delta))
    }
}

/// Paired runs over `config.sparsities`: every level shares the seed, the
/// pre-pruning weights and the metaparameters.
pub fn measure_smoothness(
    workload: &Workload,
    config: &SmoothnessConfig,
    seed: u64,
) -> Result<Vec<SmoothnessMeasurement>> {
    let mut metaparams = Metaparams::new();
    metaparams.insert("eta_bar".into(), config.eta_bar);
    if let Some(m) = config.momentum {
        metaparams.insert("momentum".into(), m);
    }
    config
        .sparsities
        .par_iter()
        .map(|&s| {
            let point = StudyPoint::new(config.batch_size, s);
            let trace = trace_smoothness(workload, point, &metaparams, seed, config.steps, config.stride, config.delta)?;
            let (model, _) = init_pruned_model(workload, s, seed)?;
            let beta = estimate_beta(&model, workload.train())?;
            let delta = estimate_delta(&trace.loss_history())?;
            Ok(SmoothnessMeasurement { trace, beta, delta })
        })
        .collect()
}
