//! One training run under fixed metaparameters, classified as complete,
//! incomplete or infeasible.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::config::{OptimizerTemplate, WorkloadConfig};
use crate::models::{Model, ModelSpec};
use crate::nn;
use crate::optim::{self, OptimizerConfig, OptimizerState};
use crate::prune;
use crate::quasirand::Metaparams;

pub const RECORD_SCHEMA: u32 = 1;

/// Samples in the connection-sensitivity batch (capped by the training set size).
pub const SALIENCY_BATCH: usize = 128;

/// A loss this many times the initial validation loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub batch_size: usize,
    pub sparsity: f64,
}

impl StudyPoint {
    pub fn new(batch_size: usize, sparsity: f64) -> Self {
        StudyPoint { batch_size, sparsity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Complete,
    Incomplete,
    Infeasible,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Complete => "complete",
            TrialStatus::Incomplete => "incomplete",
            TrialStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: u64,
    pub error: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: u32,
    pub key: String,
    pub workload: String,
    pub batch_size: usize,
    pub sparsity: f64,
    pub trial_index: usize,
    pub seed: u64,
    pub metaparams: Metaparams,
    pub status: TrialStatus,
    /// First evaluation step at which the goal error was met (complete trials only).
    pub steps_to_goal: Option<u64>,
    pub steps_run: u64,
    pub history: Vec<Evaluation>,
    /// Last validation loss (absent when training diverged).
    pub final_loss: Option<f64>,
}

/// Stable identifier of a trial, used to skip finished work on resume.
pub fn trial_key(workload: &str, point: StudyPoint, trial_index: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(format!(
        "{workload}|{}|{:.6}|{trial_index}|{seed}",
        point.batch_size, point.sparsity
    ));
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// A workload with its data loaded and split.
#[derive(Debug, Clone)]
pub struct Workload {
    pub id: String,
    pub model: ModelSpec,
    pub optimizer: OptimizerTemplate,
    pub goal_error: f64,
    pub eval_interval: u64,
    pub max_steps: u64,
    pub data: Arc<Split>,
}

impl Workload {
    pub fn prepare(config: &WorkloadConfig, base_dir: &std::path::Path) -> Result<Self> {
        config.validate()?;
        let data = config.load_split(base_dir)?;
        Ok(Workload {
            id: config.id.clone(),
            model: config.model.clone(),
            optimizer: config.optimizer.clone(),
            goal_error: config.goal_error,
            eval_interval: config.eval_interval(),
            max_steps: config.max_steps,
            data: Arc::new(data),
        })
    }

    pub fn train(&self) -> &Dataset {
        &self.data.train
    }

    pub fn validation(&self) -> &Dataset {
        &self.data.validation
    }

    /// Optimizer settings for one trial's metaparameters.
    pub fn optimizer_config(&self, metaparams: &Metaparams) -> Result<OptimizerConfig> {
        let eta_bar = *metaparams
            .get("eta_bar")
            .ok_or_else(|| Error::config("metaparameters lack eta_bar"))?;
        let mut schedule = self.optimizer.schedule;
        if let Some(&h) = metaparams.get("decay_horizon") {
            schedule.decay_horizon = h.round().max(1.0) as u64;
        }
        if let Some(&f) = metaparams.get("floor_fraction") {
            schedule.floor_fraction = f;
        }
        let momentum = if self.optimizer.algorithm.uses_momentum() {
            metaparams
                .get("momentum")
                .copied()
                .or(self.optimizer.momentum)
                .ok_or_else(|| Error::config("momentum optimizer without a momentum value"))?
        } else {
            0.0
        };
        let cfg = OptimizerConfig {
            algorithm: self.optimizer.algorithm,
            eta_bar,
            momentum,
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn check_point(&self, point: StudyPoint) -> Result<()> {
        if point.batch_size == 0 || point.batch_size > self.train().len() {
            return Err(Error::config(format!(
                "batch size {} is outside 1..={} (training set size)",
                point.batch_size,
                self.train().len()
            )));
        }
        if !(0.0..1.0).contains(&point.sparsity) {
            return Err(Error::config(format!("sparsity {} outside [0, 1)", point.sparsity)));
        }
        Ok(())
    }
}

/// Epoch-shuffled mini-batches of exactly `batch_size` samples; the short
/// remainder of each epoch is dropped.
pub struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, rng: ChaCha8Rng) -> Self {
        assert!(batch_size >= 1 && batch_size <= n, "batch size must lie in 1..=n");
        BatchStream {
            order: (0..n).collect(),
            cursor: n,
            batch_size,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch_size;
        &self.order[start..self.cursor]
    }
}

/// Builds the model for a trial and prunes it at initialization to `sparsity`.
/// Returns the model and the data-order generator that continues from the saliency draw.
pub fn init_pruned_model(workload: &Workload, sparsity: f64, seed: u64) -> Result<(Model, ChaCha8Rng)> {
    let mut model = Model::build(&workload.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = workload.train();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(SALIENCY_BATCH.min(train.len()));
    let (x, y) = train.batch(&idx);
    prune::prune_at_init(&mut model, &x, &y, sparsity)?;
    Ok((model, rng))
}

enum Stop {
    Goal(u64),
    Budget,
    Diverged,
}

pub fn run_trial(workload: &Workload, point: StudyPoint, metaparams: &Metaparams, seed: u64) -> Result<TrialRecord> {
    run_indexed_trial(workload, point, 0, metaparams, seed)
}

/// Runs one trial. Numeric failures become the infeasible status; only
/// invalid inputs produce an `Err`.
pub fn run_indexed_trial(
    workload: &Workload,
    point: StudyPoint,
    trial_index: usize,
    metaparams: &Metaparams,
    seed: u64,
) -> Result<TrialRecord> {
    workload.check_point(point)?;
    let opt = workload.optimizer_config(metaparams)?;
    let key = trial_key(&workload.id, point, trial_index, seed);

    let mut history = Vec::new();
    let mut steps_run = 0;
    let mut final_loss = None;
    let stop = match init_pruned_model(workload, point.sparsity, seed) {
        Err(Error::NumericOverflow(_)) => Stop::Diverged,
        Err(e) => return Err(e),
        Ok((mut model, rng)) => {
            let mask_before = model.mask().clone();
            let stop = train_until_goal(
                workload,
                point,
                &opt,
                &mut model,
                rng,
                &mut history,
                &mut steps_run,
                &mut final_loss,
            );
            assert_eq!(model.mask(), &mask_before, "mask changed during training");
            assert_eq!(model.masked_leak(), 0.0, "masked parameter became nonzero");
            stop
        }
    };
    let (status, steps_to_goal) = match stop {
        Stop::Goal(k) => (TrialStatus::Complete, Some(k)),
        Stop::Budget => (TrialStatus::Incomplete, None),
        Stop::Diverged => {
            final_loss = None;
            (TrialStatus::Infeasible, None)
        }
    };
    Ok(TrialRecord {
        schema: RECORD_SCHEMA,
        key,
        workload: workload.id.clone(),
        batch_size: point.batch_size,
        sparsity: point.sparsity,
        trial_index,
        seed,
        metaparams: metaparams.clone(),
        status,
        steps_to_goal,
        steps_run,
        history,
        final_loss,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_until_goal(
    workload: &Workload,
    point: StudyPoint,
    opt: &OptimizerConfig,
    model: &mut Model,
    rng: ChaCha8Rng,
    history: &mut Vec<Evaluation>,
    steps_run: &mut u64,
    final_loss: &mut Option<f64>,
) -> Stop {
    let train = workload.train();
    let val = workload.validation();
    let initial_loss = match nn::evaluate(model, val) {
        Ok((l, _)) => l,
        Err(_) => return Stop::Diverged,
    };
    let limit = DIVERGENCE_FACTOR * initial_loss.max(f64::MIN_POSITIVE);
    let mut state = OptimizerState::new(model.param_count());
    let mut batches = BatchStream::new(train.len(), point.batch_size, rng);
    for k in 1..=workload.max_steps {
        let (x, y) = train.batch(batches.next_batch());
        let grad = match nn::loss_and_gradient(model, &x, &y) {
            Ok((loss, _, g)) if loss <= limit => g,
            _ => return Stop::Diverged,
        };
        if optim::step(model, &grad, opt, &mut state).is_err() {
            return Stop::Diverged;
        }
        *steps_run = k;
        if k % workload.eval_interval == 0 {
            let (loss, error) = match nn::evaluate(model, val) {
                Ok(v) if v.0 <= limit => v,
                _ => return Stop::Diverged,
            };
            history.push(Evaluation { step: k, error, loss });
            *final_loss = Some(loss);
            if error <= workload.goal_error {
                return Stop::Goal(k);
            }
        }
    }
    Stop::Budget
}
