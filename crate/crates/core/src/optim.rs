//! Stochastic gradient updates `w <- w - eta_k * direction` with SGD, heavy-ball
//! momentum and Nesterov look-ahead, under constant or linearly decaying rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::Gradient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sgd,
    Momentum,
    Nesterov,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Momentum => "momentum",
            Algorithm::Nesterov => "nesterov",
        }
    }

    pub fn uses_momentum(&self) -> bool {
        !matches!(self, Algorithm::Sgd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    LinearDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Steps until the linear decay reaches its floor.
    #[serde(default)]
    pub decay_horizon: u64,
    #[serde(default)]
    pub floor_fraction: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::constant()
    }
}

impl ScheduleSpec {
    pub fn constant() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Constant,
            decay_horizon: 0,
            floor_fraction: 0.0,
        }
    }

    pub fn linear_decay(decay_horizon: u64, floor_fraction: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::LinearDecay,
            decay_horizon,
            floor_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.floor_fraction) {
            return Err(Error::config(format!("floor_fraction must lie in [0, 1), got {}", self.floor_fraction)));
        }
        if self.kind == ScheduleKind::LinearDecay && self.decay_horizon == 0 {
            return Err(Error::config("linear-decay needs decay_horizon >= 1"));
        }
        Ok(())
    }

    /// Learning rate at step `k` (1-based; `k = 0` is treated as 1).
    pub fn eta(&self, eta_bar: f64, k: u64) -> f64 {
        let k = k.max(1);
        match self.kind {
            ScheduleKind::Constant => eta_bar,
            ScheduleKind::LinearDecay => {
                let frac = 1.0 - k as f64 / self.decay_horizon as f64;
                eta_bar * frac.max(self.floor_fraction)
            }
        }
    }

    /// `H = sum_{k=1..steps} eta_k^2`, summed exactly over the schedule.
    pub fn sum_squared(&self, eta_bar: f64, steps: u64) -> f64 {
        (1..=steps).map(|k| self.eta(eta_bar, k).powi(2)).sum()
    }
}

/// Free-function form of [`ScheduleSpec::eta`].
pub fn schedule_eta(spec: &ScheduleSpec, eta_bar: f64, k: u64) -> f64 {
    spec.eta(eta_bar, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub eta_bar: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

impl OptimizerConfig {
    pub fn sgd(eta_bar: f64) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Sgd,
            eta_bar,
            momentum: 0.0,
            schedule: ScheduleSpec::constant(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_bar > 0.0) || !self.eta_bar.is_finite() {
            return Err(Error::config(format!("eta_bar must be positive, got {}", self.eta_bar)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(param_count: usize) -> Self {
        OptimizerState {
            velocity: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one update to a raw parameter vector. `keep` masks coordinates out
/// of the optimisation entirely: their parameter and velocity stay at zero.
pub fn update(
    params: &mut [f64],
    grad: &[f64],
    keep: Option<&[bool]>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    if grad.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::Shape {
            expected: vec![params.len()],
            got: vec![grad.len()],
        });
    }
    let k = state.step + 1;
    let eta = config.schedule.eta(config.eta_bar, k);
    let mu = config.momentum;
    match config.algorithm {
        Algorithm::Sgd => {
            for (w, g) in params.iter_mut().zip(grad) {
                *w -= eta * g;
            }
        }
        Algorithm::Momentum => {
            for ((w, g), v) in params.iter_mut().zip(grad).zip(&mut state.velocity) {
                *v = mu * *v + g;
                *w -= eta * *v;
            }
        }
        Algorithm::Nesterov => {
            for ((w, g), v) in params.iter_mut().zip(grad).zip(&mut state.velocity) {
                *v = mu * *v + g;
                *w -= eta * (g + mu * *v);
            }
        }
    }
    if let Some(keep) = keep {
        for ((w, v), &on) in params.iter_mut().zip(&mut state.velocity).zip(keep) {
            if !on {
                *w = 0.0;
                *v = 0.0;
            }
        }
    }
    state.step = k;
    if !params.iter().all(|w| w.is_finite()) {
        return Err(Error::NumericOverflow("update"));
    }
    Ok(())
}

/// One optimizer step on a model; masked parameters remain exactly zero.
pub fn step(model: &mut Model, grad: &Gradient, config: &OptimizerConfig, state: &mut OptimizerState) -> Result<()> {
    let dense = model.mask().is_dense();
    let (params, bits) = model.params_and_mask();
    let keep = if dense { None } else { Some(bits) };
    update(params, grad.flat(), keep, config, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_schedule_is_flat() {
        let s = ScheduleSpec::constant();
        for k in [0, 1, 10, 40_000] {
            assert_eq!(schedule_eta(&s, 0.3, k), 0.3);
        }
    }

    #[test]
    fn linear_decay_first_step() {
        let s = ScheduleSpec::linear_decay(100, 0.0);
        assert!((s.eta(1.0, 0) - 0.99).abs() < 1e-15);
        assert!((s.eta(1.0, 1) - 0.99).abs() < 1e-15);
        assert_eq!(s.eta(1.0, 100), 0.0);
    }

    #[test]
    fn linear_decay_floor() {
        let s = ScheduleSpec::linear_decay(100, 0.01);
        for k in [100, 101, 5000] {
            assert!((s.eta(2.0, k) - 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_squared_constant() {
        let s = ScheduleSpec::constant();
        assert!((s.sum_squared(0.5, 8) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn one_sgd_step() {
        let mut w = vec![1.0, 1.0];
        let mut state = OptimizerState::new(2);
        update(&mut w, &[2.0, -1.0], None, &OptimizerConfig::sgd(0.1), &mut state).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
        assert!((w[1] - 1.1).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
        let mut c = OptimizerConfig::sgd(0.1);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c.momentum = 0.9;
        assert!(c.validate().is_ok());
        c.schedule = ScheduleSpec::linear_decay(0, 0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_finite_update_signals_overflow() {
        let mut w = vec![1.0];
        let mut state = OptimizerState::new(1);
        let err = update(&mut w, &[f64::MAX], None, &OptimizerConfig::sgd(1e10), &mut state);
        assert!(matches!(err, Err(Error::NumericOverflow(_))));
    }

    #[test]
    fn masked_velocity_stays_zero() {
        let mut w = vec![1.0, 0.0, 2.0];
        let keep = [true, false, true];
        let mut state = OptimizerState::new(3);
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Nesterov,
            momentum: 0.9,
            ..OptimizerConfig::sgd(0.1)
        };
        for _ in 0..5 {
            update(&mut w, &[0.3, 0.7, -0.1], Some(&keep), &cfg, &mut state).unwrap();
        }
        assert_eq!(w[1], 0.0);
        assert_eq!(state.velocity()[1], 0.0);
    }
}
