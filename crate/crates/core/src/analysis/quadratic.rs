//! Convex quadratic with additive Gaussian gradient noise, where every
//! constant of the SGD convergence bound is known exactly.
//!
//! `f(w) = ½ Σ λ_j w_j²`. A single-sample stochastic gradient is
//! `∇f(w) + ξ` with `ξ ~ N(0, σ² I)`, so `μ = 1`, `M_G = 1`, `β = d σ²`,
//! `L = max λ_j` and `f_inf = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::optim::{update, OptimizerConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyQuadratic {
    pub curvature: Vec<f64>,
    pub noise_std: f64,
}

impl NoisyQuadratic {
    pub fn new(curvature: Vec<f64>, noise_std: f64) -> Result<Self> {
        if curvature.is_empty() || curvature.iter().any(|&l| !(l > 0.0)) || !(noise_std >= 0.0) {
            return Err(Error::config("quadratic needs positive curvatures and non-negative noise"));
        }
        Ok(NoisyQuadratic { curvature, noise_std })
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }

    pub fn lipschitz(&self) -> f64 {
        self.curvature.iter().copied().fold(0.0, f64::max)
    }

    /// Single-sample variance bound `β = d σ²`.
    pub fn beta(&self) -> f64 {
        self.dim() as f64 * self.noise_std * self.noise_std
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.curvature.iter().zip(w).map(|(l, x)| l * x * x).sum::<f64>()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.curvature.iter().zip(w).map(|(l, x)| l * x).collect()
    }

    /// Runs `steps` SGD updates with batch size `batch` from `w1` and returns
    /// `(1/K) Σ_{k=1..K} ‖∇f(w_k)‖²`.
    pub fn sgd_average_grad_norm(&self, w1: &[f64], eta: f64, batch: usize, steps: u64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // mean of `batch` i.i.d. N(0, σ²) draws
        let noise = Normal::new(0.0, self.noise_std / (batch as f64).sqrt())
            .map_err(|e| Error::config(format!("noise model: {e}")))?;
        let cfg = OptimizerConfig::sgd(eta);
        let mut state = OptimizerState::new(self.dim());
        let mut w = w1.to_vec();
        let mut total = 0.0;
        for _ in 0..steps {
            let mut g = self.gradient(&w);
            total += g.iter().map(|x| x * x).sum::<f64>();
            for gi in &mut g {
                *gi += noise.sample(&mut rng);
            }
            update(&mut w, &g, None, &cfg, &mut state)?;
        }
        Ok(total / steps as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        let q = NoisyQuadratic::new(vec![1.0, 3.0], 0.5).unwrap();
        assert_eq!(q.lipschitz(), 3.0);
        assert_eq!(q.beta(), 0.5);
        assert_eq!(q.value(&[2.0, 1.0]), 0.5 * (4.0 + 3.0));
        assert_eq!(q.gradient(&[2.0, 1.0]), vec![2.0, 3.0]);
    }

    #[test]
    fn noiseless_sgd_converges() {
        let q = NoisyQuadratic::new(vec![1.0, 2.0], 0.0).unwrap();
        let avg = q.sgd_average_grad_norm(&[1.0, 1.0], 0.5, 1, 200, 0).unwrap();
        assert!(avg < 0.05);
    }
}
