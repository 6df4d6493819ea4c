//! Least-squares fit of steps-to-result against batch size, `K*(B) ≈ c1 / B + c2`.
//!
//! The fixed-rate and decaying-rate forms share the functional shape; they
//! differ only in what the constants stand for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitForm {
    /// `c1 = Δ L β / (μ² ε²)`, `c2 = Δ / (η̄* μ ε)`.
    FixedLr,
    /// `c̃1 = L H* β / (μ ε̃)`, `c̃2 = Δ / (μ ε̃)`.
    DecayingLr,
}

impl FitForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitForm::FixedLr => "fixed-lr",
            FitForm::DecayingLr => "decaying-lr",
        }
    }

    /// Column labels for the two constants.
    pub fn constant_labels(&self) -> (&'static str, &'static str) {
        match self {
            FitForm::FixedLr => ("c1", "c2"),
            FitForm::DecayingLr => ("c~1", "c~2"),
        }
    }

    pub fn parse(s: &str) -> Option<FitForm> {
        match s {
            "fixed" | "fixed-lr" => Some(FitForm::FixedLr),
            "decay" | "decaying" | "decaying-lr" => Some(FitForm::DecayingLr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub form: FitForm,
    pub c1: f64,
    pub c2: f64,
    /// Root-mean-square relative error over the fitted points.
    pub residual: f64,
    pub points: usize,
}

impl ScalingFit {
    pub fn predict(&self, batch_size: f64) -> f64 {
        self.c1 / batch_size + self.c2
    }

    /// Batch size where the two terms are equal, `c1 / c2`: the knee between
    /// linear scaling and the plateau.
    pub fn critical_batch_size(&self) -> Option<f64> {
        (self.c2 > 0.0).then(|| self.c1 / self.c2)
    }
}

pub fn predict_steps(fit: &ScalingFit, batch_size: f64) -> f64 {
    fit.predict(batch_size)
}

/// RMS of `(ĉ1/B + ĉ2 - K) / K` over the points.
pub fn relative_rms(points: &[(f64, f64)], c1: f64, c2: f64) -> f64 {
    let n = points.len() as f64;
    (points
        .iter()
        .map(|&(b, k)| ((c1 / b + c2 - k) / k).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Sum of squared errors of the unweighted least-squares objective.
pub fn squared_error(points: &[(f64, f64)], c1: f64, c2: f64) -> f64 {
    points.iter().map(|&(b, k)| (c1 / b + c2 - k).powi(2)).sum()
}

/// Ordinary least squares of `K` on `x = 1/B`. A negative coefficient is
/// clamped to zero and the other one refitted alone.
pub fn fit_scaling(points: &[(f64, f64)], form: FitForm) -> Result<ScalingFit> {
    for &(b, k) in points {
        if !(b > 0.0) || !(k > 0.0) || !b.is_finite() || !k.is_finite() {
            return Err(Error::InsufficientData(format!("invalid point (B={b}, K={k})")));
        }
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 distinct batch sizes, got {}",
            distinct.len()
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, p) in xs.iter().zip(points) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (p.1 - y_mean);
    }
    let mut c1 = sxy / sxx;
    let mut c2 = y_mean - c1 * x_mean;
    if c1 < 0.0 {
        c1 = 0.0;
        c2 = y_mean;
    } else if c2 < 0.0 {
        c2 = 0.0;
        let sx2: f64 = xs.iter().map(|x| x * x).sum();
        let sxk: f64 = xs.iter().zip(points).map(|(x, p)| x * p.1).sum();
        c1 = sxk / sx2;
    }
    Ok(ScalingFit {
        form,
        c1,
        c2,
        residual: relative_rms(points, c1, c2),
        points: points.len(),
    })
}

/// Convenience for integer `(B, K*)` tables.
pub fn fit_table(points: &[(usize, u64)], form: FitForm) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(b, k)| (b as f64, k as f64)).collect();
    fit_scaling(&pts, form)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery() {
        let pts: Vec<(f64, f64)> = [2.0, 8.0, 32.0, 128.0].iter().map(|&b| (b, 1000.0 / b + 50.0)).collect();
        let fit = fit_scaling(&pts, FitForm::FixedLr).unwrap();
        assert!((fit.c1 - 1000.0).abs() < 1e-9);
        assert!((fit.c2 - 50.0).abs() < 1e-9);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn two_point_solve() {
        let fit = fit_scaling(&[(1.0, 110.0), (10.0, 20.0)], FitForm::FixedLr).unwrap();
        assert!((fit.c1 - 100.0).abs() < 1e-9);
        assert!((fit.c2 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn needs_two_distinct_batch_sizes() {
        assert!(matches!(
            fit_scaling(&[(4.0, 10.0), (4.0, 12.0)], FitForm::FixedLr),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_scaling(&[(4.0, 0.0), (8.0, 12.0)], FitForm::FixedLr).is_err());
    }

    #[test]
    fn increasing_data_clamps_c1() {
        let fit = fit_scaling(&[(2.0, 10.0), (4.0, 20.0), (8.0, 30.0)], FitForm::FixedLr).unwrap();
        assert_eq!(fit.c1, 0.0);
        assert!((fit.c2 - 20.0).abs() < 1e-12);
        assert!(fit.residual > 0.0);
    }

    #[test]
    fn negative_intercept_clamps_c2() {
        // steeper than 1/B: K = 100/B - 20 would need c2 < 0
        let pts = [(1.0, 80.0), (2.0, 30.0), (4.0, 5.0)];
        let fit = fit_scaling(&pts, FitForm::FixedLr).unwrap();
        assert_eq!(fit.c2, 0.0);
        assert!(fit.c1 > 0.0);
    }

    #[test]
    fn asymptote_and_doubling() {
        let fit = ScalingFit {
            form: FitForm::FixedLr,
            c1: 400.0,
            c2: 25.0,
            residual: 0.0,
            points: 0,
        };
        assert!((predict_steps(&fit, 1e9) - 25.0).abs() <= 400.0 * 1e-9 * (1.0 + 1e-6));
        for b in [1.0, 3.0, 64.0] {
            let lhs = fit.predict(2.0 * b);
            let rhs = fit.predict(b) / 2.0 + fit.c2 / 2.0;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
        }
        assert_eq!(fit.critical_batch_size(), Some(16.0));
    }

    #[test]
    fn form_labels() {
        assert_eq!(FitForm::FixedLr.constant_labels(), ("c1", "c2"));
        assert_eq!(FitForm::DecayingLr.constant_labels(), ("c~1", "c~2"));
        assert_eq!(FitForm::parse("decay"), Some(FitForm::DecayingLr));
        assert_eq!(FitForm::parse("bogus"), None);
    }
}
