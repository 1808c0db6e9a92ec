use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

use super::{derive_seed, stream, ExperimentConfig, ExperimentError, Lemma2Settings, Result, TailSettings};

/// Relative tolerance of the entropy–MSE identity check.
pub const LEMMA2_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Check {
    pub sigma: f64,
    pub dim: usize,
    pub samples: usize,
    pub empirical_mse: f64,
    /// Differential entropy of `N(x, σ²I)` in nats.
    pub entropy: f64,
    /// `(d / 2πe)·exp(2H/d)`.
    pub identity_rhs: f64,
    pub rel_residual: f64,
    pub pass: bool,
}

/// Monte-Carlo check that the MSE of `N(x, σ²I_d)` around its mean equals
/// `(d / 2πe)·exp(2H/d)`.
pub fn check_lemma2(sigma: f64, dim: usize, samples: usize, rng: &mut Rng) -> Result<Lemma2Check> {
    if !(sigma > 0.0 && sigma.is_finite()) || dim == 0 || samples == 0 {
        return Err(ExperimentError::Config(
            "lemma check needs sigma > 0, dim >= 1 and samples >= 1".into(),
        ));
    }
    // The mean is arbitrary; only the deviations enter.
    let center: Vec<f64> = (0..dim).map(|i| i as f64 / dim as f64).collect();
    let mut g = vec![0.0; dim];
    let mut total = 0.0;
    for _ in 0..samples {
        rng.fill_normal(&mut g);
        total += center
            .iter()
            .zip(&g)
            .map(|(c, gi)| {
                let x = c + sigma * gi;
                (x - c).powi(2)
            })
            .sum::<f64>();
    }
    let empirical_mse = total / samples as f64;
    let d = dim as f64;
    let entropy = 0.5 * d * (2.0 * PI * E * sigma * sigma).ln();
    let identity_rhs = d / (2.0 * PI * E) * (2.0 * entropy / d).exp();
    let rel_residual = (empirical_mse - identity_rhs).abs() / identity_rhs;
    Ok(Lemma2Check {
        sigma,
        dim,
        samples,
        empirical_mse,
        entropy,
        identity_rhs,
        rel_residual,
        pass: rel_residual < LEMMA2_TOLERANCE,
    })
}

/// `1 − 2·exp(−dε²/8)`: lower bound on the standard-normal mass of the
/// annulus `d(1−ε) < ‖z‖² < d(1+ε)`.
pub fn tail_bound(dim: usize, epsilon: f64) -> f64 {
    1.0 - 2.0 * (-(dim as f64) * epsilon * epsilon / 8.0).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundCheck {
    pub dim: usize,
    pub epsilon: f64,
    pub samples: usize,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error at the bound's probability.
    pub std_err: f64,
    pub pass: bool,
}

/// Fraction of `samples` standard-normal draws inside the annulus, compared
/// with [`tail_bound`] less three binomial standard errors.
pub fn check_tail_bound(dim: usize, epsilon: f64, samples: usize, rng: &mut Rng) -> Result<TailBoundCheck> {
    if dim == 0 || samples == 0 || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ExperimentError::Config(
            "tail-bound check needs dim >= 1, samples >= 1 and epsilon in (0, 1)".into(),
        ));
    }
    let d = dim as f64;
    let (lo, hi) = (d * (1.0 - epsilon), d * (1.0 + epsilon));
    let mut g = vec![0.0; dim];
    let mut inside = 0usize;
    for _ in 0..samples {
        rng.fill_normal(&mut g);
        let sq: f64 = g.iter().map(|v| v * v).sum();
        if lo < sq && sq < hi {
            inside += 1;
        }
    }
    let empirical = inside as f64 / samples as f64;
    let bound = tail_bound(dim, epsilon);
    let p = bound.clamp(0.0, 1.0);
    let std_err = (p * (1.0 - p) / samples as f64).sqrt();
    Ok(TailBoundCheck {
        dim,
        epsilon,
        samples,
        empirical,
        bound,
        std_err,
        pass: empirical >= bound - 3.0 * std_err,
    })
}

/// Seed and sizes for the two Gaussian checks, runnable without a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub seed: u64,
    #[serde(default)]
    pub lemma2: Lemma2Settings,
    #[serde(default)]
    pub tail: TailSettings,
}

impl CheckConfig {
    fn rng(&self, which: u64) -> Rng {
        Rng::new(derive_seed(derive_seed(self.seed, stream::GAUSS_CHECKS), which))
    }

    pub fn lemma2(&self) -> Result<Lemma2Check> {
        let s = &self.lemma2;
        check_lemma2(s.sigma, s.dim, s.samples, &mut self.rng(0))
    }

    pub fn tail_bound(&self) -> Result<TailBoundCheck> {
        let s = &self.tail;
        check_tail_bound(s.dim, s.epsilon, s.samples, &mut self.rng(1))
    }
}

impl From<&ExperimentConfig> for CheckConfig {
    fn from(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.seed,
            lemma2: cfg.lemma2.clone(),
            tail: cfg.tail.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_variance_and_scalar_cases() {
        let c = check_lemma2(1.0, 5, 20_000, &mut Rng::new(1)).unwrap();
        assert!((c.identity_rhs - 5.0).abs() < 1e-12);
        assert!(c.pass, "{c:?}");
        let c = check_lemma2(0.3, 1, 50_000, &mut Rng::new(2)).unwrap();
        assert!((c.identity_rhs - 0.09).abs() < 1e-12);
        assert!(c.pass, "{c:?}");
        assert!(check_lemma2(0.0, 1, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn bound_limits() {
        assert!(tail_bound(100_000, 0.99) > 1.0 - 1e-12);
        let c = check_tail_bound(4096, 0.9, 200, &mut Rng::new(3)).unwrap();
        assert_eq!(c.empirical, 1.0);
        assert!(c.pass);
        assert!(check_tail_bound(4, 1.0, 10, &mut Rng::new(0)).is_err());
    }
}
