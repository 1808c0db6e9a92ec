//! Full-covariance Gaussian mixture over a 2-D feature, fitted by EM.
//!
//! Features are z-scored with the training mean and population standard
//! deviation before fitting; means and covariances live in that
//! standardized space and scoring applies the same transform.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_sum_exp, Rng};

pub type Feature = [f64; 2];
pub type Cov = [[f64; 2]; 2];

pub const RIDGE: f64 = 1e-6;
const MIN_WEIGHT: f64 = 1e-8;
const MAX_RESTARTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} samples for {k} components, got {n}")]
    TooFewSamples { n: usize, k: usize, needed: usize },
    #[error("K must be at least 1")]
    NoComponents,
    #[error("non-finite feature at row {0}")]
    NonFinite(usize),
    #[error("degenerate component persisted after {0} restarts")]
    Degenerate(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_k() -> usize {
    3
}
fn default_tol() -> f64 {
    1e-4
}
fn default_max_iter() -> usize {
    200
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Feature>,
    pub covariances: Vec<Cov>,
    pub feature_mean: Feature,
    pub feature_std: Feature,
}

/// Fitted model plus the mean per-sample log-likelihood after every E-step.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub model: GmmModel,
    pub trace: Vec<f64>,
    pub restarts: usize,
}

fn det(c: &Cov) -> f64 {
    c[0][0] * c[1][1] - c[0][1] * c[1][0]
}

/// `log N(x | μ, Σ)` for 2-D, or `None` if `Σ` is not positive definite.
fn log_normal(x: &Feature, mu: &Feature, c: &Cov) -> Option<f64> {
    let d = det(c);
    if !(c[0][0] > 0.0 && d > 0.0) {
        return None;
    }
    let (dx, dy) = (x[0] - mu[0], x[1] - mu[1]);
    let maha = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / d;
    Some(-(2.0 * PI).ln() - 0.5 * d.ln() - 0.5 * maha)
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn standardize(&self, f: &Feature) -> Feature {
        [
            (f[0] - self.feature_mean[0]) / self.feature_std[0],
            (f[1] - self.feature_mean[1]) / self.feature_std[1],
        ]
    }

    fn component_logs(&self, s: &Feature) -> Vec<f64> {
        (0..self.k())
            .map(|j| {
                self.weights[j].ln()
                    + log_normal(s, &self.means[j], &self.covariances[j]).expect("fitted covariances are PD")
            })
            .collect()
    }

    /// `log Σ_k π_k N(standardize(f) | μ_k, Σ_k)`; larger means more typical.
    pub fn score(&self, f: &Feature) -> f64 {
        log_sum_exp(&self.component_logs(&self.standardize(f)))
    }

    /// Log-density in the original feature units (includes the Jacobian of
    /// the standardization).
    pub fn log_density(&self, f: &Feature) -> f64 {
        self.score(f) - (self.feature_std[0] * self.feature_std[1]).ln()
    }

    /// Component means mapped back to original units.
    pub fn means_original(&self) -> Vec<Feature> {
        self.means
            .iter()
            .map(|m| {
                [
                    m[0] * self.feature_std[0] + self.feature_mean[0],
                    m[1] * self.feature_std[1] + self.feature_mean[1],
                ]
            })
            .collect()
    }
}

fn standardization(x: &[Feature]) -> (Feature, Feature) {
    let n = x.len() as f64;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for a in 0..2 {
        mean[a] = x.iter().map(|r| r[a]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[a] - mean[a]).powi(2)).sum::<f64>() / n;
        // A constant feature is left unscaled; the ridge keeps it PD.
        std[a] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    (mean, std)
}

fn dist2(a: &Feature, b: &Feature) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// k-means++ seeding: first centre uniform, then proportional to the squared
/// distance to the nearest chosen centre.
fn kmeans_pp(x: &[Feature], k: usize, rng: &mut Rng) -> Vec<Feature> {
    let mut centres = vec![x[rng.below(x.len() as u64) as usize]];
    let mut d2: Vec<f64> = x.iter().map(|p| dist2(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.next_f64() * total;
            let mut pick = x.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.below(x.len() as u64) as usize
        };
        centres.push(x[next]);
        for (i, p) in x.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &x[next]));
        }
    }
    centres
}

/// Weighted M-step from responsibilities `resp[i][j]`.
fn m_step(x: &[Feature], resp: &[Vec<f64>], k: usize) -> Option<(Vec<f64>, Vec<Feature>, Vec<Cov>)> {
    let n = x.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        if nk / n < MIN_WEIGHT {
            return None;
        }
        let mut mu = [0.0; 2];
        for (p, r) in x.iter().zip(resp) {
            mu[0] += r[j] * p[0];
            mu[1] += r[j] * p[1];
        }
        mu = [mu[0] / nk, mu[1] / nk];
        let mut c = [[0.0; 2]; 2];
        for (p, r) in x.iter().zip(resp) {
            let (dx, dy) = (p[0] - mu[0], p[1] - mu[1]);
            c[0][0] += r[j] * dx * dx;
            c[0][1] += r[j] * dx * dy;
            c[1][1] += r[j] * dy * dy;
        }
        c[0][0] = c[0][0] / nk + RIDGE;
        c[1][1] = c[1][1] / nk + RIDGE;
        c[0][1] /= nk;
        c[1][0] = c[0][1];
        if !(c[0][0] > 0.0 && det(&c) > 0.0) {
            return None;
        }
        weights.push(nk / n);
        means.push(mu);
        covs.push(c);
    }
    Some((weights, means, covs))
}

/// One EM run; `None` on a degenerate component.
fn em_once(x: &[Feature], cfg: &FitConfig, rng: &mut Rng) -> Option<(Vec<f64>, Vec<Feature>, Vec<Cov>, Vec<f64>)> {
    let k = cfg.k;
    let centres = kmeans_pp(x, k, rng);
    let resp: Vec<Vec<f64>> = x
        .iter()
        .map(|p| {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b])))
                .unwrap();
            (0..k).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let (mut w, mut mu, mut cov) = m_step(x, &resp, k)?;
    let mut trace = Vec::new();
    let mut resp = resp;
    for _ in 0..cfg.max_iter {
        let mut ll = 0.0;
        for (i, p) in x.iter().enumerate() {
            let logs: Vec<f64> = (0..k).map(|j| w[j].ln() + log_normal(p, &mu[j], &cov[j]).unwrap()).collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..k {
                resp[i][j] = (logs[j] - lse).exp();
            }
        }
        let ll = ll / x.len() as f64;
        let converged = trace.last().is_some_and(|&prev: &f64| ll - prev < cfg.tol);
        trace.push(ll);
        if converged {
            break;
        }
        (w, mu, cov) = m_step(x, &resp, k)?;
    }
    Some((w, mu, cov, trace))
}

/// Fits a `cfg.k`-component mixture. A degenerate component triggers a
/// restart from a derived seed, at most five times.
pub fn fit(features: &[Feature], cfg: &FitConfig, rng: &mut Rng) -> Result<Fit, GmmError> {
    if cfg.k == 0 {
        return Err(GmmError::NoComponents);
    }
    let needed = 10 * cfg.k;
    if features.len() < needed {
        return Err(GmmError::TooFewSamples {
            n: features.len(),
            k: cfg.k,
            needed,
        });
    }
    if let Some(i) = features.iter().position(|f| !f[0].is_finite() || !f[1].is_finite()) {
        return Err(GmmError::NonFinite(i));
    }
    let (feature_mean, feature_std) = standardization(features);
    let x: Vec<Feature> = features
        .iter()
        .map(|f| [(f[0] - feature_mean[0]) / feature_std[0], (f[1] - feature_mean[1]) / feature_std[1]])
        .collect();
    for restart in 0..=MAX_RESTARTS {
        let mut local = if restart == 0 { rng.clone() } else { rng.child(restart as u64) };
        if let Some((weights, means, covariances, trace)) = em_once(&x, cfg, &mut local) {
            *rng = local;
            return Ok(Fit {
                model: GmmModel {
                    weights,
                    means,
                    covariances,
                    feature_mean,
                    feature_std,
                },
                trace,
                restarts: restart,
            });
        }
    }
    Err(GmmError::Degenerate(MAX_RESTARTS))
}
