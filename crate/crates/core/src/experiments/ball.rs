use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{dequantize, DatasetKind, Image};
use crate::flow::{standard_normal_log_density, FlowError, FlowModel};
use crate::numerics::{l2_norm, ln_gamma, log_sum_exp, Rng, Tensor};

use super::stats::{linear_fit, LinearFit};
use super::{derive_seed, eval_rng, stream, write_csv, write_json, ExperimentConfig, ExperimentError, Result};

/// Relative tolerance of the identity-flow control.
pub const CONTROL_TOLERANCE: f64 = 0.02;

/// Attempts per Lipschitz pair before giving up on a source.
const PAIR_RETRIES: usize = 16;

struct Source {
    label: String,
    kappa: usize,
    id: usize,
    c: f64,
    x: Vec<f64>,
}

fn sources(cfg: &ExperimentConfig) -> Result<Vec<Source>> {
    let mut out = Vec::new();
    for &kappa in &cfg.ladder {
        let spec = crate::datagen::DatasetSpec::new(
            DatasetKind::PoolingNoise { kappa },
            cfg.sources_per_kappa,
            cfg.derive(stream::SOURCES + kappa as u64),
        )
        .with_geometry(cfg.side, cfg.channels);
        let label = spec.label();
        let images: Vec<Image> = spec.generate()?;
        let mut rng = eval_rng(cfg, &format!("source/{label}"));
        for (id, im) in images.iter().enumerate() {
            out.push(Source {
                label: label.clone(),
                kappa,
                id,
                c: cfg.compressor.complexity(im)?,
                x: dequantize(im, &mut rng).values,
            });
        }
    }
    Ok(out)
}

/// Uniform draw from the ball of radius `delta` around `center`: a Gaussian
/// direction scaled to `delta·U^{1/d}`.
fn ball_point(center: &[f64], delta: f64, rng: &mut Rng, out: &mut Vec<f64>) {
    let d = center.len();
    let mut g = vec![0.0; d];
    loop {
        rng.fill_normal(&mut g);
        let n = l2_norm(&g);
        if n > 0.0 {
            let r = delta * rng.next_f64().powf(1.0 / d as f64);
            out.extend(center.iter().zip(&g).map(|(c, gi)| c + r * gi / n));
            return;
        }
    }
}

fn ball_points(center: &[f64], delta: f64, n: usize, rng: &mut Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * center.len());
    for _ in 0..n {
        ball_point(center, delta, rng, &mut data);
    }
    Tensor::new(vec![n, center.len()], data).unwrap()
}

/// Decodes every row, with `None` for rows whose inverse overflows.
fn decode_rows(model: &FlowModel, z: &Tensor) -> Result<Vec<Option<Vec<f64>>>> {
    match model.inverse_batch(z) {
        Ok(x) => Ok((0..x.rows()).map(|i| Some(x.row(i).to_vec())).collect()),
        Err(FlowError::NonFinite { .. }) => (0..z.rows())
            .map(|i| match model.inverse(z.row(i)) {
                Ok(x) => Ok(Some(x)),
                Err(FlowError::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            })
            .collect(),
        Err(e) => Err(e.into()),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
}

/// Mean `‖x′ − x‖²` over decoded ball samples, with the number used and
/// dropped.
fn ball_mse(model: &FlowModel, x: &[f64], z: &[f64], delta: f64, n: usize, rng: &mut Rng) -> Result<(f64, usize, usize)> {
    let pts = ball_points(z, delta, n, rng);
    let decoded = decode_rows(model, &pts)?;
    let (mut total, mut used) = (0.0, 0usize);
    for xp in decoded.iter().flatten() {
        total += sq_dist(xp, x);
        used += 1;
    }
    let mse = if used == 0 { f64::NAN } else { total / used as f64 };
    Ok((mse, used, n - used))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallRow {
    pub source: String,
    pub kappa: usize,
    pub source_id: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    pub mse: f64,
    pub used: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaFit {
    pub delta: f64,
    /// `ln MSE` regressed on `C`.
    pub fit: Option<LinearFit>,
    /// Least-squares constant of `MSE = C₁·exp(C)`.
    pub c1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub delta: f64,
    pub mse: f64,
    /// `δ²·d/(d+2)`, the second moment of the uniform ball.
    pub closed_form: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpC2Result {
    pub rows: Vec<BallRow>,
    pub fits: Vec<DeltaFit>,
    /// Identity-flow control, one row per radius.
    pub control: Vec<ControlRow>,
}

impl ExpC2Result {
    pub fn fit_for(&self, delta: f64) -> Option<&DeltaFit> {
        self.fits.iter().find(|f| f.delta == delta)
    }

    pub fn total_dropped(&self) -> usize {
        self.rows.iter().map(|r| r.dropped).sum()
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "exp_c2_mse.csv", &self.rows)?;
        let fits: Vec<FitRow> = self
            .fits
            .iter()
            .map(|f| FitRow {
                delta: f.delta,
                slope: f.fit.map(|v| v.slope),
                intercept: f.fit.map(|v| v.intercept),
                r2: f.fit.map(|v| v.r2),
                n: f.fit.map_or(0, |v| v.n),
                c1: f.c1,
            })
            .collect();
        write_csv(dir, "exp_c2_fit.csv", &fits)?;
        write_csv(dir, "exp_c2_control.csv", &self.control)
    }
}

#[derive(Serialize)]
struct FitRow {
    delta: f64,
    slope: Option<f64>,
    intercept: Option<f64>,
    r2: Option<f64>,
    n: usize,
    c1: f64,
}

fn c1_estimate(points: &[(f64, f64)]) -> f64 {
    // Regression through the origin of MSE on exp(C).
    let num: f64 = points.iter().map(|(c, m)| m * c.exp()).sum();
    let den: f64 = points.iter().map(|(c, _)| (2.0 * c).exp()).sum();
    num / den
}

/// Decodes uniform latent-ball samples around each ladder source and
/// relates the reconstruction MSE to the source's complexity.
pub fn exp_c2_mse_vs_complexity(cfg: &ExperimentConfig, model: &FlowModel) -> Result<ExpC2Result> {
    cfg.validate()?;
    let srcs = sources(cfg)?;
    let mut rows = Vec::new();
    for (si, s) in srcs.iter().enumerate() {
        let (z, _) = model.forward(&s.x)?;
        for (di, &delta) in cfg.deltas.iter().enumerate() {
            let mut rng = Rng::new(derive_seed(cfg.derive(stream::BALL), (si * 64 + di) as u64));
            let (mse, used, dropped) = ball_mse(model, &s.x, &z, delta, cfg.ball_samples, &mut rng)?;
            rows.push(BallRow {
                source: s.label.clone(),
                kappa: s.kappa,
                source_id: s.id,
                c: s.c,
                delta,
                mse,
                used,
                dropped,
            });
        }
    }
    let fits = cfg
        .deltas
        .iter()
        .map(|&delta| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.delta == delta && r.mse.is_finite() && r.mse > 0.0)
                .map(|r| (r.c, r.mse))
                .collect();
            let c: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ln_mse: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            DeltaFit {
                delta,
                fit: linear_fit(&c, &ln_mse),
                c1: c1_estimate(&pts),
            }
        })
        .collect();

    let identity = FlowModel::new(model.config().clone(), model.seed())?;
    let d = model.dim() as f64;
    let first = srcs.first().ok_or_else(|| ExperimentError::Config("empty ladder".into()))?;
    let mut control = Vec::new();
    for (di, &delta) in cfg.deltas.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(cfg.derive(stream::BALL), (1 << 32) + di as u64));
        let (z, _) = identity.forward(&first.x)?;
        let (mse, _, _) = ball_mse(&identity, &first.x, &z, delta, cfg.ball_samples, &mut rng)?;
        let closed_form = delta * delta * d / (d + 2.0);
        let rel_err = (mse - closed_form).abs() / closed_form;
        control.push(ControlRow {
            delta,
            mse,
            closed_form,
            rel_err,
            pass: rel_err < CONTROL_TOLERANCE,
        });
    }
    Ok(ExpC2Result { rows, fits, control })
}

/// One evaluation of `(ε²/L̂²)(1 − P̂) ≤ Ĉ₁·exp(C)`.
///
/// `lipschitz` is the largest sampled ratio `‖z₁ − z₂‖/‖x₁ − x₂‖` over pairs
/// in the latent ball, a heuristic lower bound on the local Lipschitz
/// constant, so the check is a consistency probe and not a proof.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisProbe {
    pub source: String,
    pub kappa: usize,
    pub source_id: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub lipschitz: f64,
    /// Standard-normal mass of the ε-ball around `f(x)`.
    pub ball_prob: f64,
    pub ln_ball_prob: f64,
    pub c1: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub rows: Vec<HypothesisProbe>,
    pub all_hold: bool,
}

#[derive(Serialize)]
struct ProbeSummary<'a> {
    all_hold: bool,
    n: usize,
    note: &'a str,
}

impl ProbeResult {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "probe_hypothesis.csv", &self.rows)?;
        write_json(
            dir,
            "probe_summary.json",
            &ProbeSummary {
                all_hold: self.all_hold,
                n: self.rows.len(),
                note: "lipschitz is the maximum sampled pair ratio, a heuristic lower bound on the local \
                       Lipschitz constant; the inequality check is a consistency probe, not a proof",
            },
        )
    }
}

/// `ln` of the volume of a `d`-ball of radius `r`.
fn ln_ball_volume(d: usize, r: f64) -> f64 {
    let d = d as f64;
    0.5 * d * std::f64::consts::PI.ln() + d * r.ln() - ln_gamma(0.5 * d + 1.0)
}

/// Importance estimate of `P(‖z′ − z‖ < ε)` for `z′ ~ N(0, I)` with the
/// uniform ball as proposal, in log space.
fn ln_ball_mass(z: &[f64], epsilon: f64, n: usize, rng: &mut Rng) -> f64 {
    if epsilon == 0.0 {
        return f64::NEG_INFINITY;
    }
    let d = z.len();
    let pts = ball_points(z, epsilon, n, rng);
    let ln_dens: Vec<f64> = (0..n)
        .map(|i| standard_normal_log_density(pts.row(i).iter().map(|v| v * v).sum(), d))
        .collect();
    (ln_ball_volume(d, epsilon) + log_sum_exp(&ln_dens) - (n as f64).ln()).min(0.0)
}

fn max_pair_ratio(model: &FlowModel, z: &[f64], delta: f64, pairs: usize, rng: &mut Rng) -> Result<f64> {
    let mut best: f64 = 0.0;
    let mut remaining = pairs;
    let mut attempts = 0;
    while remaining > 0 {
        if attempts == PAIR_RETRIES {
            return Err(ExperimentError::Unsupported(format!(
                "{remaining} Lipschitz pairs still degenerate after {PAIR_RETRIES} resampling rounds"
            )));
        }
        attempts += 1;
        let a = ball_points(z, delta, remaining, rng);
        let b = ball_points(z, delta, remaining, rng);
        let (xa, xb) = (decode_rows(model, &a)?, decode_rows(model, &b)?);
        let mut failed = 0;
        for i in 0..remaining {
            match (&xa[i], &xb[i]) {
                (Some(p), Some(q)) if sq_dist(p, q) > 0.0 => {
                    best = best.max((sq_dist(a.row(i), b.row(i)) / sq_dist(p, q)).sqrt());
                }
                _ => failed += 1,
            }
        }
        remaining = failed;
    }
    Ok(best)
}

/// Evaluates the hypothesis inequality for every ladder source and radius,
/// with `ε = epsilon_ratio·δ` and `Ĉ₁` taken from the ball experiment.
pub fn probe_hypothesis(cfg: &ExperimentConfig, model: &FlowModel, c2: &ExpC2Result) -> Result<ProbeResult> {
    cfg.validate()?;
    let srcs = sources(cfg)?;
    let mut rows = Vec::new();
    for (si, s) in srcs.iter().enumerate() {
        let (z, _) = model.forward(&s.x)?;
        for (di, &delta) in cfg.deltas.iter().enumerate() {
            let c1 = c2
                .fit_for(delta)
                .ok_or_else(|| ExperimentError::Config(format!("no ball fit for delta {delta}")))?
                .c1;
            let mut rng = Rng::new(derive_seed(cfg.derive(stream::BALL), (2 << 32) + (si * 64 + di) as u64));
            let epsilon = cfg.epsilon_ratio * delta;
            let lipschitz = max_pair_ratio(model, &z, delta, cfg.pair_samples, &mut rng)?;
            let ln_ball_prob = ln_ball_mass(&z, epsilon, cfg.ball_samples, &mut rng);
            let ball_prob = ln_ball_prob.exp();
            let lhs = epsilon * epsilon / (lipschitz * lipschitz) * (1.0 - ball_prob);
            let rhs = c1 * s.c.exp();
            rows.push(HypothesisProbe {
                source: s.label.clone(),
                kappa: s.kappa,
                source_id: s.id,
                c: s.c,
                delta,
                epsilon,
                lipschitz,
                ball_prob,
                ln_ball_prob,
                c1,
                lhs,
                rhs,
                holds: lhs <= rhs,
            });
        }
    }
    let all_hold = !rows.is_empty() && rows.iter().all(|r| r.holds);
    Ok(ProbeResult { rows, all_hold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_points_stay_inside() {
        let mut rng = Rng::new(4);
        let c = vec![0.5; 10];
        let p = ball_points(&c, 0.3, 500, &mut rng);
        for i in 0..500 {
            assert!(sq_dist(p.row(i), &c).sqrt() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn ball_volume_small_cases() {
        assert!((ln_ball_volume(2, 1.0) - std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((ln_ball_volume(3, 2.0) - (4.0 / 3.0 * std::f64::consts::PI * 8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ball_mass_in_one_dimension() {
        // d = 1, ε-interval around 0: mass = 2Φ(ε) − 1 ≈ 0.3829 for ε = 0.5.
        let mut rng = Rng::new(5);
        let p = ln_ball_mass(&[0.0], 0.5, 200_000, &mut rng).exp();
        assert!((p - 0.382_924_922_548_026).abs() < 2e-3, "{p}");
        assert_eq!(ln_ball_mass(&[0.0], 0.0, 10, &mut rng), f64::NEG_INFINITY);
    }

    #[test]
    fn c1_through_origin() {
        let pts: Vec<(f64, f64)> = [0.0, 1.0, 2.0].iter().map(|&c: &f64| (c, 3.0 * c.exp())).collect();
        assert!((c1_estimate(&pts) - 3.0).abs() < 1e-12);
    }
}
