//! Coupling-layer normalizing flow with an exact change-of-variables
//! log-density.
//!
//! Each layer is an ActNorm followed by a coupling transform. Coordinates
//! with `(i + layer) % 2 == 0` condition the layer and pass through; the rest
//! are shifted (additive) or scaled and shifted (affine). The affine
//! log-scale is `s_max·tanh(·)`, so every per-coordinate log-scale is bounded
//! by `s_max`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use train::{train, train_continuous, TrainConfig, TrainTrace};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{quantize, Image};
use crate::numerics::{gaussian_sample, grad, Graph, Rng, Tensor, Var};

/// Rows per forward/inverse chunk when evaluating large batches.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("non-finite value in layer {layer} during {stage}")]
    NonFinite { layer: usize, stage: &'static str },
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged {
        iteration: usize,
        loss: f64,
        trace: TrainTrace,
    },
    #[error("expected dimension {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Affine,
    Additive,
}

fn default_layers() -> usize {
    8
}
fn default_hidden() -> usize {
    64
}
fn default_s_max() -> f64 {
    2.0
}
fn default_variant() -> Variant {
    Variant::Affine
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

impl FlowConfig {
    pub fn new(dim: usize, variant: Variant) -> Self {
        Self {
            dim,
            layers: default_layers(),
            hidden: default_hidden(),
            s_max: default_s_max(),
            variant,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.dim == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(FlowError::Config("dim, layers and hidden must be positive".into()));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(FlowError::Config(format!("s_max must be positive, got {}", self.s_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    w3: Tensor,
    b3: Tensor,
}

impl Mlp {
    /// Hidden layers drawn `N(0, 1/fan_in)`; output layer zero so the net
    /// starts at the constant zero map.
    fn new(d: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut dense = |fan_in: usize, fan_out: usize| {
            let mut w = vec![0.0; fan_in * fan_out];
            rng.fill_normal(&mut w);
            let s = 1.0 / (fan_in as f64).sqrt();
            Tensor::new(vec![fan_in, fan_out], w.into_iter().map(|v| v * s).collect()).unwrap()
        };
        let w1 = dense(d, hidden);
        let w2 = dense(hidden, hidden);
        Self {
            w1,
            b1: Tensor::zeros(&[hidden]),
            w2,
            b2: Tensor::zeros(&[hidden]),
            w3: Tensor::zeros(&[hidden, d]),
            b3: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    fn eval(&self, x: &Tensor) -> Tensor {
        let h = x.matmul(&self.w1).add(&self.b1).map(f64::tanh);
        let h = h.matmul(&self.w2).add(&self.b2).map(f64::tanh);
        h.matmul(&self.w3).add(&self.b3)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    /// Absent in the additive variant, where ActNorm only shifts.
    an_log_scale: Option<Tensor>,
    an_bias: Tensor,
    shift: Mlp,
    scale: Option<Mlp>,
    /// 1.0 on conditioning coordinates.
    mask: Tensor,
    /// 1.0 on transformed coordinates.
    inv_mask: Tensor,
}

fn layer_masks(d: usize, layer: usize) -> (Tensor, Tensor) {
    if d == 1 {
        // No coordinate can condition; the nets see a zero input and act as
        // learned constants.
        return (Tensor::zeros(&[1]), Tensor::full(&[1], 1.0));
    }
    let cond: Vec<f64> = (0..d).map(|i| if (i + layer) % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let inv = cond.iter().map(|c| 1.0 - c).collect();
    (Tensor::vector(cond), Tensor::vector(inv))
}

/// Result of a batched forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutput {
    /// `[n, d]` latents.
    pub z: Tensor,
    /// Per-row `log|det J_f(x)|`.
    pub logdet: Vec<f64>,
    /// Largest `|log-scale|` applied by any coupling layer.
    pub max_abs_log_scale: f64,
}

/// Per-sample log-densities in nats; `logpx = logpz + logdet`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProb {
    pub logpx: f64,
    pub logpz: f64,
    pub logdet: f64,
}

/// `log N(z | 0, I)` from the squared norm.
pub fn standard_normal_log_density(sq_norm: f64, d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * sq_norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    cfg: FlowConfig,
    layers: Vec<Layer>,
    actnorm_initialized: bool,
    seed: u64,
}

struct Recorded {
    params: Vec<Var>,
    z: Var,
    logdet: Var,
    max_abs_log_scale: f64,
}

impl FlowModel {
    /// Identity-initialized model: ActNorm is the identity and every
    /// coupling net outputs zero.
    pub fn new(cfg: FlowConfig, seed: u64) -> Result<Self, FlowError> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let d = cfg.dim;
        let layers = (0..cfg.layers)
            .map(|l| {
                let (mask, inv_mask) = layer_masks(d, l);
                let affine = cfg.variant == Variant::Affine;
                Layer {
                    an_log_scale: affine.then(|| Tensor::zeros(&[d])),
                    an_bias: Tensor::zeros(&[d]),
                    shift: Mlp::new(d, cfg.hidden, &mut rng),
                    scale: affine.then(|| Mlp::new(d, cfg.hidden, &mut rng)),
                    mask,
                    inv_mask,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            layers,
            actnorm_initialized: false,
            seed,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    /// Trainable tensors in canonical order: per layer, ActNorm log-scale
    /// (affine only) and bias, then the shift net, then the scale net.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.an_log_scale.iter());
            out.push(&l.an_bias);
            out.extend(l.shift.tensors());
            if let Some(s) = &l.scale {
                out.extend(s.tensors());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.an_log_scale.iter_mut());
            out.push(&mut l.an_bias);
            out.extend(l.shift.tensors_mut());
            if let Some(s) = &mut l.scale {
                out.extend(s.tensors_mut());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Replaces every parameter with `N(0, std²)` draws. Used to exercise
    /// the oracle tests away from the identity initialization.
    pub fn randomize(&mut self, rng: &mut Rng, std: f64) {
        for t in self.params_mut() {
            for v in t.data_mut() {
                *v = std * rng.normal();
            }
        }
        self.actnorm_initialized = true;
    }

    fn check_input(&self, x: &Tensor) -> Result<(), FlowError> {
        let found = if x.shape().len() == 2 { x.cols() } else { x.len() };
        if x.shape().len() != 2 || found != self.cfg.dim {
            return Err(FlowError::DimMismatch {
                expected: self.cfg.dim,
                found,
            });
        }
        Ok(())
    }

    fn record_mlp(g: &mut Graph, mlp: &Mlp, x: Var, as_params: bool, params: &mut Vec<Var>) -> Var {
        let vars: Vec<Var> = mlp
            .tensors()
            .iter()
            .map(|t| {
                if as_params {
                    let v = g.param((*t).clone());
                    params.push(v);
                    v
                } else {
                    g.constant((*t).clone())
                }
            })
            .collect();
        let h = g.matmul(x, vars[0]);
        let h = g.add(h, vars[1]);
        let h = g.tanh(h);
        let h = g.matmul(h, vars[2]);
        let h = g.add(h, vars[3]);
        let h = g.tanh(h);
        let o = g.matmul(h, vars[4]);
        g.add(o, vars[5])
    }

    /// Records layer `l` applied to `h`, returning the output, the per-row
    /// log-det contribution and the largest |log-scale|.
    fn record_layer(
        &self,
        g: &mut Graph,
        l: usize,
        h: Var,
        as_params: bool,
        params: &mut Vec<Var>,
    ) -> (Var, Var, f64) {
        let layer = &self.layers[l];
        let leaf = |g: &mut Graph, t: &Tensor, params: &mut Vec<Var>| {
            if as_params {
                let v = g.param(t.clone());
                params.push(v);
                v
            } else {
                g.constant(t.clone())
            }
        };
        // ActNorm: y = x·exp(s) + b.
        let mut an_logdet = None;
        let mut h = h;
        if let Some(ls) = &layer.an_log_scale {
            let s = leaf(g, ls, params);
            let e = g.exp(s);
            h = g.mul(h, e);
            an_logdet = Some(g.sum(s));
        }
        let b = leaf(g, &layer.an_bias, params);
        h = g.add(h, b);

        let mask = g.constant(layer.mask.clone());
        let inv = g.constant(layer.inv_mask.clone());
        let xa = g.mul(h, mask);
        let t = Self::record_mlp(g, &layer.shift, xa, as_params, params);
        let t = g.mul(t, inv);
        let (y, logdet, max_ls) = match &layer.scale {
            Some(scale_net) => {
                let raw = Self::record_mlp(g, scale_net, xa, as_params, params);
                let th = g.tanh(raw);
                let ls = g.scale(th, self.cfg.s_max);
                let ls = g.mul(ls, inv);
                let max_ls = g.value(ls).max_abs();
                debug_assert!(max_ls <= self.cfg.s_max);
                let e = g.exp(ls);
                let y = g.mul(h, e);
                let y = g.add(y, t);
                let mut ld = g.sum_rows(ls);
                if let Some(a) = an_logdet {
                    ld = g.add(ld, a);
                }
                (y, ld, max_ls)
            }
            None => {
                let y = g.add(h, t);
                let rows = g.value(y).rows();
                let ld = g.constant(Tensor::zeros(&[rows]));
                (y, ld, 0.0)
            }
        };
        (y, logdet, max_ls)
    }

    fn record(&self, g: &mut Graph, x: Var, as_params: bool) -> Result<Recorded, FlowError> {
        let rows = g.value(x).rows();
        let mut params = Vec::new();
        let mut h = x;
        let mut logdet = g.constant(Tensor::zeros(&[rows]));
        let mut max_abs_log_scale: f64 = 0.0;
        for l in 0..self.layers.len() {
            let (y, ld, m) = self.record_layer(g, l, h, as_params, &mut params);
            if !g.value(y).is_finite() || !g.value(ld).is_finite() {
                return Err(FlowError::NonFinite { layer: l, stage: "forward" });
            }
            h = y;
            logdet = g.add(logdet, ld);
            max_abs_log_scale = max_abs_log_scale.max(m);
        }
        Ok(Recorded {
            params,
            z: h,
            logdet,
            max_abs_log_scale,
        })
    }

    /// `z = f(x)` and `log|det J_f(x)|` for every row of `x` (`[n, d]`).
    pub fn forward_batch(&self, x: &Tensor) -> Result<FlowOutput, FlowError> {
        self.check_input(x)?;
        let mut z = Vec::with_capacity(x.len());
        let mut logdet = Vec::with_capacity(x.rows());
        let mut max_abs_log_scale: f64 = 0.0;
        for start in (0..x.rows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(x.rows());
            let chunk = row_range(x, start, end);
            let mut g = Graph::new();
            let xv = g.constant(chunk);
            let rec = self.record(&mut g, xv, false)?;
            z.extend_from_slice(g.value(rec.z).data());
            logdet.extend_from_slice(g.value(rec.logdet).data());
            max_abs_log_scale = max_abs_log_scale.max(rec.max_abs_log_scale);
        }
        if self.cfg.variant == Variant::Additive {
            debug_assert!(logdet.iter().all(|&v| v == 0.0));
        }
        Ok(FlowOutput {
            z: Tensor::new(vec![x.rows(), self.cfg.dim], z).unwrap(),
            logdet,
            max_abs_log_scale,
        })
    }

    /// Single-sample forward.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        let t = Tensor::new(vec![1, x.len()], x.to_vec()).unwrap();
        let out = self.forward_batch(&t)?;
        Ok((out.z.into_data(), out.logdet[0]))
    }

    /// `x = f⁻¹(z)` row-wise.
    pub fn inverse_batch(&self, z: &Tensor) -> Result<Tensor, FlowError> {
        self.check_input(z)?;
        let mut out = Vec::with_capacity(z.len());
        for start in (0..z.rows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(z.rows());
            let mut y = row_range(z, start, end);
            for (l, layer) in self.layers.iter().enumerate().rev() {
                let ya = y.mul(&layer.mask);
                let t = layer.shift.eval(&ya).mul(&layer.inv_mask);
                let mut h = y.sub(&t);
                if let Some(scale_net) = &layer.scale {
                    let ls = scale_net
                        .eval(&ya)
                        .map(|v| -self.cfg.s_max * v.tanh())
                        .mul(&layer.inv_mask);
                    h = h.mul(&ls.map(f64::exp));
                }
                h = h.sub(&layer.an_bias);
                if let Some(s) = &layer.an_log_scale {
                    h = h.mul(&s.map(|v| (-v).exp()));
                }
                if !h.is_finite() {
                    return Err(FlowError::NonFinite { layer: l, stage: "inverse" });
                }
                y = h;
            }
            out.extend_from_slice(y.data());
        }
        Ok(Tensor::new(vec![z.rows(), self.cfg.dim], out).unwrap())
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>, FlowError> {
        let t = Tensor::new(vec![1, z.len()], z.to_vec()).unwrap();
        Ok(self.inverse_batch(&t)?.into_data())
    }

    /// Continuous log-densities of every row of `x`.
    pub fn log_prob_batch(&self, x: &Tensor) -> Result<Vec<LogProb>, FlowError> {
        let out = self.forward_batch(x)?;
        let d = self.cfg.dim;
        Ok((0..x.rows())
            .map(|i| {
                let sq: f64 = out.z.row(i).iter().map(|v| v * v).sum();
                let logpz = standard_normal_log_density(sq, d);
                let logdet = out.logdet[i];
                LogProb {
                    logpx: logpz + logdet,
                    logpz,
                    logdet,
                }
            })
            .collect())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<LogProb, FlowError> {
        let t = Tensor::new(vec![1, x.len()], x.to_vec()).unwrap();
        Ok(self.log_prob_batch(&t)?[0])
    }

    /// Mean negative log-likelihood per dimension over the rows of `x`, and
    /// its gradient with respect to `params()`.
    pub fn nll_and_grad(&self, x: &Tensor) -> Result<(f64, Vec<Tensor>), FlowError> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (loss, params) = self.record_loss(&mut g, xv)?;
        let value = g.value(loss).item();
        let grads = grad(&g, loss, &params).expect("loss is a scalar over leaf params");
        Ok((value, grads))
    }

    pub fn nll(&self, x: &Tensor) -> Result<f64, FlowError> {
        let lp = self.log_prob_batch(x)?;
        Ok(-lp.iter().map(|p| p.logpx).sum::<f64>() / (lp.len() * self.cfg.dim) as f64)
    }

    fn record_loss(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>), FlowError> {
        let n = g.value(x).rows();
        let d = self.cfg.dim;
        let rec = self.record(g, x, true)?;
        let sq = g.mul(rec.z, rec.z);
        let sq = g.sum_rows(sq);
        let half = g.scale(sq, -0.5);
        let logpx = g.add(half, rec.logdet);
        let total = g.sum(logpx);
        // Constant −(d/2)·ln 2π per row folds into the scalar.
        let c = g.constant(Tensor::scalar(-0.5 * d as f64 * (2.0 * PI).ln() * n as f64));
        let total = g.add(total, c);
        let loss = g.scale(total, -1.0 / (n * d) as f64);
        Ok((loss, rec.params))
    }

    /// Data-dependent ActNorm initialization: each layer's ActNorm is set so
    /// that `x` (as seen by that layer) has zero mean and, in the affine
    /// variant, unit variance per coordinate.
    pub fn init_actnorm(&mut self, x: &Tensor) -> Result<(), FlowError> {
        self.check_input(x)?;
        let n = x.rows() as f64;
        let mut g = Graph::new();
        let mut h = g.constant(x.clone());
        for l in 0..self.layers.len() {
            let v = g.value(h);
            let mean = v.sum_cols().scale(1.0 / n);
            let layer = &mut self.layers[l];
            match &mut layer.an_log_scale {
                Some(ls) => {
                    let centered = v.sub(&mean);
                    let var = centered.mul(&centered).sum_cols().scale(1.0 / n);
                    let s = var.map(|v| -v.sqrt().max(1e-4).ln());
                    layer.an_bias = mean.mul(&s.map(f64::exp)).scale(-1.0);
                    *ls = s;
                }
                None => layer.an_bias = mean.scale(-1.0),
            }
            let (y, _, _) = self.record_layer(&mut g, l, h, false, &mut Vec::new());
            if !g.value(y).is_finite() {
                return Err(FlowError::NonFinite { layer: l, stage: "actnorm init" });
            }
            h = y;
        }
        self.actnorm_initialized = true;
        Ok(())
    }

    /// Draws `n` images `x = f⁻¹(z)`, `z ~ N(0, I)`, clamped to `[0, 1]` and
    /// quantized to 8 bits.
    pub fn sample(
        &self,
        rng: &mut Rng,
        n: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Vec<Image>, FlowError> {
        let d = self.cfg.dim;
        if height * width * channels != d {
            return Err(FlowError::DimMismatch {
                expected: d,
                found: height * width * channels,
            });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let z = gaussian_sample(rng, n, d);
        let x = self.inverse_batch(&z)?;
        Ok((0..n)
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().map(|v| v.clamp(0.0, 1.0)).collect();
                quantize(&row, height, width, channels).expect("geometry checked")
            })
            .collect())
    }
}

fn row_range(x: &Tensor, start: usize, end: usize) -> Tensor {
    let c = x.cols();
    Tensor::new(vec![end - start, c], x.data()[start * c..end * c].to_vec()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_init() {
        for variant in [Variant::Affine, Variant::Additive] {
            let m = FlowModel::new(FlowConfig::new(6, variant), 1).unwrap();
            let x = vec![0.1, -0.4, 0.9, 2.0, -3.0, 0.0];
            let (z, ld) = m.forward(&x).unwrap();
            assert_eq!(z, x);
            assert_eq!(ld, 0.0);
            assert_eq!(m.inverse(&x).unwrap(), x);
        }
    }

    #[test]
    fn masks_split_coordinates() {
        for l in 0..4 {
            let (m, inv) = layer_masks(7, l);
            let c: f64 = m.data().iter().sum();
            assert!(c > 0.0 && c < 7.0);
            assert!(m.data().iter().zip(inv.data()).all(|(a, b)| a + b == 1.0));
        }
        let (a, _) = layer_masks(4, 0);
        let (b, _) = layer_masks(4, 1);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x != y));
    }

    #[test]
    fn origin_log_density() {
        let m = FlowModel::new(FlowConfig::new(2, Variant::Affine), 0).unwrap();
        let lp = m.log_prob(&[0.0, 0.0]).unwrap();
        assert!((lp.logpz + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp.logpz + 1.837_877).abs() < 1e-6);
        assert_eq!(lp.logpx, lp.logpz);
        let d = 9;
        let sq = d as f64;
        let expected = -(d as f64 / 2.0) * ((2.0 * PI).ln() + 1.0);
        assert!((standard_normal_log_density(sq, d) - expected).abs() < 1e-12);
    }

    #[test]
    fn known_constant_log_scale_inverse_divides() {
        // One affine layer whose scale net outputs a constant raw value r on
        // every coordinate: log-scale c = s_max·tanh(r) on the transformed half.
        let mut m = FlowModel::new(
            FlowConfig {
                dim: 4,
                layers: 1,
                hidden: 3,
                s_max: 2.0,
                variant: Variant::Affine,
            },
            0,
        )
        .unwrap();
        let r = 0.3f64;
        let c = 2.0 * r.tanh();
        m.layers[0].scale.as_mut().unwrap().b3 = Tensor::full(&[4], r);
        let x = [1.0, 2.0, 3.0, 4.0];
        let (z, ld) = m.forward(&x).unwrap();
        // Layer 0 conditions on even indices.
        assert_eq!(z[0], 1.0);
        assert_eq!(z[2], 3.0);
        assert!((z[1] - 2.0 * c.exp()).abs() < 1e-12);
        assert!((ld - 2.0 * c).abs() < 1e-12);
        let back = m.inverse(&z).unwrap();
        assert!((back[1] - z[1] / c.exp()).abs() < 1e-15);
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = FlowModel::new(FlowConfig::new(3, Variant::Affine), 0).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(FlowError::DimMismatch { .. })));
    }

    #[test]
    fn params_cover_layout() {
        let cfg = FlowConfig {
            dim: 5,
            layers: 2,
            hidden: 4,
            s_max: 2.0,
            variant: Variant::Affine,
        };
        let m = FlowModel::new(cfg.clone(), 0).unwrap();
        let mlp = 5 * 4 + 4 + 4 * 4 + 4 + 4 * 5 + 5;
        assert_eq!(m.num_params(), 2 * (5 + 5 + 2 * mlp));
        let a = FlowModel::new(FlowConfig { variant: Variant::Additive, ..cfg }, 0).unwrap();
        assert_eq!(a.num_params(), 2 * (5 + mlp));
    }
}
