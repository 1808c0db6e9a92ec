use serde::{Deserialize, Serialize};

use crate::datagen::{dequantize, Image};
use crate::numerics::{Rng, Tensor};

use super::{FlowError, FlowModel};

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    64
}
fn default_every() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Constant Adam step size.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Block length of the averaged loss trace.
    #[serde(default = "default_every")]
    pub trace_every: usize,
    /// Rescale the gradient when its global L2 norm exceeds this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Data-dependent ActNorm initialization from the first batch. When off,
    /// training starts from the model's current parameters.
    #[serde(default = "default_true")]
    pub data_init: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size,
            iterations,
            seed,
            trace_every: default_every(),
            clip_norm: None,
            data_init: true,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.iterations == 0 || self.batch_size == 0 || self.trace_every == 0 {
            return Err(FlowError::Config(
                "iterations, batch_size and trace_every must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(FlowError::Config("lr must be positive and betas in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Training losses as mean negative log-likelihood per dimension (nats,
/// continuous density, before the dequantization offset).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub every: usize,
    /// One entry per iteration.
    pub losses: Vec<f64>,
    /// Mean of each consecutive block of `every` iterations.
    pub block_means: Vec<f64>,
}

impl TrainTrace {
    fn new(every: usize) -> Self {
        Self {
            every,
            ..Self::default()
        }
    }

    fn push(&mut self, loss: f64) {
        self.losses.push(loss);
        if self.losses.len() % self.every == 0 {
            let block = &self.losses[self.losses.len() - self.every..];
            self.block_means.push(block.iter().sum::<f64>() / self.every as f64);
        }
    }

    fn finish(&mut self) {
        let rem = self.losses.len() % self.every;
        if rem != 0 {
            let block = &self.losses[self.losses.len() - rem..];
            self.block_means.push(block.iter().sum::<f64>() / rem as f64);
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &FlowModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut FlowModel, grads: &[Tensor], cfg: &TrainConfig) {
        self.t += 1;
        let mut scale = 1.0;
        if let Some(max) = cfg.clip_norm {
            let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
            if norm > max {
                scale = max / norm;
            }
        }
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, p) in model.params_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = grads[k].data()[i] * scale;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                *w -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

fn shuffle(idx: &mut [usize], rng: &mut Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        idx.swap(i, j);
    }
}

fn run(
    model: &mut FlowModel,
    n: usize,
    cfg: &TrainConfig,
    mut make_batch: impl FnMut(&[usize], &mut Rng) -> Tensor,
) -> Result<TrainTrace, FlowError> {
    cfg.validate()?;
    if n == 0 {
        return Err(FlowError::EmptyDataset);
    }
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng);
    let batch = cfg.batch_size.min(n);
    let mut cursor = 0;
    let mut next_batch = |rng: &mut Rng| {
        if cursor + batch > n {
            shuffle(&mut order, rng);
            cursor = 0;
        }
        let idx = order[cursor..cursor + batch].to_vec();
        cursor += batch;
        idx
    };

    let mut adam = Adam::new(model);
    let mut trace = TrainTrace::new(cfg.trace_every);
    for it in 0..cfg.iterations {
        let idx = next_batch(&mut rng);
        let x = make_batch(&idx, &mut rng);
        if cfg.data_init && !model.actnorm_initialized() {
            model.init_actnorm(&x)?;
        }
        let (loss, grads) = match model.nll_and_grad(&x) {
            Ok(v) => v,
            Err(FlowError::NonFinite { .. }) => (f64::NAN, Vec::new()),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            trace.finish();
            return Err(FlowError::Diverged {
                iteration: it,
                loss,
                trace,
            });
        }
        trace.push(loss);
        adam.step(model, &grads, cfg);
    }
    trace.finish();
    Ok(trace)
}

/// Maximizes the mean log-likelihood of freshly dequantized images with Adam.
/// ActNorm is initialized from the first batch unless already initialized
/// or `data_init` is off.
pub fn train(model: &mut FlowModel, images: &[Image], cfg: &TrainConfig) -> Result<TrainTrace, FlowError> {
    let d = model.dim();
    if let Some(bad) = images.iter().find(|im| im.dim() != d) {
        return Err(FlowError::DimMismatch {
            expected: d,
            found: bad.dim(),
        });
    }
    run(model, images.len(), cfg, |idx, rng| {
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend(dequantize(&images[i], rng).values);
        }
        Tensor::new(vec![idx.len(), d], data).unwrap()
    })
}

/// As [`train`] for already-continuous rows of `data` (`[n, d]`).
pub fn train_continuous(model: &mut FlowModel, data: &Tensor, cfg: &TrainConfig) -> Result<TrainTrace, FlowError> {
    let d = model.dim();
    if data.shape().len() != 2 || data.cols() != d {
        return Err(FlowError::DimMismatch {
            expected: d,
            found: data.cols(),
        });
    }
    run(model, data.rows(), cfg, |idx, _| {
        let mut rows = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            rows.extend_from_slice(data.row(i));
        }
        Tensor::new(vec![idx.len(), d], rows).unwrap()
    })
}
