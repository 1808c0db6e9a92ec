//! Experiment pipelines: the complexity and volume trends, the latent-ball
//! MSE law and its hypothesis probe, the Gaussian checks, and the detection
//! benchmark.
//!
//! Every pipeline is a pure function of an [`ExperimentConfig`] (plus, where
//! it saves work, an already trained flow). All randomness is derived from
//! `cfg.seed` through fixed stream ids, so reruns write identical bytes.

mod ball;
mod checks;
mod detect;
mod geometry;
mod stats;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{ComplexityError, Compressor};
use crate::datagen::{DatagenError, DatasetKind, DatasetSpec, Image, Manipulation};
use crate::eval::EvalError;
use crate::flow::{load_checkpoint, train, FlowConfig, FlowError, FlowModel, TrainConfig, TrainTrace, Variant};
use crate::gmm::{FitConfig, GmmError};
use crate::numerics::Rng;
use crate::scores::ScoreError;

pub use ball::{exp_c2_mse_vs_complexity, probe_hypothesis, BallRow, ControlRow, ExpC2Result, HypothesisProbe, ProbeResult};
pub use checks::{check_lemma2, check_tail_bound, tail_bound, CheckConfig, Lemma2Check, TailBoundCheck};
pub use detect::{exp4_detection, Exp4Result, Flows, METHODS};
pub use geometry::{
    complexity_vs_znorm, exp1_complexity_vs_znorm, exp2_volume_vs_znorm, volume_vs_znorm, Exp1Result, Exp2Result,
    GeometryRow,
};
pub use stats::{linear_fit, pearson, spearman, LinearFit};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io(format!("{}: {e}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_s_max")]
    pub s_max: f64,
    #[serde(default)]
    pub variant: Variant,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            layers: d_layers(),
            hidden: d_hidden(),
            s_max: d_s_max(),
            variant: Variant::Affine,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
}

/// Competitor models for the detection benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    /// Ensemble size for WAIC, including the main flow.
    #[serde(default = "d_members")]
    pub waic_members: usize,
    /// Per-pixel corruption probability of the background model's data.
    #[serde(default = "d_corruption")]
    pub lrb_corruption: f64,
    /// Training mixture of the general model.
    #[serde(default = "d_general")]
    pub general: Vec<DatasetKind>,
    #[serde(default = "d_general_count")]
    pub general_count: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            waic_members: d_members(),
            lrb_corruption: d_corruption(),
            general: d_general(),
            general_count: d_general_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma2Settings {
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_lemma_dim")]
    pub dim: usize,
    #[serde(default = "d_lemma_n")]
    pub samples: usize,
}

impl Default for Lemma2Settings {
    fn default() -> Self {
        Self {
            sigma: d_sigma(),
            dim: d_lemma_dim(),
            samples: d_lemma_n(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSettings {
    #[serde(default = "d_tail_dim")]
    pub dim: usize,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_tail_n")]
    pub samples: usize,
}

impl Default for TailSettings {
    fn default() -> Self {
        Self {
            dim: d_tail_dim(),
            epsilon: d_epsilon(),
            samples: d_tail_n(),
        }
    }
}

/// One config drives every experiment; each pipeline reads what it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every sub-seed is derived from it.
    pub seed: u64,
    #[serde(default = "d_side")]
    pub side: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_in_dist")]
    pub in_dist: DatasetKind,
    #[serde(default = "d_n")]
    pub n_train: usize,
    #[serde(default = "d_n")]
    pub n_test: usize,
    /// Images per OOD set.
    #[serde(default = "d_n")]
    pub n_ood: usize,
    /// Independent OOD sets.
    #[serde(default = "d_ood")]
    pub ood: Vec<DatasetKind>,
    /// OOD sets made by manipulating the In-Dist test split.
    #[serde(default = "d_manipulations")]
    pub manipulations: Vec<Manipulation>,
    /// Pooling sizes of the complexity ladder.
    #[serde(default = "d_ladder")]
    pub ladder: Vec<usize>,
    /// Images per set in the trend experiments.
    #[serde(default = "d_ladder_count")]
    pub ladder_count: usize,
    #[serde(default)]
    pub flow: FlowSettings,
    pub train: TrainSettings,
    /// Load the main flow from here instead of training it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Latent ball radii.
    #[serde(default = "d_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "d_ball_samples")]
    pub ball_samples: usize,
    /// Source images per pooling size in the ball experiment.
    #[serde(default = "d_sources")]
    pub sources_per_kappa: usize,
    /// Pairs per source for the local Lipschitz estimate.
    #[serde(default = "d_pairs")]
    pub pair_samples: usize,
    /// `ε = epsilon_ratio · δ` in the hypothesis probe.
    #[serde(default = "d_eps_ratio")]
    pub epsilon_ratio: f64,
    #[serde(default)]
    pub lemma2: Lemma2Settings,
    #[serde(default)]
    pub tail: TailSettings,
    #[serde(default)]
    pub baselines: BaselineSettings,
    #[serde(default)]
    pub gmm: FitConfig,
    #[serde(default)]
    pub compressor: Compressor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn d_layers() -> usize {
    8
}
fn d_hidden() -> usize {
    64
}
fn d_s_max() -> f64 {
    2.0
}
fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    1e-3
}
fn d_members() -> usize {
    3
}
fn d_corruption() -> f64 {
    0.15
}
fn d_general() -> Vec<DatasetKind> {
    let mut v: Vec<DatasetKind> = [0.0, 1.0, 2.0, 4.0]
        .into_iter()
        .map(|sigma| DatasetKind::GaussTexture { sigma })
        .collect();
    v.extend([2, 8].map(|kappa| DatasetKind::PoolingNoise { kappa }));
    v
}
fn d_general_count() -> usize {
    256
}
fn d_sigma() -> f64 {
    0.5
}
fn d_lemma_dim() -> usize {
    8
}
fn d_lemma_n() -> usize {
    100_000
}
fn d_tail_dim() -> usize {
    1024
}
fn d_epsilon() -> f64 {
    0.2
}
fn d_tail_n() -> usize {
    10_000
}
fn d_side() -> usize {
    16
}
fn d_channels() -> usize {
    1
}
fn d_in_dist() -> DatasetKind {
    DatasetKind::GaussTexture { sigma: 2.0 }
}
fn d_n() -> usize {
    1024
}
fn d_ladder() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}
fn d_ood() -> Vec<DatasetKind> {
    let mut v: Vec<DatasetKind> = d_ladder().into_iter().map(|kappa| DatasetKind::PoolingNoise { kappa }).collect();
    v.extend([1.0, 4.0].map(|sigma| DatasetKind::GaussTexture { sigma }));
    v
}
fn d_manipulations() -> Vec<Manipulation> {
    vec![
        Manipulation::Noise { patches: 4 },
        Manipulation::Noise { patches: 16 },
        Manipulation::Pool { kappa: 2 },
        Manipulation::Pool { kappa: 8 },
    ]
}
fn d_ladder_count() -> usize {
    64
}
fn d_deltas() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}
fn d_ball_samples() -> usize {
    1024
}
fn d_sources() -> usize {
    4
}
fn d_pairs() -> usize {
    512
}
fn d_eps_ratio() -> f64 {
    0.5
}

impl ExperimentConfig {
    /// Desk-scale defaults with the given seed and training length.
    pub fn new(seed: u64, iterations: usize) -> Self {
        Self {
            seed,
            side: d_side(),
            channels: d_channels(),
            in_dist: d_in_dist(),
            n_train: d_n(),
            n_test: d_n(),
            n_ood: d_n(),
            ood: d_ood(),
            manipulations: d_manipulations(),
            ladder: d_ladder(),
            ladder_count: d_ladder_count(),
            flow: FlowSettings::default(),
            train: TrainSettings {
                iterations,
                batch_size: d_batch(),
                lr: d_lr(),
                clip_norm: None,
            },
            checkpoint: None,
            deltas: d_deltas(),
            ball_samples: d_ball_samples(),
            sources_per_kappa: d_sources(),
            pair_samples: d_pairs(),
            epsilon_ratio: d_eps_ratio(),
            lemma2: Lemma2Settings::default(),
            tail: TailSettings::default(),
            baselines: BaselineSettings::default(),
            gmm: FitConfig::default(),
            compressor: Compressor::default(),
            out_dir: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.side * self.side * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.side == 0 || self.channels == 0 {
            return bad("side and channels must be positive");
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_ood == 0 || self.ladder_count == 0 {
            return bad("sample counts must be positive");
        }
        if self.n_ood > self.n_test && !self.manipulations.is_empty() {
            return bad("manipulated sets need n_ood <= n_test");
        }
        if self.ladder_count > self.n_test {
            return bad("ladder_count must not exceed n_test");
        }
        if self.ladder.iter().any(|&k| k == 0) {
            return bad("ladder pooling sizes must be positive");
        }
        if self.deltas.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("deltas must be positive");
        }
        if self.ball_samples == 0 || self.sources_per_kappa == 0 || self.pair_samples == 0 {
            return bad("ball_samples, sources_per_kappa and pair_samples must be positive");
        }
        if !(self.epsilon_ratio >= 0.0 && self.epsilon_ratio.is_finite()) {
            return bad("epsilon_ratio must be non-negative");
        }
        if self.baselines.waic_members < 2 {
            return bad("waic_members must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.baselines.lrb_corruption) {
            return bad("lrb_corruption must lie in [0, 1]");
        }
        if self.baselines.general.is_empty() || self.baselines.general_count == 0 {
            return bad("the general model needs a non-empty mixture");
        }
        self.flow_config(self.flow.variant).validate()?;
        self.train_config(0).validate()?;
        Ok(())
    }

    pub fn flow_config(&self, variant: Variant) -> FlowConfig {
        FlowConfig {
            dim: self.dim(),
            layers: self.flow.layers,
            hidden: self.flow.hidden,
            s_max: self.flow.s_max,
            variant,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut t = TrainConfig::new(self.train.iterations, self.train.batch_size, seed);
        t.lr = self.train.lr;
        t.clip_norm = self.train.clip_norm;
        t
    }

    /// Seed for sub-task `stream`.
    pub fn derive(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    fn spec(&self, kind: DatasetKind, count: usize, stream: u64) -> DatasetSpec {
        DatasetSpec::new(kind, count, self.derive(stream)).with_geometry(self.side, self.channels)
    }

    pub fn in_dist_train_spec(&self) -> DatasetSpec {
        self.spec(self.in_dist.clone(), self.n_train, stream::TRAIN_DATA)
    }

    pub fn in_dist_test_spec(&self) -> DatasetSpec {
        self.spec(self.in_dist.clone(), self.n_test, stream::TEST_DATA)
    }

    /// Name of the In-Dist set in score tables.
    pub fn in_dist_label(&self) -> String {
        self.in_dist_test_spec().label()
    }

    /// Every OOD set of the detection benchmark, in report order.
    pub fn ood_specs(&self) -> Vec<DatasetSpec> {
        let mut v: Vec<DatasetSpec> = self
            .ood
            .iter()
            .enumerate()
            .map(|(i, k)| self.spec(k.clone(), self.n_ood, stream::OOD_DATA + i as u64))
            .collect();
        for (i, m) in self.manipulations.iter().enumerate() {
            let kind = DatasetKind::Manipulated {
                base: Box::new(self.in_dist_test_spec()),
                mode: *m,
            };
            v.push(self.spec(kind, self.n_ood, stream::MANIPULATION + i as u64));
        }
        v
    }

    /// Pooling-ladder sets for the trend experiments.
    pub fn ladder_specs(&self) -> Vec<DatasetSpec> {
        self.ladder
            .iter()
            .map(|&kappa| self.spec(DatasetKind::PoolingNoise { kappa }, self.ladder_count, stream::LADDER + kappa as u64))
            .collect()
    }

    /// In-Dist test images followed by each manipulation of them.
    pub fn manipulated_specs(&self) -> Vec<DatasetSpec> {
        let base = self.in_dist_test_spec();
        let mut v = vec![DatasetSpec {
            count: self.ladder_count,
            ..base.clone()
        }
        .named(base.label())];
        for (i, m) in self.manipulations.iter().enumerate() {
            let kind = DatasetKind::Manipulated {
                base: Box::new(base.clone()),
                mode: *m,
            };
            v.push(self.spec(kind, self.ladder_count, stream::MANIPULATION + i as u64));
        }
        v
    }
}

/// Stream ids for [`ExperimentConfig::derive`].
pub mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const MAIN_FLOW: u64 = 3;
    pub const EVAL: u64 = 5;
    pub const BALL: u64 = 6;
    pub const GAUSS_CHECKS: u64 = 7;
    pub const GMM: u64 = 8;
    pub const BACKGROUND: u64 = 9;
    pub const GENERAL: u64 = 10;
    pub const SOURCES: u64 = 11;
    pub const ENSEMBLE: u64 = 100;
    pub const OOD_DATA: u64 = 1000;
    pub const MANIPULATION: u64 = 2000;
    pub const LADDER: u64 = 3000;
}

/// Splitmix-style mixing of `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-label stream so a dataset is dequantized the same way in
/// every experiment.
pub(crate) fn label_stream(label: &str) -> u64 {
    // FNV-1a.
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// A flow plus the trace of the run that produced it (empty when loaded).
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: FlowModel,
    pub trace: TrainTrace,
}

/// Trains a fresh flow of `variant` on `images`; initialization and
/// training seeds both come from `stream`.
pub fn train_flow(cfg: &ExperimentConfig, images: &[Image], variant: Variant, stream: u64) -> Result<Trained> {
    let base = cfg.derive(stream);
    let mut model = FlowModel::new(cfg.flow_config(variant), derive_seed(base, 0))?;
    let trace = train(&mut model, images, &cfg.train_config(derive_seed(base, 1)))?;
    Ok(Trained { model, trace })
}

/// The main In-Dist flow: loaded from `cfg.checkpoint` or trained.
pub fn main_flow(cfg: &ExperimentConfig) -> Result<Trained> {
    cfg.validate()?;
    match &cfg.checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            if model.dim() != cfg.dim() {
                return Err(FlowError::DimMismatch {
                    expected: cfg.dim(),
                    found: model.dim(),
                }
                .into());
            }
            Ok(Trained {
                model,
                trace: TrainTrace::default(),
            })
        }
        None => {
            let images = cfg.in_dist_train_spec().generate()?;
            train_flow(cfg, &images, cfg.flow.variant, stream::MAIN_FLOW)
        }
    }
}

/// Creates `dir` and writes `value` as pretty JSON to `dir/name`.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
}

/// Serializes `rows` as CSV to `dir/name`.
pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

#[derive(Serialize)]
struct TraceRow<'a> {
    model: &'a str,
    block: usize,
    iterations: usize,
    mean_nll_per_dim: f64,
}

/// Block-averaged loss traces of several models in one CSV.
pub fn write_traces(dir: &Path, name: &str, traces: &[(String, TrainTrace)]) -> Result<()> {
    let mut rows = Vec::new();
    for (model, t) in traces {
        for (b, &m) in t.block_means.iter().enumerate() {
            rows.push(TraceRow {
                model,
                block: b,
                iterations: ((b + 1) * t.every).min(t.losses.len()),
                mean_nll_per_dim: m,
            });
        }
    }
    write_csv(dir, name, &rows)
}

pub(crate) fn write_to(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub(crate) fn eval_rng(cfg: &ExperimentConfig, label: &str) -> Rng {
    Rng::new(derive_seed(cfg.derive(stream::EVAL), label_stream(label)))
}
