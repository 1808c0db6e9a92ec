//! Per-sample out-of-distribution scores.
//!
//! Every score is oriented so that larger means more in-distribution; scores
//! that are natively "larger is more anomalous" are negated here, once.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{ComplexityError, Compressor};
use crate::datagen::{dequantization_offset, dequantize, Image};
use crate::flow::{FlowError, FlowModel, LogProb};
use crate::numerics::{Rng, Tensor};

pub const LIKELIHOOD: &str = "likelihood";
pub const CALT: &str = "calt";
pub const CALT_DEV: &str = "calt_dev";
pub const TTL: &str = "ttl";
pub const WAIC: &str = "waic";
pub const LRB: &str = "lrb";
pub const LRG: &str = "lrg";
pub const GMM: &str = "gmm";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("WAIC needs at least 2 ensemble members, got {0}")]
    EnsembleTooSmall(usize),
    #[error("records disagree on {what}: {left} vs {right}")]
    Mismatch { what: &'static str, left: String, right: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error("csv: {0}")]
    Csv(String),
}

/// One evaluated sample. Log-densities are discrete per-image nats: the
/// dequantization offset `−d·ln 256` is folded into `logdet_nats` as a fixed
/// layer, so `logpx = logpz + logdet` holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: usize,
    pub dataset: String,
    pub dim: usize,
    pub c_bits_per_dim: f64,
    pub logpx_nats: f64,
    pub logpz_nats: f64,
    pub logdet_nats: f64,
    pub z_norm: f64,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreRecord {
    /// Builds the record from a continuous flow evaluation and fills in the
    /// single-model scores (likelihood, CALT, TTL).
    pub fn from_flow(sample_id: usize, dataset: &str, dim: usize, c_bits_per_dim: f64, lp: LogProb, z_norm: f64) -> Self {
        let logdet_nats = lp.logdet + dequantization_offset(dim);
        let mut rec = Self {
            sample_id,
            dataset: dataset.to_string(),
            dim,
            c_bits_per_dim,
            logpx_nats: lp.logpz + logdet_nats,
            logpz_nats: lp.logpz,
            logdet_nats,
            z_norm,
            scores: BTreeMap::new(),
        };
        rec.scores.insert(LIKELIHOOD.into(), s_likelihood(&rec));
        rec.scores.insert(CALT.into(), s_calt(&rec));
        rec.scores.insert(TTL.into(), s_ttl(z_norm, dim));
        rec
    }

    pub fn score(&self, method: &str) -> Option<f64> {
        self.scores.get(method).copied()
    }

    pub fn set_score(&mut self, method: &str, value: f64) {
        self.scores.insert(method.to_string(), value);
    }
}

pub fn s_likelihood(rec: &ScoreRecord) -> f64 {
    rec.logpx_nats
}

/// `logpx/d + C·ln 2`: both terms in nats per dimension.
pub fn s_calt(rec: &ScoreRecord) -> f64 {
    calt_value(rec.logpx_nats, rec.c_bits_per_dim, rec.dim)
}

pub fn calt_value(logpx_nats: f64, c_bits_per_dim: f64, dim: usize) -> f64 {
    logpx_nats / dim as f64 + c_bits_per_dim * std::f64::consts::LN_2
}

/// Deviation form of CALT: `−|S − m|` with `m` the in-distribution training
/// mean of the direct score.
pub fn s_calt_dev(rec: &ScoreRecord, train_mean: f64) -> f64 {
    -(s_calt(rec) - train_mean).abs()
}

/// `−|‖z‖ − √d|`; maximal (zero) exactly on the typical-set radius.
pub fn s_ttl(z_norm: f64, dim: usize) -> f64 {
    -(z_norm - (dim as f64).sqrt()).abs()
}

/// Ensemble mean minus population variance of the members' log-densities.
pub fn s_waic(logps: &[f64]) -> Result<f64, ScoreError> {
    if logps.len() < 2 {
        return Err(ScoreError::EnsembleTooSmall(logps.len()));
    }
    let m = logps.len() as f64;
    let mean = logps.iter().sum::<f64>() / m;
    let var = logps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    Ok(mean - var)
}

fn likelihood_ratio(rec: &ScoreRecord, other: &ScoreRecord) -> Result<f64, ScoreError> {
    if rec.dim != other.dim {
        return Err(ScoreError::Mismatch {
            what: "dimension",
            left: rec.dim.to_string(),
            right: other.dim.to_string(),
        });
    }
    Ok(rec.logpx_nats - other.logpx_nats)
}

/// Likelihood ratio against a background model trained on corrupted data.
pub fn s_lrb(rec: &ScoreRecord, rec_background: &ScoreRecord) -> Result<f64, ScoreError> {
    likelihood_ratio(rec, rec_background)
}

/// Likelihood ratio against a model trained on a broader mixture.
pub fn s_lrg(rec: &ScoreRecord, rec_general: &ScoreRecord) -> Result<f64, ScoreError> {
    likelihood_ratio(rec, rec_general)
}

/// Dequantizes `images` with `rng` into an `[n, d]` tensor.
pub fn dequantize_batch(images: &[Image], rng: &mut Rng) -> Tensor {
    let d = images.first().map_or(0, |i| i.dim());
    let data: Vec<f64> = images.iter().flat_map(|im| dequantize(im, rng).values).collect();
    Tensor::new(vec![images.len(), d], data).expect("images share geometry")
}

/// Scores a batch of images through `model`. `complexities` must hold
/// `C(x)` for each image (see [`complexities`]).
pub fn evaluate(
    model: &FlowModel,
    x: &Tensor,
    dataset: &str,
    complexities: &[f64],
) -> Result<Vec<ScoreRecord>, ScoreError> {
    let out = model.forward_batch(x)?;
    let lps = model.log_prob_batch(x)?;
    let d = model.dim();
    Ok(lps
        .iter()
        .enumerate()
        .map(|(i, lp)| {
            let z_norm = out.z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            ScoreRecord::from_flow(i, dataset, d, complexities[i], *lp, z_norm)
        })
        .collect())
}

pub fn complexities(images: &[Image], compressor: &Compressor) -> Result<Vec<f64>, ScoreError> {
    Ok(images
        .iter()
        .map(|im| compressor.complexity(im))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Long-format score table: one row per (sample, method).
pub fn write_score_csv(records: &[ScoreRecord], w: impl Write) -> Result<(), ScoreError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| ScoreError::Csv(e.to_string());
    wr.write_record(["sample_id", "dataset", "C", "logpx", "logpz", "logdet", "method", "score"])
        .map_err(err)?;
    for r in records {
        for (method, score) in &r.scores {
            wr.write_record([
                r.sample_id.to_string(),
                r.dataset.clone(),
                r.c_bits_per_dim.to_string(),
                r.logpx_nats.to_string(),
                r.logpz_nats.to_string(),
                r.logdet_nats.to_string(),
                method.clone(),
                score.to_string(),
            ])
            .map_err(err)?;
        }
    }
    wr.flush().map_err(|e| ScoreError::Csv(e.to_string()))
}

#[derive(Deserialize)]
struct ScoreRow {
    sample_id: usize,
    dataset: String,
    #[serde(rename = "C")]
    c: f64,
    logpx: f64,
    logpz: f64,
    logdet: f64,
    method: String,
    score: f64,
}

/// Reads a table written by [`write_score_csv`], regrouping rows by
/// `(dataset, sample_id)` in first-seen order. The table does not carry
/// `dim` or `z_norm`; they come back as 0 and NaN.
pub fn read_score_csv(r: impl Read) -> Result<Vec<ScoreRecord>, ScoreError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out: Vec<ScoreRecord> = Vec::new();
    let mut index: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for row in rd.deserialize() {
        let row: ScoreRow = row.map_err(|e| ScoreError::Csv(e.to_string()))?;
        let key = (row.dataset.clone(), row.sample_id);
        let i = *index.entry(key).or_insert_with(|| {
            out.push(ScoreRecord {
                sample_id: row.sample_id,
                dataset: row.dataset.clone(),
                dim: 0,
                c_bits_per_dim: row.c,
                logpx_nats: row.logpx,
                logpz_nats: row.logpz,
                logdet_nats: row.logdet,
                z_norm: f64::NAN,
                scores: BTreeMap::new(),
            });
            out.len() - 1
        });
        out[i].scores.insert(row.method, row.score);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(logpx: f64, c: f64, dim: usize) -> ScoreRecord {
        ScoreRecord {
            sample_id: 0,
            dataset: "t".into(),
            dim,
            c_bits_per_dim: c,
            logpx_nats: logpx,
            logpz_nats: logpx,
            logdet_nats: 0.0,
            z_norm: 0.0,
            scores: BTreeMap::new(),
        }
    }

    #[test]
    fn likelihood_is_identity() {
        assert_eq!(s_likelihood(&rec(-3.0, 0.0, 1)), -3.0);
        assert!(s_likelihood(&rec(-1.0, 0.0, 1)) > s_likelihood(&rec(-2.0, 0.0, 1)));
    }

    #[test]
    fn calt_formula() {
        let s = s_calt(&rec(-5.0 * 10.0, 3.0, 10));
        assert!((s - (-5.0 + 3.0 * 2f64.ln())).abs() < 1e-12);
        assert!((s + 2.9206).abs() < 1e-4);
        assert_eq!(s_calt(&rec(0.0, 0.0, 4)), 0.0);
        assert_eq!(s_calt(&rec(-40.0, 2.0, 8)), s_calt(&rec(-80.0, 2.0, 16)));
        assert_eq!(s_calt_dev(&rec(-40.0, 2.0, 8), s_calt(&rec(-40.0, 2.0, 8))), 0.0);
    }

    #[test]
    fn ttl_values() {
        assert_eq!(s_ttl(3.0, 9), 0.0);
        assert_eq!(s_ttl(0.0, 4), -2.0);
        assert!((3072f64.sqrt() - 55.4).abs() < 0.05);
        assert!(s_ttl(56.0, 3072) < 0.0);
    }

    #[test]
    fn waic_values() {
        assert_eq!(s_waic(&[-2.0, -2.0, -2.0]).unwrap(), -2.0);
        assert_eq!(s_waic(&[-1.0, -3.0]).unwrap(), -3.0);
        assert_eq!(s_waic(&[-1.0]), Err(ScoreError::EnsembleTooSmall(1)));
        let a = s_waic(&[0.5, 1.5, -0.25]).unwrap();
        let b = s_waic(&[10.5, 11.5, 9.75]).unwrap();
        assert!((b - a - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ratios() {
        let a = rec(-7.0, 1.0, 4);
        assert_eq!(s_lrb(&a, &a).unwrap(), 0.0);
        assert_eq!(s_lrg(&a, &rec(-9.0, 1.0, 4)).unwrap(), 2.0);
        assert!(s_lrb(&a, &rec(-9.0, 1.0, 5)).is_err());
    }

    #[test]
    fn score_csv_round_trip() {
        let mut a = rec(-7.25, 1.5, 4);
        a.set_score(LIKELIHOOD, -7.25);
        a.set_score(TTL, -0.125);
        let mut b = rec(-1.0 / 3.0, 0.1, 4);
        b.sample_id = 1;
        b.set_score(LIKELIHOOD, -1.0 / 3.0);
        let mut buf = Vec::new();
        write_score_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let back = read_score_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in back.iter().zip([&a, &b]) {
            assert_eq!((x.sample_id, &x.dataset, &x.scores), (y.sample_id, &y.dataset, &y.scores));
            assert_eq!((x.logpx_nats, x.c_bits_per_dim), (y.logpx_nats, y.c_bits_per_dim));
        }
    }

    #[test]
    fn identity_flow_bookkeeping() {
        let lp = LogProb {
            logpx: -4.0,
            logpz: -4.0,
            logdet: 0.0,
        };
        let r = ScoreRecord::from_flow(3, "x", 2, 1.0, lp, 0.5);
        assert_eq!(r.logpx_nats, r.logpz_nats + r.logdet_nats);
        assert_eq!(r.score(LIKELIHOOD).unwrap(), -4.0 + dequantization_offset(2));
    }
}
