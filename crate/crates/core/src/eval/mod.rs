//! Detection metrics and report tables.
//!
//! The positive class is OOD. Scores arrive oriented "larger is more
//! in-distribution", so [`detection_metrics`] negates them before ranking;
//! that is the only place the flip happens.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scores::ScoreRecord;

pub const PASS_THRESHOLD: f64 = 0.60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{0} score set is empty")]
    Empty(&'static str),
    #[error("NaN score in {0} set")]
    NaN(&'static str),
    #[error("missing (dataset, method) pairs: {0:?}")]
    Missing(Vec<(String, String)>),
    #[error("csv: {0}")]
    Csv(String),
}

fn check(pos: &[f64], neg: &[f64]) -> Result<(), EvalError> {
    if pos.is_empty() {
        return Err(EvalError::Empty("positive"));
    }
    if neg.is_empty() {
        return Err(EvalError::Empty("negative"));
    }
    if pos.iter().any(|v| v.is_nan()) {
        return Err(EvalError::NaN("positive"));
    }
    if neg.iter().any(|v| v.is_nan()) {
        return Err(EvalError::NaN("negative"));
    }
    Ok(())
}

/// `P(pos > neg) + ½·P(pos = neg)` via midranks (Mann–Whitney U).
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the midrank (i+1+j)/2.
        let twice_mid = (i + 1 + j) as u64;
        let block_pos = all[i..j].iter().filter(|e| e.1).count() as u64;
        twice_rank_sum += twice_mid * block_pos;
        i = j;
    }
    let (np, nn) = (pos.len() as u64, neg.len() as u64);
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / 2.0 / (np * nn) as f64)
}

/// Area under the precision–recall curve with step-wise interpolation over
/// descending thresholds; tied scores enter as one block.
pub fn aupr(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let np = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / np;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// AUROC and AUPR for detecting `ood` against `in_dist`, both given as
/// in-distribution-oriented scores.
pub fn detection_metrics(in_dist: &[f64], ood: &[f64]) -> Result<(f64, f64), EvalError> {
    let pos: Vec<f64> = ood.iter().map(|v| -v).collect();
    let neg: Vec<f64> = in_dist.iter().map(|v| -v).collect();
    Ok((auroc(&pos, &neg)?, aupr(&pos, &neg)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub in_dist: String,
    pub ood: String,
    pub method: String,
    pub auroc: f64,
    pub aupr: f64,
    pub pass: bool,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pairing {
    pub in_dist: String,
    pub ood: Vec<String>,
    pub methods: Vec<String>,
}

fn scores_of(records: &[ScoreRecord], dataset: &str, method: &str) -> Option<Vec<f64>> {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| r.dataset == dataset)
        .map(|r| r.score(method))
        .collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then_some(v)
}

/// One row per (ood, method) in the pairing's order.
pub fn report(records: &[ScoreRecord], pairing: &Pairing) -> Result<EvalReport, EvalError> {
    let mut missing = Vec::new();
    let mut table: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ds in std::iter::once(&pairing.in_dist).chain(&pairing.ood) {
        for m in &pairing.methods {
            match scores_of(records, ds, m) {
                Some(v) => {
                    table.insert((ds.clone(), m.clone()), v);
                }
                None => missing.push((ds.clone(), m.clone())),
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::Missing(missing));
    }
    let mut rows = Vec::new();
    for ood in &pairing.ood {
        for m in &pairing.methods {
            let neg = &table[&(pairing.in_dist.clone(), m.clone())];
            let pos = &table[&(ood.clone(), m.clone())];
            let (auroc, aupr) = detection_metrics(neg, pos)?;
            rows.push(ReportRow {
                in_dist: pairing.in_dist.clone(),
                ood: ood.clone(),
                method: m.clone(),
                auroc,
                aupr,
                pass: auroc >= PASS_THRESHOLD,
                n_pos: pos.len(),
                n_neg: neg.len(),
            });
        }
    }
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn get(&self, ood: &str, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.ood == ood && r.method == method)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), EvalError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(|e| EvalError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| EvalError::Csv(e.to_string()))
    }

    pub fn read_csv(r: impl Read) -> Result<Self, EvalError> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<Result<Vec<ReportRow>, _>>()
            .map_err(|e| EvalError::Csv(e.to_string()))?;
        Ok(Self { rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub dataset: String,
    pub method: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Per-dataset histograms of one method's scores over a shared range.
pub fn histograms(records: &[ScoreRecord], datasets: &[String], method: &str, bins: usize) -> Vec<HistogramBin> {
    let all: Vec<f64> = records
        .iter()
        .filter(|r| datasets.contains(&r.dataset))
        .filter_map(|r| r.score(method))
        .filter(|v| v.is_finite())
        .collect();
    if all.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out = Vec::new();
    for ds in datasets {
        let mut counts = vec![0usize; bins];
        for v in records.iter().filter(|r| &r.dataset == ds).filter_map(|r| r.score(method)) {
            if v.is_finite() {
                counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        for (b, &count) in counts.iter().enumerate() {
            out.push(HistogramBin {
                dataset: ds.clone(),
                method: method.to_string(),
                lo: lo + b as f64 * width,
                hi: lo + (b + 1) as f64 * width,
                count,
            });
        }
    }
    out
}

pub fn write_histogram_csv(bins: &[HistogramBin], w: impl Write) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    for b in bins {
        wr.serialize(b).map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    wr.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    dataset: &'a str,
    sample_id: usize,
    #[serde(rename = "C")]
    c: f64,
    z_norm: f64,
    logdet: f64,
}

/// `(C, ‖z‖, logdet)` per sample for scatter plots.
pub fn write_scatter_csv(records: &[ScoreRecord], w: impl Write) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(ScatterRow {
            dataset: &r.dataset,
            sample_id: r.sample_id,
            c: r.c_bits_per_dim,
            z_norm: r.z_norm,
            logdet: r.logdet_nats,
        })
        .map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    wr.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[3.0, 1.0], &[2.0, 0.0]).unwrap(), 0.75);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        // Descending: 3(+) 2(−) 1(+) 0(−): ½·1 + ½·⅔.
        assert!((aupr(&[3.0, 1.0], &[2.0, 0.0]).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        // A full tie is one block at the base rate.
        assert_eq!(aupr(&[1.0], &[1.0, 1.0, 1.0]).unwrap(), 0.25);
    }

    #[test]
    fn in_dist_orientation_is_flipped_once() {
        // OOD scored lower (less in-distribution) is perfectly detected.
        let (a, p) = detection_metrics(&[5.0, 6.0], &[1.0, 2.0]).unwrap();
        assert_eq!((a, p), (1.0, 1.0));
    }
}
