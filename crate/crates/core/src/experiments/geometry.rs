use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::complexity::Compressor;
use crate::datagen::{dequantization_offset, DatasetSpec, Image};
use crate::flow::{FlowModel, Variant};
use crate::numerics::Rng;
use crate::scores::{complexities, dequantize_batch};

use super::stats::{pearson, spearman};
use super::{derive_seed, label_stream, stream, write_csv, write_json, ExperimentConfig, ExperimentError, Result};

/// Per-image latent geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub dataset: String,
    pub sample_id: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub z_norm: f64,
    pub logdet_nats: f64,
    pub logpz_nats: f64,
}

fn embed(
    model: &FlowModel,
    sets: &[(String, Vec<Image>)],
    compressor: &Compressor,
    eval_seed: u64,
) -> Result<Vec<GeometryRow>> {
    let d = model.dim();
    let mut rows = Vec::new();
    for (label, images) in sets {
        let mut rng = Rng::new(derive_seed(eval_seed, label_stream(label)));
        let x = dequantize_batch(images, &mut rng);
        let out = model.forward_batch(&x)?;
        let cs = complexities(images, compressor)?;
        for (i, &c) in cs.iter().enumerate() {
            let sq: f64 = out.z.row(i).iter().map(|v| v * v).sum();
            rows.push(GeometryRow {
                dataset: label.clone(),
                sample_id: i,
                c,
                z_norm: sq.sqrt(),
                logdet_nats: out.logdet[i] + dequantization_offset(d),
                logpz_nats: crate::flow::standard_normal_log_density(sq, d),
            });
        }
    }
    Ok(rows)
}

fn generate(specs: &[DatasetSpec]) -> Result<Vec<(String, Vec<Image>)>> {
    specs.iter().map(|s| Ok((s.label(), s.generate()?))).collect()
}

/// `(C, ‖z‖)` for every image of `sets` and the pooled Spearman ρ;
/// `None` when either column is constant.
pub fn complexity_vs_znorm(
    model: &FlowModel,
    sets: &[(String, Vec<Image>)],
    compressor: &Compressor,
    eval_seed: u64,
) -> Result<(Vec<GeometryRow>, Option<f64>)> {
    let rows = embed(model, sets, compressor, eval_seed)?;
    let c: Vec<f64> = rows.iter().map(|r| r.c).collect();
    let zn: Vec<f64> = rows.iter().map(|r| r.z_norm).collect();
    let rho = spearman(&c, &zn);
    Ok((rows, rho))
}

fn require_volume(model: &FlowModel) -> Result<()> {
    if model.variant() == Variant::Additive {
        return Err(ExperimentError::Unsupported(
            "the additive flow has constant volume; the volume experiment needs the affine variant".into(),
        ));
    }
    Ok(())
}

/// `(‖z‖, logdet)` for every image of `sets` and Pearson r of
/// `(−‖z‖², logdet)`. Constant-volume flows are rejected.
pub fn volume_vs_znorm(
    model: &FlowModel,
    sets: &[(String, Vec<Image>)],
    compressor: &Compressor,
    eval_seed: u64,
) -> Result<(Vec<GeometryRow>, Option<f64>)> {
    require_volume(model)?;
    let rows = embed(model, sets, compressor, eval_seed)?;
    let neg_sq: Vec<f64> = rows.iter().map(|r| -r.z_norm * r.z_norm).collect();
    let ld: Vec<f64> = rows.iter().map(|r| r.logdet_nats).collect();
    let r = pearson(&neg_sq, &ld);
    Ok((rows, r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp1Result {
    pub rows: Vec<GeometryRow>,
    pub spearman: Option<f64>,
    /// Same ladder through an untrained (identity) flow.
    pub control_rows: Vec<GeometryRow>,
    pub control_spearman: Option<f64>,
}

#[derive(Serialize)]
struct Exp1Summary {
    spearman_c_znorm: Option<f64>,
    control_spearman_c_znorm: Option<f64>,
    n: usize,
}

impl Exp1Result {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "exp1_scatter.csv", &self.rows)?;
        write_csv(dir, "exp1_control_scatter.csv", &self.control_rows)?;
        write_json(
            dir,
            "exp1_summary.json",
            &Exp1Summary {
                spearman_c_znorm: self.spearman,
                control_spearman_c_znorm: self.control_spearman,
                n: self.rows.len(),
            },
        )
    }
}

/// Complexity against latent norm over the pooling ladder.
pub fn exp1_complexity_vs_znorm(cfg: &ExperimentConfig, model: &FlowModel) -> Result<Exp1Result> {
    cfg.validate()?;
    let sets = generate(&cfg.ladder_specs())?;
    let seed = cfg.derive(stream::EVAL);
    let (rows, spearman) = complexity_vs_znorm(model, &sets, &cfg.compressor, seed)?;
    let identity = FlowModel::new(model.config().clone(), model.seed())?;
    let (control_rows, control_spearman) = complexity_vs_znorm(&identity, &sets, &cfg.compressor, seed)?;
    Ok(Exp1Result {
        rows,
        spearman,
        control_rows,
        control_spearman,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp2Result {
    pub rows: Vec<GeometryRow>,
    pub pearson: Option<f64>,
}

#[derive(Serialize)]
struct Exp2Summary {
    pearson_neg_sq_znorm_logdet: Option<f64>,
    n: usize,
}

impl Exp2Result {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "exp2_scatter.csv", &self.rows)?;
        write_json(
            dir,
            "exp2_summary.json",
            &Exp2Summary {
                pearson_neg_sq_znorm_logdet: self.pearson,
                n: self.rows.len(),
            },
        )
    }
}

/// Volume against latent norm over the In-Dist test images and their
/// manipulations.
pub fn exp2_volume_vs_znorm(cfg: &ExperimentConfig, model: &FlowModel) -> Result<Exp2Result> {
    cfg.validate()?;
    require_volume(model)?;
    let sets = generate(&cfg.manipulated_specs())?;
    let (rows, pearson) = volume_vs_znorm(model, &sets, &cfg.compressor, cfg.derive(stream::EVAL))?;
    Ok(Exp2Result { rows, pearson })
}
