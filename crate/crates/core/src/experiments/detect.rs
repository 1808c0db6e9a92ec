use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::datagen::{corrupt_pixels, DatasetSpec, Image};
use crate::eval::{histograms, report, write_histogram_csv, write_scatter_csv, EvalReport, Pairing};
use crate::flow::TrainTrace;
use crate::gmm::{fit, GmmModel};
use crate::numerics::Rng;
use crate::scores::{
    complexities, dequantize_batch, evaluate, s_calt, s_calt_dev, s_lrb, s_lrg, s_waic, write_score_csv, ScoreRecord,
    CALT, CALT_DEV, GMM, LIKELIHOOD, LRB, LRG, TTL, WAIC,
};

use super::{
    derive_seed, eval_rng, main_flow, stream, train_flow, write_json, write_to, write_traces, ExperimentConfig,
    ExperimentError, Result, Trained,
};

/// Every method of the benchmark, in report order.
pub const METHODS: [&str; 8] = [LIKELIHOOD, CALT, CALT_DEV, TTL, WAIC, LRB, LRG, GMM];

/// The main flow and the competitor models it is compared against.
#[derive(Clone, Debug)]
pub struct Flows {
    pub main: Trained,
    /// Extra WAIC ensemble members (the main flow is the first member).
    pub members: Vec<Trained>,
    /// Trained on pixel-corrupted In-Dist data.
    pub background: Trained,
    /// Trained on the broad mixture.
    pub general: Trained,
}

impl Flows {
    /// Trains whatever is missing; `main` reuses an existing In-Dist flow.
    pub fn train(cfg: &ExperimentConfig, main: Option<Trained>) -> Result<Self> {
        cfg.validate()?;
        let main = match main {
            Some(m) => m,
            None => main_flow(cfg)?,
        };
        let variant = cfg.flow.variant;
        let train_set = cfg.in_dist_train_spec().generate()?;
        let members = (1..cfg.baselines.waic_members)
            .map(|m| train_flow(cfg, &train_set, variant, stream::ENSEMBLE + m as u64))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = Rng::new(cfg.derive(stream::BACKGROUND));
        let corrupted = corrupt_pixels(&train_set, cfg.baselines.lrb_corruption, &mut rng);
        let background = train_flow(cfg, &corrupted, variant, stream::BACKGROUND)?;
        let general = train_flow(cfg, &general_mixture(cfg)?, variant, stream::GENERAL)?;
        Ok(Self {
            main,
            members,
            background,
            general,
        })
    }

    pub fn traces(&self) -> Vec<(String, TrainTrace)> {
        let mut v = vec![("main".to_string(), self.main.trace.clone())];
        for (i, m) in self.members.iter().enumerate() {
            v.push((format!("member-{}", i + 1), m.trace.clone()));
        }
        v.push(("background".into(), self.background.trace.clone()));
        v.push(("general".into(), self.general.trace.clone()));
        v
    }
}

fn general_mixture(cfg: &ExperimentConfig) -> Result<Vec<Image>> {
    let mut all = Vec::new();
    for (i, kind) in cfg.baselines.general.iter().enumerate() {
        let spec = DatasetSpec::new(
            kind.clone(),
            cfg.baselines.general_count,
            derive_seed(cfg.derive(stream::GENERAL), i as u64),
        )
        .with_geometry(cfg.side, cfg.channels);
        all.extend(spec.generate()?);
    }
    Ok(all)
}

#[derive(Clone, Debug)]
pub struct Exp4Result {
    /// In-Dist test and OOD records with every method filled in.
    pub records: Vec<ScoreRecord>,
    pub report: EvalReport,
    pub gmm: GmmModel,
    /// Mean direct CALT on the In-Dist training split.
    pub calt_train_mean: f64,
    pub traces: Vec<(String, TrainTrace)>,
}

#[derive(Serialize)]
struct GmmSummary<'a> {
    features: [&'a str; 2],
    calt_train_mean: f64,
    model: &'a GmmModel,
}

impl Exp4Result {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let score = |e: crate::scores::ScoreError| ExperimentError::from(e);
        let eval = |e: crate::eval::EvalError| ExperimentError::from(e);
        write_to(&dir.join("exp4_scores.csv"), |w| write_score_csv(&self.records, w).map_err(score))?;
        write_to(&dir.join("exp4_report.csv"), |w| self.report.write_csv(w).map_err(eval))?;
        write_to(&dir.join("exp4_scatter.csv"), |w| write_scatter_csv(&self.records, w).map_err(eval))?;
        let mut labels: Vec<String> = Vec::new();
        for r in &self.records {
            if !labels.contains(&r.dataset) {
                labels.push(r.dataset.clone());
            }
        }
        let mut bins = Vec::new();
        for m in [LIKELIHOOD, CALT, TTL] {
            bins.extend(histograms(&self.records, &labels, m, 40));
        }
        write_to(&dir.join("exp4_histograms.csv"), |w| write_histogram_csv(&bins, w).map_err(eval))?;
        write_json(
            dir,
            "exp4_gmm.json",
            &GmmSummary {
                features: ["C", "logpz"],
                calt_train_mean: self.calt_train_mean,
                model: &self.gmm,
            },
        )?;
        write_traces(dir, "exp4_traces.csv", &self.traces)
    }
}

/// Scores `images` with every flow; the dequantization noise is shared so
/// the likelihood ratios compare the same continuous inputs.
fn score_set(cfg: &ExperimentConfig, flows: &Flows, label: &str, images: &[Image]) -> Result<Vec<ScoreRecord>> {
    let cs = complexities(images, &cfg.compressor)?;
    let x = dequantize_batch(images, &mut eval_rng(cfg, label));
    let mut recs = evaluate(&flows.main.model, &x, label, &cs)?;
    let members = flows
        .members
        .iter()
        .map(|m| evaluate(&m.model, &x, label, &cs))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let bg = evaluate(&flows.background.model, &x, label, &cs)?;
    let general = evaluate(&flows.general.model, &x, label, &cs)?;
    for (i, r) in recs.iter_mut().enumerate() {
        let logps: Vec<f64> = std::iter::once(r.logpx_nats)
            .chain(members.iter().map(|m| m[i].logpx_nats))
            .collect();
        let waic = s_waic(&logps)?;
        let lrb = s_lrb(r, &bg[i])?;
        let lrg = s_lrg(r, &general[i])?;
        r.set_score(WAIC, waic);
        r.set_score(LRB, lrb);
        r.set_score(LRG, lrg);
    }
    Ok(recs)
}

/// The detection benchmark: every score on every OOD set against the
/// In-Dist test split, plus the two-feature GMM on `(C, log p(z))`.
pub fn exp4_detection(cfg: &ExperimentConfig, flows: &Flows) -> Result<Exp4Result> {
    cfg.validate()?;
    let in_label = cfg.in_dist_label();
    let ood = cfg.ood_specs();
    let mut seen = BTreeSet::from([in_label.clone()]);
    for s in &ood {
        if !seen.insert(s.label()) {
            return Err(ExperimentError::Config(format!("duplicate dataset label {}", s.label())));
        }
    }

    let train_set = cfg.in_dist_train_spec().generate()?;
    let train_recs = score_set(cfg, flows, "train", &train_set)?;
    let calt_train_mean = train_recs.iter().map(s_calt).sum::<f64>() / train_recs.len() as f64;
    let features: Vec<[f64; 2]> = train_recs.iter().map(|r| [r.c_bits_per_dim, r.logpz_nats]).collect();
    let gmm = fit(&features, &cfg.gmm, &mut Rng::new(cfg.derive(stream::GMM)))?.model;

    let mut records = score_set(cfg, flows, &in_label, &cfg.in_dist_test_spec().generate()?)?;
    for s in &ood {
        records.extend(score_set(cfg, flows, &s.label(), &s.generate()?)?);
    }
    for r in &mut records {
        let dev = s_calt_dev(r, calt_train_mean);
        let g = gmm.log_density(&[r.c_bits_per_dim, r.logpz_nats]);
        r.set_score(CALT_DEV, dev);
        r.set_score(GMM, g);
    }
    let pairing = Pairing {
        in_dist: in_label,
        ood: ood.iter().map(|s| s.label()).collect(),
        methods: METHODS.iter().map(|m| m.to_string()).collect(),
    };
    let report = report(&records, &pairing)?;
    Ok(Exp4Result {
        records,
        report,
        gmm,
        calt_train_mean,
        traces: flows.traces(),
    })
}
