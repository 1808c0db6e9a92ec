use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use flowood::complexity::Compressor;
use flowood::datagen::{write_dataset, DatasetSpec};
use flowood::eval::{report, Pairing};
use flowood::experiments::{
    self, derive_seed, exp1_complexity_vs_znorm, exp2_volume_vs_znorm, exp4_detection, exp_c2_mse_vs_complexity,
    main_flow, probe_hypothesis, stream, write_json, write_traces, CheckConfig, ExperimentConfig, Flows, Lemma2Settings,
    TailSettings, Trained,
};
use flowood::flow::{load_checkpoint, save_checkpoint};
use flowood::numerics::Rng;
use flowood::scores::{complexities, dequantize_batch, evaluate, read_score_csv, write_score_csv, ScoreRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::{FileHash, RunManifest};
use crate::{CommonArgs, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};

type Job = Box<dyn FnOnce(&Path) -> Result<(), String>>;

/// Everything decided before any work starts.
struct Prepared {
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    out_dir: Option<PathBuf>,
    job: Job,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub checkpoint: PathBuf,
    pub datasets: Vec<DatasetSpec>,
    /// Seeds the per-dataset dequantization noise.
    pub seed: u64,
    #[serde(default)]
    pub compressor: Compressor,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Score tables as written by `score` or `exp4`.
    pub scores: Vec<PathBuf>,
    pub pairing: Pairing,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksFile {
    pub seed: u64,
    #[serde(default)]
    pub lemma2: Lemma2Settings,
    #[serde(default)]
    pub tail: TailSettings,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            format!("config: {}", e.inner())
        } else {
            format!("config: at `{path}`: {}", e.inner())
        }
    })
}

fn echo<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn unique_labels(specs: &[DatasetSpec]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for s in specs {
        if !seen.insert(s.label()) {
            return Err(format!("duplicate dataset label `{}`", s.label()));
        }
    }
    Ok(())
}

fn rt(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn dispatch(name: &str, args: &CommonArgs) -> u8 {
    let bytes = match std::fs::read(&args.config) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return EXIT_INVALID;
        }
    };
    let prepared = match prepare(name, &bytes, args.seed) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_INVALID;
        }
    };
    let Some(out) = args.out.clone().or(prepared.out_dir.clone()) else {
        eprintln!("error: no output directory (pass --out or set `out_dir` in the config)");
        return EXIT_INVALID;
    };
    let mut inputs = Vec::with_capacity(prepared.inputs.len() + 1);
    for p in std::iter::once(&args.config).chain(&prepared.inputs) {
        match FileHash::of(p) {
            Ok(h) => inputs.push(h),
            Err(e) => {
                eprintln!("error: cannot read input {}: {e}", p.display());
                return EXIT_INVALID;
            }
        }
    }
    let mut manifest = RunManifest::new(name, prepared.config, args.seed, inputs);
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_RUNTIME;
    }
    log::info!("{name}: writing to {}", out.display());
    let result = (prepared.job)(&out);
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            manifest.status = "failed";
            manifest.error = Some(msg.clone());
            EXIT_RUNTIME
        }
    };
    if let Err(e) = manifest.write(&out) {
        eprintln!("error: cannot write run manifest: {e}");
        return EXIT_RUNTIME;
    }
    code
}

fn prepare(name: &str, bytes: &[u8], seed: Option<u64>) -> Result<Prepared, String> {
    match name {
        "gen-data" => prepare_gen_data(bytes, seed),
        "score" => prepare_score(bytes, seed),
        "eval" => prepare_eval(bytes, seed),
        "check-lemma2" | "check-tailbound" => prepare_checks(name, bytes, seed),
        _ => prepare_experiment(name, bytes, seed),
    }
}

fn prepare_gen_data(bytes: &[u8], seed: Option<u64>) -> Result<Prepared, String> {
    let mut cfg: GenDataConfig = parse(bytes)?;
    if cfg.datasets.is_empty() {
        return Err("config: `datasets` must not be empty".into());
    }
    if let Some(s) = seed {
        for (i, d) in cfg.datasets.iter_mut().enumerate() {
            d.seed = derive_seed(s, i as u64);
        }
    }
    unique_labels(&cfg.datasets)?;
    if let Some(d) = cfg.datasets.iter().find(|d| d.count == 0 || d.side == 0 || d.channels == 0) {
        return Err(format!("dataset `{}`: count, side and channels must be positive", d.label()));
    }
    let datasets = cfg.datasets.clone();
    Ok(Prepared {
        config: echo(&cfg),
        inputs: Vec::new(),
        out_dir: cfg.out_dir,
        job: Box::new(move |out| {
            for spec in &datasets {
                let images = spec.generate().map_err(rt)?;
                let m = write_dataset(out, spec, &images).map_err(rt)?;
                println!("{}: {} images", m.label, m.files.len());
            }
            Ok(())
        }),
    })
}

fn prepare_score(bytes: &[u8], seed: Option<u64>) -> Result<Prepared, String> {
    let mut cfg: ScoreConfig = parse(bytes)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.datasets.is_empty() {
        return Err("config: `datasets` must not be empty".into());
    }
    unique_labels(&cfg.datasets)?;
    let c = cfg.clone();
    Ok(Prepared {
        config: echo(&cfg),
        inputs: vec![cfg.checkpoint.clone()],
        out_dir: cfg.out_dir,
        job: Box::new(move |out| {
            let model = load_checkpoint(&c.checkpoint).map_err(rt)?;
            let mut records: Vec<ScoreRecord> = Vec::new();
            for (i, spec) in c.datasets.iter().enumerate() {
                let images = spec.generate().map_err(rt)?;
                if let Some(im) = images.iter().find(|im| im.dim() != model.dim()) {
                    return Err(format!(
                        "dataset `{}` has dimension {}, the checkpoint expects {}",
                        spec.label(),
                        im.dim(),
                        model.dim()
                    ));
                }
                let mut rng = Rng::new(derive_seed(derive_seed(c.seed, stream::EVAL), i as u64));
                let x = dequantize_batch(&images, &mut rng);
                let cs = complexities(&images, &c.compressor).map_err(rt)?;
                records.extend(evaluate(&model, &x, &spec.label(), &cs).map_err(rt)?);
                log::info!("scored {} ({} images)", spec.label(), images.len());
            }
            write_file(out, "scores.csv", |w| write_score_csv(&records, w).map_err(rt))?;
            write_file(out, "scatter.csv", |w| flowood::eval::write_scatter_csv(&records, w).map_err(rt))
        }),
    })
}

fn prepare_eval(bytes: &[u8], seed: Option<u64>) -> Result<Prepared, String> {
    let cfg: EvalConfig = parse(bytes)?;
    if seed.is_some() {
        log::warn!("eval is deterministic; --seed has no effect");
    }
    if cfg.scores.is_empty() || cfg.pairing.ood.is_empty() || cfg.pairing.methods.is_empty() {
        return Err("config: `scores`, `pairing.ood` and `pairing.methods` must not be empty".into());
    }
    let c = cfg.clone();
    Ok(Prepared {
        config: echo(&cfg),
        inputs: cfg.scores.clone(),
        out_dir: cfg.out_dir,
        job: Box::new(move |out| {
            let mut records = Vec::new();
            for p in &c.scores {
                let f = std::fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
                records.extend(read_score_csv(std::io::BufReader::new(f)).map_err(rt)?);
            }
            let rep = report(&records, &c.pairing).map_err(rt)?;
            for r in &rep.rows {
                println!("{} vs {} [{}]: AUROC {:.3} AUPR {:.3}", r.ood, r.in_dist, r.method, r.auroc, r.aupr);
            }
            write_file(out, "report.csv", |w| rep.write_csv(w).map_err(rt))?;
            write_json(out, "report.json", &rep).map_err(rt)
        }),
    })
}

fn prepare_checks(name: &str, bytes: &[u8], seed: Option<u64>) -> Result<Prepared, String> {
    let mut cfg: ChecksFile = parse(bytes)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let checks = CheckConfig {
        seed: cfg.seed,
        lemma2: cfg.lemma2.clone(),
        tail: cfg.tail.clone(),
    };
    let lemma = name == "check-lemma2";
    Ok(Prepared {
        config: echo(&cfg),
        inputs: Vec::new(),
        out_dir: cfg.out_dir,
        job: Box::new(move |out| {
            if lemma {
                let c = checks.lemma2().map_err(rt)?;
                println!(
                    "lemma2: mse {:.6} identity {:.6} residual {:.4} {}",
                    c.empirical_mse,
                    c.identity_rhs,
                    c.rel_residual,
                    verdict(c.pass)
                );
                write_json(out, "lemma2.json", &c).map_err(rt)
            } else {
                let c = checks.tail_bound().map_err(rt)?;
                println!(
                    "tail bound: empirical {:.4} bound {:.4} {}",
                    c.empirical,
                    c.bound,
                    verdict(c.pass)
                );
                write_json(out, "tailbound.json", &c).map_err(rt)
            }
        }),
    })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn prepare_experiment(name: &str, bytes: &[u8], seed: Option<u64>) -> Result<Prepared, String> {
    let mut cfg: ExperimentConfig = parse(bytes)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(rt)?;
    let name = name.to_string();
    let c = cfg.clone();
    Ok(Prepared {
        config: echo(&cfg),
        inputs: cfg.checkpoint.iter().cloned().collect(),
        out_dir: cfg.out_dir,
        job: Box::new(move |out| run_experiment(&name, &c, out).map_err(rt)),
    })
}

fn trained_main(cfg: &ExperimentConfig, out: &Path) -> experiments::Result<Trained> {
    let main = main_flow(cfg)?;
    if !main.trace.losses.is_empty() {
        write_traces(out, "main_trace.csv", &[("main".to_string(), main.trace.clone())])?;
    }
    Ok(main)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn run_experiment(name: &str, cfg: &ExperimentConfig, out: &Path) -> experiments::Result<()> {
    match name {
        "train" => {
            let main = trained_main(cfg, out)?;
            save_checkpoint(&main.model, &out.join("flow.ckpt"))?;
            let last = main.trace.block_means.last().copied();
            println!("train: final nll/dim {}", fmt_opt(last));
        }
        "exp1" => {
            let main = trained_main(cfg, out)?;
            let r = exp1_complexity_vs_znorm(cfg, &main.model)?;
            r.write_to(out)?;
            println!(
                "exp1: spearman(C, |z|) {} (identity control {})",
                fmt_opt(r.spearman),
                fmt_opt(r.control_spearman)
            );
        }
        "exp2" => {
            let main = trained_main(cfg, out)?;
            let r = exp2_volume_vs_znorm(cfg, &main.model)?;
            r.write_to(out)?;
            println!("exp2: pearson(-|z|^2, logdet) {}", fmt_opt(r.pearson));
        }
        "exp-c2" | "probe-hypothesis" => {
            let main = trained_main(cfg, out)?;
            let c2 = exp_c2_mse_vs_complexity(cfg, &main.model)?;
            c2.write_to(out)?;
            for f in &c2.fits {
                println!(
                    "exp-c2: delta {} R^2 {} slope {}",
                    f.delta,
                    fmt_opt(f.fit.as_ref().map(|l| l.r2)),
                    fmt_opt(f.fit.as_ref().map(|l| l.slope))
                );
            }
            if name == "probe-hypothesis" {
                let p = probe_hypothesis(cfg, &main.model, &c2)?;
                p.write_to(out)?;
                let holds = p.rows.iter().filter(|r| r.holds).count();
                println!("probe: inequality holds for {holds}/{} sources", p.rows.len());
            }
        }
        "exp4" => {
            let main = trained_main(cfg, out)?;
            let flows = Flows::train(cfg, Some(main))?;
            let r = exp4_detection(cfg, &flows)?;
            r.write_to(out)?;
            let failing = r.report.rows.iter().filter(|row| !row.pass).count();
            println!(
                "exp4: {} (ood, method) rows, {failing} below the detectability threshold",
                r.report.rows.len()
            );
        }
        other => return Err(experiments::ExperimentError::Unsupported(format!("command {other}"))),
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut dyn std::io::Write) -> Result<(), String>) -> Result<(), String> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| format!("{}: {e}", path.display()))
}
