//! Synthetic complexity-controlled image sets, dequantization and PGM/PPM
//! ingestion.

mod generators;
mod image;
mod pnm;

pub use generators::{
    average_pool, corrupt_pixels, gauss_texture, manipulate, pooling_noise, uniform_noise, Manipulation,
    PATCH_AMPLITUDE, PATCH_SIDE,
};
pub use image::{dequantization_offset, dequantize, dequantize_with, quantize, quantize_value, Dequantized, Image};
pub use pnm::{decode_pnm, encode_pnm, load_pnm, save_pnm};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("images must have 1 or 3 channels, got {0}")]
    Channels(usize),
    #[error("image has a zero dimension")]
    EmptyImage,
    #[error("expected {expected} pixel values, found {found}")]
    PixelCount { expected: usize, found: usize },
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("truncated raster at byte {offset}: {missing} bytes missing")]
    Truncated { offset: usize, missing: usize },
    #[error("pool size must be at least 1, got {0}")]
    PoolSize(usize),
    #[error("{patch}x{patch} patch does not fit a {height}x{width} image")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("blur width must be finite and non-negative, got {0}")]
    BlurWidth(f64),
    #[error("dataset: {0}")]
    Spec(String),
    #[error("io: {0}")]
    Io(String),
}

fn default_side() -> usize {
    16
}

fn default_channels() -> usize {
    1
}

/// Generator recipe for one image set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    PoolingNoise { kappa: usize },
    Manipulated { base: Box<DatasetSpec>, mode: Manipulation },
    GaussTexture { sigma: f64 },
    /// PGM/PPM files matching a glob, taken in sorted path order.
    Files { pattern: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Tag used in score tables; derived from the kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, count: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            seed,
            side: default_side(),
            channels: default_channels(),
            name: None,
        }
    }

    pub fn with_geometry(mut self, side: usize, channels: usize) -> Self {
        self.side = side;
        self.channels = channels;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.kind {
            DatasetKind::PoolingNoise { kappa } => format!("pool-{kappa}"),
            DatasetKind::Manipulated { base, mode } => format!("{}({})", mode.label(), base.label()),
            DatasetKind::GaussTexture { sigma } => format!("gauss-{sigma}"),
            DatasetKind::Files { pattern } => pattern.clone(),
        }
    }

    pub fn generate(&self) -> Result<Vec<Image>, DatagenError> {
        if self.count == 0 {
            return Err(DatagenError::Spec(format!("{}: count must be at least 1", self.label())));
        }
        let mut rng = Rng::new(self.seed);
        match &self.kind {
            DatasetKind::PoolingNoise { kappa } => {
                pooling_noise(&mut rng, *kappa, self.count, self.side, self.channels)
            }
            DatasetKind::GaussTexture { sigma } => {
                gauss_texture(&mut rng, *sigma, self.count, self.side, self.channels)
            }
            DatasetKind::Manipulated { base, mode } => {
                let base_images = base.generate()?;
                if base_images.len() < self.count {
                    return Err(DatagenError::Spec(format!(
                        "{}: base set has {} images, {} requested",
                        self.label(),
                        base_images.len(),
                        self.count
                    )));
                }
                manipulate(&base_images[..self.count], *mode, &mut rng)
            }
            DatasetKind::Files { pattern } => {
                let paths = glob_sorted(pattern)?;
                if paths.len() < self.count {
                    return Err(DatagenError::Spec(format!(
                        "{pattern}: {} files match, {} requested",
                        paths.len(),
                        self.count
                    )));
                }
                paths[..self.count].iter().map(|p| load_pnm(p)).collect()
            }
        }
    }
}

fn glob_sorted(pattern: &str) -> Result<Vec<PathBuf>, DatagenError> {
    let mut paths = glob::glob(pattern)
        .map_err(|e| DatagenError::Spec(format!("bad glob {pattern}: {e}")))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DatagenError::Io(e.to_string()))?;
    paths.sort();
    Ok(paths)
}

/// JSON sidecar describing a written image set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub label: String,
    pub spec: DatasetSpec,
    pub files: Vec<String>,
}

/// Writes `images` as `<label>_NNNNN.pgm|ppm` under `dir` plus a
/// `<label>.manifest.json`, and returns the manifest.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, images: &[Image]) -> Result<DatasetManifest, DatagenError> {
    std::fs::create_dir_all(dir).map_err(|e| DatagenError::Io(format!("{}: {e}", dir.display())))?;
    let label = sanitize(&spec.label());
    let mut files = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
        let name = format!("{label}_{i:05}.{ext}");
        save_pnm(&dir.join(&name), img)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        label: label.clone(),
        spec: spec.clone(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatagenError::Io(e.to_string()))?;
    std::fs::write(dir.join(format!("{label}.manifest.json")), json + "\n")
        .map_err(|e| DatagenError::Io(e.to_string()))?;
    Ok(manifest)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
