use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Git-style content hash: SHA-256 over `"blob <len>\0" ‖ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: content_hash(&std::fs::read(path)?),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Resolved config, after the seed override.
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_override: Option<u64>,
    pub inputs: Vec<FileHash>,
    /// Hash over the resolved config and every input hash.
    pub input_hash: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed_override: Option<u64>, inputs: Vec<FileHash>) -> Self {
        let mut material = serde_json::to_vec(&config).unwrap_or_default();
        for i in &inputs {
            material.extend_from_slice(format!("\n{}", i.sha256).as_bytes());
        }
        Self {
            tool: "flowood",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            seed_override,
            input_hash: content_hash(&material),
            inputs,
            status: "ok",
            error: None,
            outputs: Vec::new(),
        }
    }

    /// Hashes every file under `dir` (recursively, sorted) except the
    /// manifest itself, then writes the manifest there.
    pub fn write(mut self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        collect(dir, &mut files)?;
        files.sort();
        self.outputs = files
            .iter()
            .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_NAME))
            .map(|p| {
                Ok(FileHash {
                    path: p.strip_prefix(dir).unwrap_or(p).display().to_string(),
                    sha256: content_hash(&std::fs::read(p)?),
                })
            })
            .collect::<std::io::Result<_>>()?;
        let json = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_NAME), json + "\n")
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_object_format() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
