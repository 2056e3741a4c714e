//! Run manifests: what was run, on which inputs, producing what.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Digest over a set of files: each file's relative path and contents, in
/// the order given.
pub fn files_digest(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update(fs::read(f).with_context(|| format!("reading {}", f.display()))?);
    }
    Ok(hex(&h.finalize()))
}

/// Every regular file below `dir` except run manifests, sorted by path.
pub fn bundle_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub toolkit_version: String,
    pub runtime_seconds: f64,
}

pub struct RunRecorder {
    started: Instant,
    manifest: RunManifest,
}

impl RunRecorder {
    pub fn new<A: Serialize>(command: &str, args: &A) -> Self {
        RunRecorder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.into(),
                arguments: serde_json::to_value(args).expect("arguments serialize"),
                inputs: Vec::new(),
                outputs: Vec::new(),
                seed: None,
                toolkit_version: env!("CARGO_PKG_VERSION").into(),
                runtime_seconds: 0.0,
            },
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, sha256: String) {
        self.manifest.inputs.push(InputRecord {
            role: role.into(),
            path: path.display().to_string(),
            sha256,
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    /// Writes the manifest to `path`.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.manifest.runtime_seconds = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Manifest path for a single output file: `<file>.manifest.json`.
pub fn manifest_for_file(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
