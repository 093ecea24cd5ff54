//! Run manifests: what ran, with which inputs, producing which files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use trajflow::io::{read_json, sha256_file, verify_hash, write_json};
use trajflow::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_sec: f64,
    pub sampling_sec: Option<f64>,
    pub sec_per_sample: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub timings: Timings,
}

pub struct Recorder {
    command: &'static str,
    start: Instant,
    inputs: Vec<Artifact>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            start: Instant::now(),
            inputs: Vec::new(),
        }
    }

    /// Records an input file, first checking it against any manifest that
    /// produced it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        verify_recorded(path)?;
        self.inputs.push(Artifact::of(path)?);
        Ok(())
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        seed: Option<u64>,
        outputs: &[PathBuf],
        sampling: Option<(f64, usize)>,
        manifest_path: &Path,
    ) -> Result<RunManifest> {
        let outputs = outputs.iter().map(|p| Artifact::of(p)).collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            threads: trajflow::threads::thread_count(),
            inputs: self.inputs,
            outputs,
            timings: Timings {
                total_sec: self.start.elapsed().as_secs_f64(),
                sampling_sec: sampling.map(|(s, _)| s),
                sec_per_sample: sampling.map(|(s, n)| s / n.max(1) as f64),
            },
        };
        write_json(manifest_path, &manifest)?;
        Ok(manifest)
    }
}

/// Manifest written next to `out`: `<out>.manifest.json`.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn candidates(path: &Path) -> Vec<PathBuf> {
    let mut out = vec![sidecar(path)];
    if let Some(dir) = path.parent() {
        out.push(dir.join(MANIFEST_FILE));
    }
    out
}

/// Verifies `path` against the hash recorded by the manifest that wrote
/// it, when such a manifest exists.
pub fn verify_recorded(path: &Path) -> Result<()> {
    let Some(name) = path.file_name() else {
        return Ok(());
    };
    for m in candidates(path) {
        if !m.is_file() {
            continue;
        }
        let manifest: RunManifest = read_json(&m)?;
        for a in &manifest.outputs {
            if Path::new(&a.path).file_name() == Some(name) {
                return verify_hash(path, &a.sha256);
            }
        }
    }
    Ok(())
}
