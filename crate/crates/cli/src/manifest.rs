//! Run manifests written next to every output file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rankflow::rng::GENERATOR_ID;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::job::{Artifact, Job};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the compact JSON of `parameters`.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub generator: String,
    pub parameters: Job,
    pub version: String,
    pub duration_secs: f64,
    pub outputs: Vec<String>,
}

pub fn config_hash(job: &Job) -> String {
    let bytes = serde_json::to_vec(job).expect("jobs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `trajectory.csv` → `trajectory.manifest.json`.
pub fn manifest_name(output: &str) -> String {
    let stem = Path::new(output).file_stem().and_then(|s| s.to_str()).unwrap_or(output);
    format!("{stem}.manifest.json")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Runs `job`, writes its artifacts into `out` and a manifest beside each.
/// Returns the written paths in order.
pub fn execute(job: &Job, out: &Path, workers: Option<usize>) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let artifacts: Vec<Artifact> = job.run(workers)?;
    let duration_secs = start.elapsed().as_secs_f64();
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let manifest = RunManifest {
        config_hash: config_hash(job),
        seed: job.seed(),
        generator: GENERATOR_ID.to_string(),
        parameters: job.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs,
        outputs: artifacts.iter().map(|a| a.name.clone()).collect(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifests serialize");
    manifest_bytes.push(b'\n');
    let mut written = Vec::new();
    for a in &artifacts {
        let path = out.join(&a.name);
        write_file(&path, &a.bytes)?;
        written.push(path);
        let mpath = out.join(manifest_name(&a.name));
        write_file(&mpath, &manifest_bytes)?;
        written.push(mpath);
    }
    Ok(written)
}

/// Reads a manifest and checks that its hash matches its parameters.
pub fn load(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::parse(path, &e))?;
    let computed = config_hash(&m.parameters);
    if computed != m.config_hash {
        return Err(CliError::ManifestMismatch {
            path: path.to_path_buf(),
            stored: m.config_hash,
            computed,
        });
    }
    Ok(m)
}
