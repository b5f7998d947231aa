use anyhow::Context;
use regforge::imgcore::io::read_file;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputFile>,
    pub tool_version: String,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON form; object keys serialize in sorted order.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("json value serializes"))
}

/// Every file under `root` except the run manifest, sorted by path.
pub fn hash_outputs(root: &Path) -> anyhow::Result<Vec<OutputFile>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root)?.to_path_buf();
        if rel == Path::new(RUN_MANIFEST) {
            continue;
        }
        out.push(OutputFile { sha256: sha256_hex(&read_file(entry.path())?), path: rel });
    }
    Ok(out)
}

impl RunManifest {
    pub(crate) fn finish(
        command: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: Vec<PathBuf>,
        out_dir: &Path,
        started: Instant,
    ) -> anyhow::Result<Self> {
        let m = Self {
            command: command.to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            inputs,
            outputs: hash_outputs(out_dir)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(RUN_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(m)
    }

    pub fn read(out_dir: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_slice(&read_file(&out_dir.join(RUN_MANIFEST))?)?)
    }
}
