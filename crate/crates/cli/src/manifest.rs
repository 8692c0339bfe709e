//! Run manifests: what was run, on which inputs, producing which outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Input file → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock milliseconds per stage. The only field that differs
    /// between otherwise identical runs.
    pub timings_ms: BTreeMap<String, f64>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &impl Serialize, seed: Option<u64>) -> Self {
        let config_json = serde_json::to_vec(config).expect("config serializes");
        RunManifest {
            tool: "urt".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config_hash: sha256_bytes(&config_json),
            seed,
            ..RunManifest::default()
        }
    }

    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_bytes(bytes));
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms
            .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(io::Error::other)?;
        fs::write(dir.join("manifest.json"), json)
    }
}
