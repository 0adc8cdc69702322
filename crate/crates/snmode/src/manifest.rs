//! Run manifests: one `manifest.json` per output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

/// Build version in `git describe` style.
pub const VERSION: &str = env!("SNMODE_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Process arguments after the program name.
    pub args: Vec<String>,
    /// SHA-256 of the bytes of `config.json` in the same directory.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Unix seconds.
    pub started: f64,
    pub finished: f64,
    /// Worker cap from `SNDOE_THREADS`; all commands currently run on one
    /// thread.
    pub threads: usize,
    /// Files written by the command, relative to the directory.
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Worker cap: `SNDOE_THREADS` if set (must be a positive integer),
/// otherwise the number of logical cores.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("SNDOE_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!("SNDOE_THREADS must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// An output directory being filled by one command.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    seed: u64,
    started: f64,
    threads: usize,
    config_hash: String,
    outputs: Vec<PathBuf>,
}

impl Run {
    /// Create `dir` and store the command's effective configuration as
    /// `config.json`.
    pub fn start(dir: &Path, command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let threads = thread_cap()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = serde_json::to_vec_pretty(config).map_err(|e| Error::format(dir.join(CONFIG_FILE), e))?;
        bytes.push(b'\n');
        io::write_bytes(&dir.join(CONFIG_FILE), &bytes)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed,
            started: unix_now(),
            threads,
            config_hash: sha256_hex(&bytes),
            outputs: vec![PathBuf::from(CONFIG_FILE)],
        })
    }

    /// Path of an output file inside the directory, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.record(&self.dir.join(name));
        self.dir.join(name)
    }

    /// Record a file already written (absolute or relative to the directory).
    pub fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf();
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
    }

    pub fn finish(self) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command,
            args: std::env::args().skip(1).collect(),
            config_hash: self.config_hash,
            seed: self.seed,
            version: VERSION.to_string(),
            started: self.started,
            finished: unix_now(),
            threads: self.threads,
            outputs: self.outputs,
        };
        io::write_json(&self.dir.join(MANIFEST_FILE), &m)?;
        Ok(m)
    }
}

/// Check that `dir/config.json` still hashes to the manifest's value.
pub fn verify(dir: &Path) -> Result<RunManifest> {
    let m: RunManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(CONFIG_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != m.config_hash {
        return Err(Error::format(&path, "config hash does not match the manifest"));
    }
    Ok(m)
}
