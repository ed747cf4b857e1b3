//! Run manifests: what a command consumed and produced, with content
//! hashes, written atomically next to the produced artifacts.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";
/// Manifest file name for commands that produce a directory.
pub const DIR_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Map<String, Value>,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(MANIFEST_SUFFIX);
    artifact.with_file_name(name)
}

impl RunManifest {
    pub fn new(command: &str, config: Map<String, Value>, seed: Option<u64>, started_unix: f64) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix,
            finished_unix: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Stamps the finish time and writes the manifest to `path`.
    pub fn write(mut self, path: &Path) -> CliResult<()> {
        self.finished_unix = now_unix();
        write_atomic(path, &serde_json::to_vec_pretty(&self)?)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
        serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }
}

fn recorded_hash(manifest: &Path, artifact: &Path) -> CliResult<Option<String>> {
    if !manifest.exists() {
        return Ok(None);
    }
    let m = RunManifest::read(manifest)?;
    let name = artifact.file_name();
    Ok(m.outputs
        .into_iter()
        .find(|a| a.path.file_name() == name)
        .map(|a| a.sha256))
}

/// Checks that an input exists and, when a manifest recorded its hash,
/// that the content still matches.
pub fn verify_input(path: &Path) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let dir_manifest = path.parent().map(|d| d.join(DIR_MANIFEST));
    let recorded = match recorded_hash(&manifest_path_for(path), path)? {
        Some(h) => Some(h),
        None => match dir_manifest {
            Some(m) => recorded_hash(&m, path)?,
            None => None,
        },
    };
    match recorded {
        None => {
            warn!("{} has no manifest; content not verified", path.display());
            Ok(())
        }
        Some(h) => {
            let found = sha256_file(path)?;
            if found == h {
                Ok(())
            } else {
                Err(CliError::HashMismatch(format!(
                    "{} has sha256 {found}, its manifest records {h}",
                    path.display()
                )))
            }
        }
    }
}
