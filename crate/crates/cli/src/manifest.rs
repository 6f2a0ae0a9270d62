use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssmdisc_core::io::{read_text, write_text};
use ssmdisc_core::Error;

use crate::{CliError, Command, Result};

pub const TOOL: &str = "ssmdisc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything needed to re-run a command: the command with absolute paths,
/// the resolved configuration, digests of what it read and wrote, and the
/// outputs (timings) that are not expected to reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub nondeterministic_outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            source_name: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if m.tool != TOOL {
            return Err(CliError::Replay {
                path: path.display().to_string(),
                detail: format!("written by '{}', not {TOOL}", m.tool),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        Ok(write_text(path, &text)?)
    }
}
