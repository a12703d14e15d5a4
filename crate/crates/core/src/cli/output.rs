//! Output staging: files land in a hidden sibling directory and replace the
//! target in one rename once the command has succeeded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::network::NETWORK_FORMAT_VERSION;

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Version of the CSV and JSON layouts written by the pipeline stages.
pub const TABLE_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to tell whether two runs must agree. No timestamps or
/// host details, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub manifest_version: u32,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: BTreeMap<String, String>,
    pub formats: BTreeMap<&'static str, u32>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_sha256: String) -> Self {
        let formats = [("tables", TABLE_FORMAT_VERSION), ("network", NETWORK_FORMAT_VERSION)]
            .into_iter()
            .collect();
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            seed,
            config_sha256,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            formats,
            warnings: Vec::new(),
        }
    }
}

pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
    committed: bool,
}

impl Staging {
    /// Refuses a non-empty target that holds no manifest, so a mistyped
    /// `--out` cannot replace unrelated files.
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let is_previous_run = target.join(MANIFEST).is_file();
            let is_empty = target.is_dir() && fs::read_dir(target)?.next().is_none();
            if !(is_previous_run || is_empty) {
                return Err(Error::Config(format!(
                    "output directory {} exists and is not a previous run; choose another --out",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| Error::Config(format!("output path {} has no directory name", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
            outputs: BTreeMap::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Renders into memory with `f`, then writes.
    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes the manifest and swaps the staged directory into place.
    pub fn commit(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.outputs = std::mem::take(&mut self.outputs);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        if self.target.exists() {
            let old = self.dir.with_extension("old");
            fs::rename(&self.target, &old)?;
            fs::rename(&self.dir, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&self.dir, &self.target)?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
