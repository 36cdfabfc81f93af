//! Output directories, file hashing and the dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| sepba::Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| sepba::Error::io(path, e).into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| sepba::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| sepba::Error::format(what, path, e.to_string()).into())
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`,
/// in which case its contents are removed first.
pub fn prepare_output_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Input(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir).map_err(|e| sepba::Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CliError::Input(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| sepba::Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| sepba::Error::io(dir, e).into())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| sepba::Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub files: Vec<ManifestEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir).map_err(|e| sepba::Error::io(dir, e))? {
        let path = entry.map_err(|e| sepba::Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

impl Manifest {
    /// Hashes every file under `root` except the manifest itself.
    pub fn scan(root: &Path) -> CliResult<Manifest> {
        let mut files = Vec::new();
        collect_files(root, root, &mut files)?;
        let mut entries = files
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(root).expect("file below root");
                let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                let bytes = fs::metadata(p).map_err(|e| sepba::Error::io(p, e))?.len();
                Ok(ManifestEntry {
                    path,
                    bytes,
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            format_version: 1,
            files: entries,
        })
    }

    pub fn write(&self, root: &Path) -> CliResult<()> {
        write_json(&root.join(MANIFEST), self)
    }

    pub fn read(root: &Path) -> CliResult<Manifest> {
        read_json(&root.join(MANIFEST), "manifest")
    }

    /// Paths whose current content no longer matches the recorded hash.
    pub fn verify(&self, root: &Path) -> CliResult<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let p = root.join(&f.path);
            if !p.exists() || sha256_file(&p)? != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}
