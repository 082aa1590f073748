use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    code_version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    seed: Option<u64>,
    config_sha256: String,
    config: &'a Value,
    artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_hash(config: &Value) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("json value serializes"))
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| vbones::Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Overwrite(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| vbones::Error::io(dir, e))?;
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Writes `manifest.json` listing every file under `dir` with its hash.
pub fn write_manifest(dir: &Path, command: &str, seed: Option<u64>, config: &Value) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files).map_err(|e| vbones::Error::io(dir, e))?;
    files.sort();
    let mut artifacts = Vec::with_capacity(files.len());
    for rel in files {
        let full = dir.join(&rel);
        let bytes = fs::read(&full).map_err(|e| vbones::Error::io(&full, e))?;
        artifacts.push(ArtifactEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        tool: "vbones",
        code_version: env!("CARGO_PKG_VERSION"),
        command,
        argv: std::env::args().collect(),
        seed,
        config_sha256: config_hash(config),
        config,
        artifacts,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(vbones::Error::from)?;
    fs::write(&path, text).map_err(|e| vbones::Error::io(&path, e))?;
    Ok(())
}
