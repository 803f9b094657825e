//! Run manifests: enough provenance to byte-reproduce a run.

use diffstack::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Write `manifest.json` into `dir`. `files` are checksummed relative to
/// `dir` when they exist there, otherwise by their given path.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config_text: &str,
    seeds: &[u64],
    files: &[&Path],
) -> Result<()> {
    let mut checksums = serde_json::Map::new();
    for f in files {
        let full = if f.is_absolute() { f.to_path_buf() } else { dir.join(f) };
        if full.exists() {
            checksums.insert(f.display().to_string(), sha256_file(&full)?.into());
        }
    }
    let manifest = serde_json::json!({
        "tool": "diffstack",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config_text,
        "seeds": seeds,
        "dataset_checksums": checksums,
        "written_unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap() + "\n",
    )?;
    Ok(())
}
