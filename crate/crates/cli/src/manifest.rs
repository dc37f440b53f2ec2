//! Run manifests: the fully resolved configuration plus provenance, written
//! atomically next to the outputs. A manifest is itself a valid `--config`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub resolved_spec: serde_json::Value,
    pub seed: u64,
    pub workers: usize,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Temp file in the target directory, then rename over the destination.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }
}

/// If `text` is a manifest, its `resolved_spec`; otherwise `None`.
pub fn resolved_spec_of(text: &str) -> Option<std::result::Result<serde_json::Value, serde_json::Error>> {
    let value: serde_json::Value = serde_json::from_str(text).ok()?;
    value.get("resolved_spec")?;
    Some(serde_json::from_str::<RunManifest>(text).map(|m| m.resolved_spec))
}
