//! Checkpoints are a pair `<stem>.bin` (parameters as little-endian f32)
//! and `<stem>.json` (version, model config, parameter count, provenance).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SegNet};
use crate::error::{Error, Result};
use crate::provenance::Provenance;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    num_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let stem = match stem.extension().and_then(|e| e.to_str()) {
        Some("bin" | "json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (stem.with_file_name(format!("{name}.bin")), stem.with_file_name(format!("{name}.json")))
}

pub fn save_checkpoint(model: &SegNet, stem: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
    let (bin, json) = paths(stem.as_ref());
    let bytes: Vec<u8> = model.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        num_params: model.num_params(),
        provenance: provenance.cloned(),
    };
    fs::write(&json, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json, e))
}

pub fn load_checkpoint(stem: impl AsRef<Path>) -> Result<SegNet> {
    let (bin, json) = paths(stem.as_ref());
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::format(&json, "header", e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &json,
            "version",
            format!("unsupported checkpoint version {}", header.version),
        ));
    }
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != header.num_params * 4 {
        return Err(Error::format(
            &bin,
            "num_params",
            format!("{} bytes for {} parameters", bytes.len(), header.num_params),
        ));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    SegNet::from_parts(header.config, params).map_err(|e| Error::format(&json, "config", e.to_string()))
}
