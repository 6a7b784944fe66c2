use std::fs;
use std::path::Path;
use std::process::Command;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::field::load_field;
use super::DeformationField2D;
use crate::error::{Error, Result};
use crate::volume::SimpleHeader;

/// An external registration tool. Arguments may contain the placeholders
/// `{moving}`, `{fixed}` (simple-format image stems, shape `[h, w, 1]`) and
/// `{field}` (the stem the tool must write a field file to).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

fn write_image(img: &Array2<f64>, stem: &Path) -> Result<()> {
    let (h, w) = img.dim();
    let header = SimpleHeader {
        shape: [h, w, 1],
        dtype: "f32".into(),
        spacing: [1.0; 3],
        id: String::new(),
    };
    let raw = stem.with_extension("raw");
    let json = stem.with_extension("json");
    let bytes: Vec<u8> = img.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    fs::write(&json, serde_json::to_string(&header)?).map_err(|e| Error::io(&json, e))
}

pub(crate) fn run_external(cmd: &ExternalCommand, moving: &Array2<f64>, fixed: &Array2<f64>) -> Result<DeformationField2D> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let moving_stem = dir.path().join("moving");
    let fixed_stem = dir.path().join("fixed");
    let field_stem = dir.path().join("field");
    write_image(moving, &moving_stem)?;
    write_image(fixed, &fixed_stem)?;
    let args: Vec<String> = cmd
        .args
        .iter()
        .map(|a| {
            a.replace("{moving}", &moving_stem.to_string_lossy())
                .replace("{fixed}", &fixed_stem.to_string_lossy())
                .replace("{field}", &field_stem.to_string_lossy())
        })
        .collect();
    let out = Command::new(&cmd.program)
        .args(&args)
        .output()
        .map_err(|e| Error::ExternalCommand(format!("cannot run `{}`: {e}", cmd.program)))?;
    if !out.status.success() {
        return Err(Error::ExternalCommand(format!(
            "`{}` exited with {}: {}",
            cmd.program,
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let field = load_field(&field_stem)?;
    if field.shape() != fixed.dim() {
        return Err(Error::ExternalCommand(format!(
            "field shape {:?} does not match slice shape {:?}",
            field.shape(),
            fixed.dim()
        )));
    }
    Ok(field)
}
