//! Volume files.
//!
//! Two containers are supported:
//!
//! * the simple format: `<stem>.raw` holds the little-endian samples in
//!   row-major `[x][y][z]` order (z fastest), `<stem>.json` holds
//!   `{"shape": [H, W, D], "dtype": "f32" | "u8", "spacing": [sx, sy, sz], "id": "..."}`;
//! * NIfTI-1 (`.nii` / `.nii.gz`) through the `nifti` crate.
//!
//! Either file of a simple-format pair may be passed as the path.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Ix3};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};
use serde::{Deserialize, Serialize};

use super::{dims_of, LabelVolume, Spacing, Volume3D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleHeader {
    pub shape: [usize; 3],
    pub dtype: String,
    pub spacing: Spacing,
    #[serde(default)]
    pub id: String,
}

enum Container {
    Simple { raw: PathBuf, json: PathBuf },
    Nifti(PathBuf),
}

fn container(path: &Path) -> Container {
    let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        return Container::Nifti(path.to_path_buf());
    }
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    Container::Simple {
        raw: with("raw"),
        json: with("json"),
    }
}

/// Samples of one simple-format file, still in their stored type.
enum Samples {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

fn read_simple(raw: &Path, json: &Path) -> Result<(SimpleHeader, Samples)> {
    let text = fs::read_to_string(json).map_err(|e| Error::io(json, e))?;
    let header: SimpleHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(json, "header", e.to_string()))?;
    let bytes = fs::read(raw).map_err(|e| Error::io(raw, e))?;
    let count: usize = header.shape.iter().product();
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "u8" => 1,
        other => return Err(Error::format(json, "dtype", format!("unsupported dtype `{other}`"))),
    };
    if bytes.len() != count * width {
        return Err(Error::format(
            raw,
            "shape",
            format!(
                "shape {:?} with dtype {} needs {} bytes, file has {}",
                header.shape,
                header.dtype,
                count * width,
                bytes.len()
            ),
        ));
    }
    let samples = if width == 4 {
        Samples::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    } else {
        Samples::U8(bytes)
    };
    Ok((header, samples))
}

fn write_simple(raw: &Path, json: &Path, header: &SimpleHeader, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = raw.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(raw, bytes).map_err(|e| Error::io(raw, e))?;
    let text = serde_json::to_string_pretty(header)?;
    fs::write(json, text + "\n").map_err(|e| Error::io(json, e))
}

fn read_nifti(path: &Path) -> Result<(Array3<f32>, Spacing)> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| Error::format(path, "nifti", e.to_string()))?;
    let header = obj.header().clone();
    let spacing = nifti_spacing(&header);
    let data = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| Error::format(path, "data", e.to_string()))?;
    let data = data
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::format(path, "dim", format!("expected a 3D volume: {e}")))?;
    Ok((data.as_standard_layout().to_owned(), spacing))
}

fn nifti_spacing(header: &NiftiHeader) -> Spacing {
    let p = header.pixdim;
    let fix = |v: f32| if v.is_finite() && v > 0.0 { v as f64 } else { 1.0 };
    [fix(p[1]), fix(p[2]), fix(p[3])]
}

fn nifti_header(spacing: Spacing) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    h.pixdim = [1.0, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    h
}

fn write_nifti<T>(path: &Path, data: &Array3<T>, spacing: Spacing) -> Result<()>
where
    T: nifti::DataElement + bytemuck::Pod,
{
    let header = nifti_header(spacing);
    nifti::writer::WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(data)
        .map_err(|e| Error::format(path, "nifti", e.to_string()))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    match container(path) {
        Container::Simple { raw, json } => {
            let (header, samples) = read_simple(&raw, &json)?;
            let values = match samples {
                Samples::F32(v) => v,
                Samples::U8(v) => v.into_iter().map(f32::from).collect(),
            };
            let data = Array3::from_shape_vec(header.shape, values)
                .map_err(|e| Error::format(&json, "shape", e.to_string()))?;
            Volume3D::new(data, header.spacing, header.id)
        }
        Container::Nifti(p) => {
            let (data, spacing) = read_nifti(&p)?;
            let id = p
                .file_name()
                .map(|n| n.to_string_lossy().trim_end_matches(".gz").trim_end_matches(".nii").to_string())
                .unwrap_or_default();
            Volume3D::new(data, spacing, id)
        }
    }
}

pub fn save_volume(volume: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    match container(path.as_ref()) {
        Container::Simple { raw, json } => {
            let header = SimpleHeader {
                shape: volume.dims(),
                dtype: "f32".into(),
                spacing: volume.spacing(),
                id: volume.id().to_string(),
            };
            let bytes: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            write_simple(&raw, &json, &header, &bytes)
        }
        Container::Nifti(p) => write_nifti(&p, volume.data(), volume.spacing()),
    }
}

pub fn load_label(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (data, spacing) = match container(path) {
        Container::Simple { raw, json } => {
            let (header, samples) = read_simple(&raw, &json)?;
            let values = match samples {
                Samples::U8(v) => v,
                Samples::F32(v) => float_labels(&v, &json)?,
            };
            let data = Array3::from_shape_vec(header.shape, values)
                .map_err(|e| Error::format(&json, "shape", e.to_string()))?;
            (data, header.spacing)
        }
        Container::Nifti(p) => {
            let (data, spacing) = read_nifti(&p)?;
            let values = float_labels(data.as_slice().expect("standard layout"), &p)?;
            (Array3::from_shape_vec(dims_of(&data), values).expect("same size"), spacing)
        }
    };
    LabelVolume::new(data, spacing).map_err(|e| Error::format(path, "label", e.to_string()))
}

fn float_labels(values: &[f32], path: &Path) -> Result<Vec<u8>> {
    values
        .iter()
        .map(|&v| {
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::format(path, "label", format!("non-binary label value {v}")))
            }
        })
        .collect()
}

pub fn save_label(label: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    match container(path.as_ref()) {
        Container::Simple { raw, json } => {
            let header = SimpleHeader {
                shape: label.dims(),
                dtype: "u8".into(),
                spacing: label.spacing(),
                id: String::new(),
            };
            let bytes: Vec<u8> = label.data().iter().copied().collect();
            write_simple(&raw, &json, &header, &bytes)
        }
        Container::Nifti(p) => write_nifti(&p, label.data(), label.spacing()),
    }
}
