use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2D displacement, in voxels. A field maps fixed-image coordinates
/// into the moving image: `warped(x) = moving(x + (du(x), dv(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField2D {
    pub du: Array2<f64>,
    pub dv: Array2<f64>,
}

impl DeformationField2D {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            du: Array2::zeros(shape),
            dv: Array2::zeros(shape),
        }
    }

    pub fn uniform(shape: (usize, usize), du: f64, dv: f64) -> Self {
        Self {
            du: Array2::from_elem(shape, du),
            dv: Array2::from_elem(shape, dv),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.du.dim()
    }

    pub fn max_displacement(&self) -> f64 {
        self.du
            .iter()
            .zip(self.dv.iter())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.du.iter().chain(self.dv.iter()).all(|v| v.is_finite())
    }

    pub fn negated(&self) -> Self {
        Self {
            du: -&self.du,
            dv: -&self.dv,
        }
    }

    /// Scales vectors longer than `cap` back onto the cap.
    pub fn clamp_magnitude(&mut self, cap: f64) {
        for (a, b) in self.du.iter_mut().zip(self.dv.iter_mut()) {
            let n = a.hypot(*b);
            if n > cap {
                let s = cap / n;
                *a *= s;
                *b *= s;
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    shape: [usize; 2],
    order: [String; 2],
}

fn sibling(stem: &Path, ext: &str) -> PathBuf {
    let stem = match stem.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let mut s = stem.into_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.raw` (du then dv, little-endian f32, row-major) and
/// `<stem>.json` (`{"shape": [h, w], "order": ["du", "dv"]}`).
pub fn save_field(field: &DeformationField2D, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let (raw, json) = (sibling(stem, "raw"), sibling(stem, "json"));
    let bytes: Vec<u8> = field
        .du
        .iter()
        .chain(field.dv.iter())
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    let (h, w) = field.shape();
    let header = FieldHeader {
        shape: [h, w],
        order: ["du".into(), "dv".into()],
    };
    fs::write(&json, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&json, e))
}

pub fn load_field(stem: impl AsRef<Path>) -> Result<DeformationField2D> {
    let stem = stem.as_ref();
    let (raw, json) = (sibling(stem, "raw"), sibling(stem, "json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let header: FieldHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&json, "header", e.to_string()))?;
    let [h, w] = header.shape;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() != 2 * h * w * 4 {
        return Err(Error::format(&raw, "shape", format!("expected {} bytes, got {}", 8 * h * w, bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let (first, second) = values.split_at(h * w);
    let (du, dv) = match (header.order[0].as_str(), header.order[1].as_str()) {
        ("du", "dv") => (first, second),
        ("dv", "du") => (second, first),
        _ => return Err(Error::format(&json, "order", "expected du and dv")),
    };
    Ok(DeformationField2D {
        du: Array2::from_shape_vec((h, w), du.to_vec()).expect("size checked"),
        dv: Array2::from_shape_vec((h, w), dv.to_vec()).expect("size checked"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = DeformationField2D {
            du: Array2::from_shape_fn((3, 4), |(x, y)| x as f64 * 0.5 - y as f64),
            dv: Array2::from_shape_fn((3, 4), |(x, y)| (x + y) as f64 * 0.25),
        };
        save_field(&f, dir.path().join("phi")).unwrap();
        assert_eq!(load_field(dir.path().join("phi.json")).unwrap(), f);
    }

    #[test]
    fn clamp_caps_length() {
        let mut f = DeformationField2D::uniform((2, 2), 30.0, 40.0);
        f.clamp_magnitude(10.0);
        assert!((f.max_displacement() - 10.0).abs() < 1e-12);
        assert!((f.du[[0, 0]] - 6.0).abs() < 1e-12);
    }
}
