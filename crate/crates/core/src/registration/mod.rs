//! Slice-to-slice registration and label propagation.
//!
//! A labelled slice is spread through its volume one slice at a time: the
//! image of the last labelled slice is registered onto its unlabelled
//! neighbour, the resulting field carries the label across, and the warped
//! label is cleaned before it seeds the next hop. Both directions away from
//! the source slice are swept independently.

mod demons;
mod external;
mod field;
pub(crate) mod morphology;
mod translation;
mod warp;

pub use external::ExternalCommand;
pub use field::{load_field, save_field, DeformationField2D};
pub use morphology::{largest_component, morphology_cleanup, open3x3};
pub use warp::{warp_image, warp_label};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{extract_slice, insert_slice, OrthogonalAnnotation, Plane, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    BuiltinDemons,
    TranslationOnly,
    ExternalCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub backend: Backend,
    /// Demons iterations per pyramid level.
    pub iterations: usize,
    /// Width of the Gaussian regulariser, in voxels.
    pub sigma: f64,
    pub levels: usize,
    /// Largest admissible displacement, in voxels.
    pub field_cap: f64,
    pub external: Option<ExternalCommand>,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            backend: Backend::BuiltinDemons,
            iterations: 40,
            sigma: 1.0,
            levels: 2,
            field_cap: 10.0,
            external: None,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be >= 1"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid("sigma", "must be >= 0"));
        }
        if !(self.field_cap > 0.0) {
            return Err(Error::invalid("field_cap", "must be > 0"));
        }
        if self.backend == Backend::ExternalCommand && self.external.is_none() {
            return Err(Error::invalid("external", "external_command backend needs a command"));
        }
        Ok(())
    }
}

fn zscore(img: &Array2<f32>) -> Array2<f64> {
    let n = img.len() as f64;
    let mean = img.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
    img.mapv(|v| (v as f64 - mean) / std)
}

/// Field that warps `moving` onto `fixed`. Each slice is z-scored first.
pub fn register_slices(moving: &Array2<f32>, fixed: &Array2<f32>, cfg: &RegistrationConfig) -> Result<DeformationField2D> {
    cfg.validate()?;
    if moving.dim() != fixed.dim() {
        return Err(Error::ShapeMismatch {
            expected: fixed.shape().to_vec(),
            got: moving.shape().to_vec(),
        });
    }
    if moving.iter().chain(fixed.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("slice", "non-finite intensity"));
    }
    let (m, f) = (zscore(moving), zscore(fixed));
    let field = match cfg.backend {
        Backend::BuiltinDemons => demons::demons(&m, &f, cfg)?,
        Backend::TranslationOnly => translation::translation_search(&m, &f, cfg.field_cap),
        Backend::ExternalCommand => {
            let cmd = cfg.external.as_ref().expect("validated");
            let mut field = external::run_external(cmd, &m, &f)?;
            field.clamp_magnitude(cfg.field_cap);
            field
        }
    };
    if !field.is_finite() {
        return Err(Error::Registration {
            slice: None,
            iterations: cfg.iterations,
            msg: "non-finite field".into(),
        });
    }
    Ok(field)
}

/// Mean squared intensity error of `moving` warped by `field` against `fixed`,
/// both z-scored as in [`register_slices`].
pub fn warped_mse(moving: &Array2<f32>, fixed: &Array2<f32>, field: &DeformationField2D) -> Result<f64> {
    let warped = warp_image(&zscore(moving), field)?;
    Ok(demons::mse(&warped, &zscore(fixed)))
}

/// Dense label produced by propagating one annotated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelVolume {
    pub data: Array3<u8>,
    pub source_plane: Plane,
    pub source_index: usize,
}

/// Foreground area of one propagated slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceQuality {
    pub slice: usize,
    /// Hops from the source slice.
    pub d: usize,
    pub fg_area: usize,
}

/// Propagates `label` (slice `index` of `plane`) through `volume`.
pub fn propagate(
    volume: &Volume3D,
    label: &Array2<u8>,
    plane: Plane,
    index: usize,
    cfg: &RegistrationConfig,
) -> Result<PseudoLabelVolume> {
    propagate_with_report(volume, label, plane, index, cfg).map(|(p, _)| p)
}

pub fn propagate_with_report(
    volume: &Volume3D,
    label: &Array2<u8>,
    plane: Plane,
    index: usize,
    cfg: &RegistrationConfig,
) -> Result<(PseudoLabelVolume, Vec<SliceQuality>)> {
    cfg.validate()?;
    let dims = volume.dims();
    let source_img = extract_slice(volume.data(), plane, index)?;
    if label.dim() != source_img.dim() {
        return Err(Error::ShapeMismatch {
            expected: source_img.shape().to_vec(),
            got: label.shape().to_vec(),
        });
    }
    let extent = plane.extent(dims);
    let mut data = Array3::<u8>::zeros(dims);
    insert_slice(&mut data, plane, index, label.view())?;
    let mut report = vec![SliceQuality {
        slice: index,
        d: 0,
        fg_area: label.iter().filter(|&&v| v == 1).count(),
    }];

    let downward: Vec<usize> = (0..index).rev().collect();
    let upward: Vec<usize> = (index + 1..extent).collect();
    for chain in [downward, upward] {
        let mut prev_img = source_img.clone();
        let mut prev_label = label.clone();
        for k in chain {
            let img = extract_slice(volume.data(), plane, k)?;
            let field = register_slices(&prev_img, &img, cfg).map_err(|e| match e {
                Error::Registration { iterations, msg, .. } => Error::Registration {
                    slice: Some(k),
                    iterations,
                    msg,
                },
                other => Error::Registration {
                    slice: Some(k),
                    iterations: 0,
                    msg: other.to_string(),
                },
            })?;
            let next = morphology_cleanup(&warp_label(&prev_label, &field)?);
            insert_slice(&mut data, plane, k, next.view())?;
            report.push(SliceQuality {
                slice: k,
                d: k.abs_diff(index),
                fg_area: next.iter().filter(|&&v| v == 1).count(),
            });
            prev_img = img;
            prev_label = next;
        }
    }
    report.sort_by_key(|r| r.slice);
    Ok((
        PseudoLabelVolume {
            data,
            source_plane: plane,
            source_index: index,
        },
        report,
    ))
}

/// Independent propagations of both annotated slices: `(plane A, plane B)`.
pub fn propagate_orthogonal(
    volume: &Volume3D,
    annotation: &OrthogonalAnnotation,
    cfg: &RegistrationConfig,
) -> Result<(PseudoLabelVolume, PseudoLabelVolume)> {
    let a = propagate(volume, annotation.label(Plane::A), Plane::A, annotation.m(), cfg)?;
    let b = propagate(volume, annotation.label(Plane::B), Plane::B, annotation.n(), cfg)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::dice_slices;
    use crate::synthetic::{generate_phantom, make_orthogonal_annotation, select_annotation_slices, translating_tube, PhantomSpec};

    fn blob(shape: (usize, usize), c: (f64, f64), r: f64) -> Array2<f32> {
        Array2::from_shape_fn(shape, |(x, y)| {
            let d2 = (x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2);
            (-d2 / (2.0 * r * r)).exp() as f32
        })
    }

    #[test]
    fn identical_slices_give_near_zero_field() {
        let img = blob((32, 32), (15.0, 17.0), 5.0);
        for backend in [Backend::BuiltinDemons, Backend::TranslationOnly] {
            let cfg = RegistrationConfig {
                backend,
                ..Default::default()
            };
            let f = register_slices(&img, &img, &cfg).unwrap();
            assert!(f.max_displacement() <= 0.1, "{backend:?}: {}", f.max_displacement());
        }
    }

    #[test]
    fn translation_backend_recovers_integer_shift() {
        let moving = blob((32, 32), (14.0, 16.0), 4.0);
        // fixed(x) = moving(x - (2, 0)), so the field is (-2, 0).
        let fixed = blob((32, 32), (16.0, 16.0), 4.0);
        let cfg = RegistrationConfig {
            backend: Backend::TranslationOnly,
            ..Default::default()
        };
        let f = register_slices(&moving, &fixed, &cfg).unwrap();
        assert!((f.du[[0, 0]] + 2.0).abs() <= 0.25, "{}", f.du[[0, 0]]);
        assert!(f.dv[[0, 0]].abs() <= 0.25);
    }

    #[test]
    fn demons_never_increases_error() {
        let spec = PhantomSpec::new([48, 48, 48], 2, 1.0, 0.2, 11).unwrap();
        let (vol, _) = generate_phantom(&spec).unwrap();
        let cfg = RegistrationConfig::default();
        for z in [10, 20, 30] {
            let m = vol.slice(Plane::A, z).unwrap();
            let f = vol.slice(Plane::A, z + 1).unwrap();
            let field = register_slices(&m, &f, &cfg).unwrap();
            let before = warped_mse(&m, &f, &DeformationField2D::zeros(m.dim())).unwrap();
            let after = warped_mse(&m, &f, &field).unwrap();
            assert!(after <= before, "z {z}: {after} > {before}");
            assert!(field.max_displacement() <= cfg.field_cap + 1e-9);
        }
    }

    #[test]
    fn demons_on_adjacent_phantom_slices() {
        let spec = PhantomSpec::new([48, 48, 48], 1, 0.5, 0.05, 7).unwrap();
        let (vol, lab) = generate_phantom(&spec).unwrap();
        let cfg = RegistrationConfig::default();
        let (m, _) = select_annotation_slices(&lab).unwrap();
        for k in [m - 3, m, m + 3] {
            let field = register_slices(&vol.slice(Plane::A, k).unwrap(), &vol.slice(Plane::A, k + 1).unwrap(), &cfg).unwrap();
            let warped = warp_label(&lab.slice(Plane::A, k).unwrap(), &field).unwrap();
            let d = dice_slices(&warped, &lab.slice(Plane::A, k + 1).unwrap());
            assert!(d >= 0.9, "slice {k}: {d}");
        }
    }

    #[test]
    fn warp_and_inverse_warp_nearly_restore() {
        let label = Array2::from_shape_fn((40, 40), |(x, y)| {
            u8::from((x as f64 - 20.0).powi(2) / 81.0 + (y as f64 - 18.0).powi(2) / 49.0 <= 1.0)
        });
        let field = DeformationField2D {
            du: Array2::from_shape_fn((40, 40), |(x, y)| 1.5 * ((x + y) as f64 / 12.0).sin()),
            dv: Array2::from_shape_fn((40, 40), |(x, _)| 0.8 * (x as f64 / 9.0).cos()),
        };
        let there = warp_label(&label, &field).unwrap();
        let back = warp_label(&there, &field.negated()).unwrap();
        assert!(dice_slices(&back, &label) >= 0.95);
    }

    #[test]
    fn identical_slices_propagate_unchanged() {
        let (vol, lab) = translating_tube([32, 32, 32], 6.0, [0.0, 0.0], 0.0, 5).unwrap();
        let m = 13;
        let source = lab.slice(Plane::A, m).unwrap();
        let p = propagate(&vol, &source, Plane::A, m, &RegistrationConfig::default()).unwrap();
        for z in 0..32 {
            assert_eq!(extract_slice(&p.data, Plane::A, z).unwrap(), source, "slice {z}");
        }
    }

    #[test]
    fn source_slice_is_copied_verbatim_and_deterministic() {
        let spec = PhantomSpec::new([32, 32, 32], 1, 0.7, 0.1, 9).unwrap();
        let (vol, lab) = generate_phantom(&spec).unwrap();
        let (m, n) = select_annotation_slices(&lab).unwrap();
        let ann = make_orthogonal_annotation(&lab, m, n).unwrap();
        let cfg = RegistrationConfig::default();
        let (a, b) = propagate_orthogonal(&vol, &ann, &cfg).unwrap();
        assert_eq!(extract_slice(&a.data, Plane::A, m).unwrap(), *ann.label(Plane::A));
        assert_eq!(extract_slice(&b.data, Plane::B, n).unwrap(), *ann.label(Plane::B));
        assert_eq!((a.source_plane, a.source_index), (Plane::A, m));
        let (a2, b2) = propagate_orthogonal(&vol, &ann, &cfg).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn report_covers_every_slice() {
        let spec = PhantomSpec::new([16, 16, 20], 1, 0.5, 0.0, 2).unwrap();
        let (vol, lab) = generate_phantom(&spec).unwrap();
        let (m, _) = select_annotation_slices(&lab).unwrap();
        let (_, report) =
            propagate_with_report(&vol, &lab.slice(Plane::A, m).unwrap(), Plane::A, m, &RegistrationConfig::default())
                .unwrap();
        assert_eq!(report.len(), 20);
        assert!(report.iter().enumerate().all(|(i, r)| r.slice == i && r.d == i.abs_diff(m)));
    }

    #[test]
    fn bad_inputs_error() {
        let cfg = RegistrationConfig::default();
        let a = Array2::<f32>::zeros((8, 8));
        let b = Array2::<f32>::zeros((8, 9));
        assert!(register_slices(&a, &b, &cfg).is_err());
        let mut c = a.clone();
        c[[1, 1]] = f32::NAN;
        assert!(register_slices(&c, &a, &cfg).is_err());
        let bad = RegistrationConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(register_slices(&a, &a, &bad).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn external_backend_reads_tool_output() {
        let dir = tempfile::tempdir().unwrap();
        let prebuilt = dir.path().join("pre");
        save_field(&DeformationField2D::uniform((8, 8), 1.0, 0.0), &prebuilt).unwrap();
        let script = format!(
            "cp {p}.raw \"$1.raw\" && cp {p}.json \"$1.json\"",
            p = prebuilt.to_string_lossy()
        );
        let cfg = RegistrationConfig {
            backend: Backend::ExternalCommand,
            external: Some(ExternalCommand {
                program: "sh".into(),
                args: vec!["-c".into(), script, "reg".into(), "{field}".into()],
            }),
            ..Default::default()
        };
        let img = Array2::<f32>::from_shape_fn((8, 8), |(x, y)| (x * y) as f32);
        let f = register_slices(&img, &img, &cfg).unwrap();
        assert_eq!(f, DeformationField2D::uniform((8, 8), 1.0, 0.0));

        let failing = RegistrationConfig {
            external: Some(ExternalCommand {
                program: "sh".into(),
                args: vec!["-c".into(), "exit 3".into()],
            }),
            ..cfg
        };
        assert!(matches!(register_slices(&img, &img, &failing), Err(Error::ExternalCommand(_))));
    }
}
