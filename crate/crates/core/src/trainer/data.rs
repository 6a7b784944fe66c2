use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::labels::{build_weight_map, label_mix, MixedLabel, WeightMap};
use crate::registration::{propagate, PseudoLabelVolume, RegistrationConfig};
use crate::synthetic::make_orthogonal_annotation;
use crate::volume::{crop_patch, load_label, load_volume, LabelVolume, Manifest, OrthogonalAnnotation, Plane, Volume3D};

/// A labelled training volume with both mixed labels ready; weight maps are
/// rebuilt on demand for the current decay rate.
#[derive(Debug, Clone)]
pub struct PreparedVolume {
    pub id: String,
    /// Standardised intensities.
    pub image: Array3<f32>,
    pub annotation: OrthogonalAnnotation,
    pub mixed_a: MixedLabel,
    pub mixed_b: MixedLabel,
}

impl PreparedVolume {
    pub fn mixed(&self, plane: Plane) -> &MixedLabel {
        match plane {
            Plane::A => &self.mixed_a,
            Plane::B => &self.mixed_b,
        }
    }

    pub fn weight_map(&self, plane: Plane, alpha: f64) -> Result<WeightMap> {
        let ann = &self.annotation;
        build_weight_map(ann, plane, ann.index(plane), alpha, ann.dims())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.annotation.dims()
    }
}

/// Builds both mixed labels for one annotated volume from precomputed
/// pseudo labels.
pub fn prepare_from_pseudo(volume: &Volume3D, annotation: OrthogonalAnnotation, pseudo_a: &PseudoLabelVolume, pseudo_b: &PseudoLabelVolume) -> Result<PreparedVolume> {
    if volume.dims() != annotation.dims() {
        return Err(Error::ShapeMismatch {
            expected: annotation.dims().to_vec(),
            got: volume.dims().to_vec(),
        });
    }
    Ok(PreparedVolume {
        id: volume.id().to_string(),
        image: volume.standardized().into_data(),
        mixed_a: label_mix(pseudo_a, &annotation)?,
        mixed_b: label_mix(pseudo_b, &annotation)?,
        annotation,
    })
}

/// Propagates both annotated slices once and mixes them with the annotation.
pub fn prepare_labeled_volume(volume: &Volume3D, annotation: OrthogonalAnnotation, reg: &RegistrationConfig) -> Result<PreparedVolume> {
    let pa = propagate(volume, annotation.label(Plane::A), Plane::A, annotation.m(), reg)?;
    let pb = propagate(volume, annotation.label(Plane::B), Plane::B, annotation.n(), reg)?;
    prepare_from_pseudo(volume, annotation, &pa, &pb)
}

/// Everything the co-training loop consumes.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub labeled: Vec<PreparedVolume>,
    /// Standardised unlabelled volumes.
    pub unlabeled: Vec<Array3<f32>>,
    /// Raw validation volumes and their dense labels.
    pub validation: Vec<(Volume3D, LabelVolume)>,
}

impl TrainingData {
    /// Reads a training manifest (annotated entries must carry a dense label
    /// and slice indices) and an optional validation manifest, propagating
    /// labels with `reg`. `pseudo` optionally supplies precomputed pseudo
    /// labels per annotated entry, in manifest order.
    pub fn from_manifests(train: &Manifest, validation: Option<&Manifest>, reg: &RegistrationConfig, pseudo: Option<&[(PseudoLabelVolume, PseudoLabelVolume)]>) -> Result<Self> {
        let mut data = TrainingData::default();
        for (i, entry) in train.labeled().enumerate() {
            let volume = load_volume(train.resolve(&entry.volume_path))?;
            let label_path = entry.label_path.as_deref().expect("validated by manifest");
            let label = load_label(train.resolve(label_path))?;
            let (m, n) = match (entry.m, entry.n) {
                (Some(m), Some(n)) => (m, n),
                _ => crate::synthetic::select_annotation_slices(&label)?,
            };
            let ann = make_orthogonal_annotation(&label, m, n)?;
            let prepared = match pseudo.and_then(|p| p.get(i)) {
                Some((pa, pb)) => prepare_from_pseudo(&volume, ann, pa, pb)?,
                None => prepare_labeled_volume(&volume, ann, reg)?,
            };
            data.labeled.push(prepared);
        }
        for entry in train.unlabeled() {
            data.unlabeled.push(load_volume(train.resolve(&entry.volume_path))?.standardized().into_data());
        }
        if let Some(val) = validation {
            for entry in &val.entries {
                let volume = load_volume(val.resolve(&entry.volume_path))?;
                let Some(label_path) = entry.label_path.as_deref() else {
                    return Err(Error::invalid("validation", format!("entry {} has no label", entry.volume_path)));
                };
                data.validation.push((volume, load_label(val.resolve(label_path))?));
            }
        }
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labeled.is_empty() {
            return Err(Error::invalid("manifest", "no annotated volumes"));
        }
        Ok(())
    }
}

fn uniform_origin(dims: [usize; 3], patch: [usize; 3], rng: &mut impl Rng) -> [usize; 3] {
    std::array::from_fn(|a| rng.gen_range(0..=dims[a] - patch[a]))
}

/// Random patch origin; with probability `slice_prob` the patch is forced
/// to contain part of one of the two annotated slices.
pub fn labeled_origin(ann: &OrthogonalAnnotation, patch: [usize; 3], slice_prob: f64, rng: &mut impl Rng) -> [usize; 3] {
    let dims = ann.dims();
    let mut origin = uniform_origin(dims, patch, rng);
    if rng.gen_bool(slice_prob) {
        let plane = if rng.gen_bool(0.5) { Plane::A } else { Plane::B };
        let axis = plane.axis();
        let idx = ann.index(plane);
        let lo = (idx + 1).saturating_sub(patch[axis]);
        let hi = idx.min(dims[axis] - patch[axis]);
        origin[axis] = rng.gen_range(lo..=hi);
    }
    origin
}

pub fn unlabeled_origin(dims: [usize; 3], patch: [usize; 3], rng: &mut impl Rng) -> [usize; 3] {
    uniform_origin(dims, patch, rng)
}

pub fn check_patch_fits(dims: [usize; 3], patch: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| patch[a] > dims[a]) {
        return Err(Error::invalid("patch", format!("patch {patch:?} larger than volume {dims:?}")));
    }
    Ok(())
}

/// Image, label and weights of one labelled patch.
pub(crate) fn labeled_patch(vol: &PreparedVolume, plane: Plane, weights: &WeightMap, origin: [usize; 3], patch: [usize; 3]) -> Result<(Array3<f32>, Array3<u8>, Array3<f64>)> {
    Ok((
        crop_patch(&vol.image, origin, patch)?,
        crop_patch(&vol.mixed(plane).data, origin, patch)?,
        crop_patch(&weights.data, origin, patch)?,
    ))
}
