//! Mixing propagated labels with the annotated slices, and the per-voxel
//! credibility weights that go with them.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::registration::PseudoLabelVolume;
use crate::volume::{dims_of, OrthogonalAnnotation, Plane};

/// Where a mixed-label voxel came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    GroundTruth,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedLabel {
    pub data: Array3<u8>,
    pub source: Array3<LabelSource>,
}

impl MixedLabel {
    pub fn dims(&self) -> [usize; 3] {
        dims_of(&self.data)
    }

    pub fn ground_truth_count(&self) -> usize {
        self.source.iter().filter(|&&s| s == LabelSource::GroundTruth).count()
    }
}

/// Pseudo label everywhere except on the two annotated slices, which keep
/// their annotated values.
pub fn label_mix(pseudo: &PseudoLabelVolume, annotation: &OrthogonalAnnotation) -> Result<MixedLabel> {
    let dims = dims_of(&pseudo.data);
    if dims != annotation.dims() {
        return Err(Error::ShapeMismatch {
            expected: annotation.dims().to_vec(),
            got: dims.to_vec(),
        });
    }
    let mut data = pseudo.data.clone();
    let mut source = Array3::from_elem(dims, LabelSource::Pseudo);
    for ((x, y, z), v) in data.indexed_iter_mut() {
        if let Some(gt) = annotation.value([x, y, z]) {
            *v = gt;
            source[[x, y, z]] = LabelSource::GroundTruth;
        }
    }
    Ok(MixedLabel { data, source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub data: Array3<f64>,
    pub alpha: f64,
    pub plane: Plane,
    pub source_index: usize,
}

impl WeightMap {
    pub fn total(&self) -> f64 {
        self.data.sum()
    }
}

/// Weight 1 on every voxel of either annotated slice, `alpha^d` elsewhere,
/// with `d` the slice distance from `source_index` along `plane`.
pub fn build_weight_map(
    annotation: &OrthogonalAnnotation,
    plane: Plane,
    source_index: usize,
    alpha: f64,
    dims: [usize; 3],
) -> Result<WeightMap> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} is outside [0, 1)")));
    }
    if dims != annotation.dims() {
        return Err(Error::ShapeMismatch {
            expected: annotation.dims().to_vec(),
            got: dims.to_vec(),
        });
    }
    let extent = plane.extent(dims);
    if source_index >= extent {
        return Err(Error::Bounds {
            what: format!("{plane} source slice"),
            index: source_index,
            extent,
        });
    }
    let per_slice: Vec<f64> = (0..extent)
        .map(|k| alpha.powi(k.abs_diff(source_index) as i32))
        .collect();
    let data = Array3::from_shape_fn(dims, |(x, y, z)| {
        if annotation.is_labeled([x, y, z]) {
            1.0
        } else {
            per_slice[plane.index_of([x, y, z])]
        }
    });
    Ok(WeightMap {
        data,
        alpha,
        plane,
        source_index,
    })
}
