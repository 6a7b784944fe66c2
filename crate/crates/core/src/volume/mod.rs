//! Volumes, label volumes, orthogonal planes and sparse annotations.
//!
//! Every grid is indexed `[x, y, z]` with shape `(H, W, D)`. The two
//! annotation planes are axis-aligned: plane [`Plane::A`] holds the slices
//! `z = const` (shape `H x W`), plane [`Plane::B`] the slices `x = const`
//! (shape `W x D`). The two planes share the `y` axis, so an `A` slice and a
//! `B` slice always intersect in a line of `W` voxels.

mod io;
mod manifest;

pub use io::{load_label, load_volume, save_label, save_volume, SimpleHeader};
pub use manifest::{Manifest, ManifestEntry};

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel spacing in millimetres along `(x, y, z)`.
pub type Spacing = [f64; 3];

/// Smallest admissible extent of a full volume along any axis.
pub const MIN_EXTENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plane {
    /// Slices along axis 2.
    A,
    /// Slices along axis 0.
    B,
}

impl Plane {
    pub const BOTH: [Plane; 2] = [Plane::A, Plane::B];

    /// Grid axis the slice index runs along.
    pub fn axis(self) -> usize {
        match self {
            Plane::A => 2,
            Plane::B => 0,
        }
    }

    pub fn other(self) -> Plane {
        match self {
            Plane::A => Plane::B,
            Plane::B => Plane::A,
        }
    }

    /// Number of slices of this plane in a grid of shape `dims`.
    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.axis()]
    }

    /// Shape of a single slice of this plane.
    pub fn slice_shape(self, dims: [usize; 3]) -> [usize; 2] {
        match self {
            Plane::A => [dims[0], dims[1]],
            Plane::B => [dims[1], dims[2]],
        }
    }

    /// Slice index of voxel `(x, y, z)` in this plane.
    pub fn index_of(self, voxel: [usize; 3]) -> usize {
        voxel[self.axis()]
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::A => "A",
            Plane::B => "B",
        }
    }
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "plane {}", self.name())
    }
}

pub(crate) fn dims_of<T>(a: &Array3<T>) -> [usize; 3] {
    let s = a.shape();
    [s[0], s[1], s[2]]
}

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid("spacing", format!("components must be > 0, got {spacing:?}")))
    }
}

fn check_extent(dims: [usize; 3]) -> Result<()> {
    if dims.iter().all(|&d| d >= MIN_EXTENT) {
        Ok(())
    } else {
        Err(Error::invalid("shape", format!("every extent must be >= {MIN_EXTENT}, got {dims:?}")))
    }
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    data: Array3<f32>,
    spacing: Spacing,
    id: String,
}

impl Volume3D {
    pub fn new(data: Array3<f32>, spacing: Spacing, id: impl Into<String>) -> Result<Self> {
        check_extent(dims_of(&data))?;
        check_spacing(spacing)?;
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("data", format!("non-finite value at flat index {bad}")));
        }
        Ok(Self {
            data,
            spacing,
            id: id.into(),
        })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dims(&self) -> [usize; 3] {
        dims_of(&self.data)
    }

    pub fn slice(&self, plane: Plane, index: usize) -> Result<Array2<f32>> {
        extract_slice(&self.data, plane, index)
    }

    /// Cropped copy that is itself a valid volume.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Volume3D> {
        let data = crop_patch(&self.data, origin, size)?;
        Volume3D::new(data, self.spacing, self.id.clone())
    }

    /// Zero-mean, unit-variance copy. Constant volumes are only centred.
    pub fn standardized(&self) -> Volume3D {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let data = self.data.mapv(|v| ((v as f64 - mean) / std) as f32);
        Volume3D {
            data,
            spacing: self.spacing,
            id: self.id.clone(),
        }
    }
}

/// Binary label volume with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    data: Array3<u8>,
    spacing: Spacing,
}

impl LabelVolume {
    pub fn new(data: Array3<u8>, spacing: Spacing) -> Result<Self> {
        check_spacing(spacing)?;
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid("label", format!("values must be 0 or 1, found {bad}")));
        }
        Ok(Self { data, spacing })
    }

    /// Thresholds a probability grid at `threshold` (inclusive).
    pub fn from_probabilities(p: &Array3<f32>, threshold: f32, spacing: Spacing) -> Result<Self> {
        Self::new(p.mapv(|v| u8::from(v >= threshold)), spacing)
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn into_data(self) -> Array3<u8> {
        self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        dims_of(&self.data)
    }

    pub fn slice(&self, plane: Plane, index: usize) -> Result<Array2<u8>> {
        extract_slice(&self.data, plane, index)
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Checks that this label can be paired with `volume`.
    pub fn check_pairs_with(&self, volume: &Volume3D) -> Result<()> {
        if self.dims() != volume.dims() {
            return Err(Error::ShapeMismatch {
                expected: volume.dims().to_vec(),
                got: self.dims().to_vec(),
            });
        }
        Ok(())
    }
}

fn check_index(plane: Plane, index: usize, dims: [usize; 3]) -> Result<()> {
    let extent = plane.extent(dims);
    if index < extent {
        Ok(())
    } else {
        Err(Error::Bounds {
            what: plane.to_string(),
            index,
            extent,
        })
    }
}

/// Copy of slice `index` of `plane`.
pub fn extract_slice<T: Clone>(data: &Array3<T>, plane: Plane, index: usize) -> Result<Array2<T>> {
    check_index(plane, index, dims_of(data))?;
    Ok(data.index_axis(Axis(plane.axis()), index).to_owned())
}

/// Writes `slice` into slice `index` of `plane`.
pub fn insert_slice<T: Clone>(data: &mut Array3<T>, plane: Plane, index: usize, slice: ArrayView2<T>) -> Result<()> {
    let dims = dims_of(data);
    check_index(plane, index, dims)?;
    let expected = plane.slice_shape(dims);
    if slice.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            got: slice.shape().to_vec(),
        });
    }
    data.index_axis_mut(Axis(plane.axis()), index).assign(&slice);
    Ok(())
}

/// Copy of the box `origin .. origin + size`. No implicit padding.
pub fn crop_patch<T: Clone>(data: &Array3<T>, origin: [usize; 3], size: [usize; 3]) -> Result<Array3<T>> {
    let dims = dims_of(data);
    for axis in 0..3 {
        if size[axis] == 0 {
            return Err(Error::invalid("patch size", format!("zero extent on axis {axis}")));
        }
        let end = origin[axis] + size[axis];
        if end > dims[axis] {
            return Err(Error::Bounds {
                what: format!("crop end on axis {axis}"),
                index: end,
                extent: dims[axis],
            });
        }
    }
    Ok(data
        .slice(s![
            origin[0]..origin[0] + size[0],
            origin[1]..origin[1] + size[1],
            origin[2]..origin[2] + size[2]
        ])
        .to_owned())
}

/// Sparse ground truth: one labelled slice in each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalAnnotation {
    m: usize,
    n: usize,
    label_a: Array2<u8>,
    label_b: Array2<u8>,
    dims: [usize; 3],
}

impl OrthogonalAnnotation {
    /// `m` indexes plane A, `n` plane B; `dims` is the annotated volume's shape.
    pub fn new(m: usize, n: usize, label_a: Array2<u8>, label_b: Array2<u8>, dims: [usize; 3]) -> Result<Self> {
        check_index(Plane::A, m, dims)?;
        check_index(Plane::B, n, dims)?;
        for (plane, label) in [(Plane::A, &label_a), (Plane::B, &label_b)] {
            let expected = plane.slice_shape(dims);
            if label.shape() != expected {
                return Err(Error::ShapeMismatch {
                    expected: expected.to_vec(),
                    got: label.shape().to_vec(),
                });
            }
            if let Some(bad) = label.iter().find(|&&v| v > 1) {
                return Err(Error::invalid("annotation", format!("{plane} label value {bad}")));
            }
        }
        // The slices share the voxels (n, y, m).
        for y in 0..dims[1] {
            if label_a[[n, y]] != label_b[[y, m]] {
                return Err(Error::invalid(
                    "annotation",
                    format!("slices disagree at their intersection voxel ({n}, {y}, {m})"),
                ));
            }
        }
        Ok(Self {
            m,
            n,
            label_a,
            label_b,
            dims,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn index(&self, plane: Plane) -> usize {
        match plane {
            Plane::A => self.m,
            Plane::B => self.n,
        }
    }

    pub fn label(&self, plane: Plane) -> &Array2<u8> {
        match plane {
            Plane::A => &self.label_a,
            Plane::B => &self.label_b,
        }
    }

    pub fn is_labeled(&self, voxel: [usize; 3]) -> bool {
        voxel[2] == self.m || voxel[0] == self.n
    }

    /// Ground-truth value at `voxel`, if it lies on an annotated slice.
    pub fn value(&self, voxel: [usize; 3]) -> Option<u8> {
        let [x, y, z] = voxel;
        if z == self.m {
            Some(self.label_a[[x, y]])
        } else if x == self.n {
            Some(self.label_b[[y, z]])
        } else {
            None
        }
    }

    /// Number of distinct labelled voxels (the shared line is counted once).
    pub fn labeled_voxel_count(&self) -> usize {
        let [h, w, d] = self.dims;
        h * w + w * d - w
    }

    /// Boolean grid of the labelled voxels.
    pub fn labeled_mask(&self) -> Array3<bool> {
        Array3::from_shape_fn(self.dims, |(x, _, z)| z == self.m || x == self.n)
    }

    /// Labels the two annotated slices are expected to agree on.
    pub fn intersection_consistent(&self) -> bool {
        (0..self.dims[1]).all(|y| self.label_a[[self.n, y]] == self.label_b[[y, self.m]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord_volume(dims: [usize; 3]) -> Array3<f32> {
        Array3::from_shape_fn(dims, |(x, y, z)| (x * 10_000 + y * 100 + z) as f32)
    }

    #[test]
    fn constant_volume_gives_constant_slices() {
        let v = Array3::from_elem([6, 7, 8], 3.0f32);
        for plane in Plane::BOTH {
            let s = extract_slice(&v, plane, 2).unwrap();
            assert!(s.iter().all(|&x| x == 3.0));
        }
    }

    #[test]
    fn z_coordinate_field_plane_a() {
        let v = Array3::from_shape_fn([8, 8, 8], |(_, _, z)| z as f32);
        let s = extract_slice(&v, Plane::A, 5).unwrap();
        assert_eq!(s.shape(), &[8, 8]);
        assert!(s.iter().all(|&x| x == 5.0));
    }

    #[test]
    fn slice_shapes_follow_plane_axes() {
        let v = coord_volume([5, 6, 7]);
        assert_eq!(extract_slice(&v, Plane::A, 0).unwrap().shape(), &[5, 6]);
        assert_eq!(extract_slice(&v, Plane::B, 0).unwrap().shape(), &[6, 7]);
        let b = extract_slice(&v, Plane::B, 3).unwrap();
        assert_eq!(b[[2, 4]], (3 * 10_000 + 2 * 100 + 4) as f32);
    }

    #[test]
    fn extract_insert_round_trip() {
        let v = coord_volume([6, 6, 9]);
        for plane in Plane::BOTH {
            let k = 3;
            let s = extract_slice(&v, plane, k).unwrap();
            let mut z = Array3::<f32>::zeros([6, 6, 9]);
            insert_slice(&mut z, plane, k, s.view()).unwrap();
            assert_eq!(extract_slice(&z, plane, k).unwrap(), s);
            // Nothing lands off the slice.
            for ((x, y, zz), &val) in z.indexed_iter() {
                if Plane::index_of(plane, [x, y, zz]) != k {
                    assert_eq!(val, 0.0);
                }
            }
        }
    }

    #[test]
    fn out_of_range_slice_names_plane_and_extent() {
        let v = coord_volume([5, 5, 6]);
        let err = extract_slice(&v, Plane::A, 6).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("plane A") && msg.contains("extent 6"), "{msg}");
        assert_eq!(err.kind(), "bounds");
    }

    #[test]
    fn crop_full_and_single_voxel() {
        let v = coord_volume([6, 7, 8]);
        assert_eq!(crop_patch(&v, [0, 0, 0], [6, 7, 8]).unwrap(), v);
        let one = crop_patch(&v, [2, 3, 4], [1, 1, 1]).unwrap();
        assert_eq!(one.shape(), &[1, 1, 1]);
        assert_eq!(one[[0, 0, 0]], v[[2, 3, 4]]);
        let p = crop_patch(&v, [1, 2, 3], [3, 3, 3]).unwrap();
        assert_eq!(p[[2, 1, 0]], v[[3, 3, 3]]);
    }

    #[test]
    fn crop_out_of_bounds_errors() {
        let v = coord_volume([6, 7, 8]);
        assert!(matches!(crop_patch(&v, [4, 0, 0], [3, 1, 1]), Err(Error::Bounds { .. })));
    }

    #[test]
    fn volume_invariants() {
        assert!(Volume3D::new(Array3::zeros([3, 8, 8]), [1.0; 3], "x").is_err());
        assert!(Volume3D::new(Array3::zeros([4, 8, 8]), [1.0, 0.0, 1.0], "x").is_err());
        let mut d = Array3::zeros([4, 4, 4]);
        d[[1, 1, 1]] = f32::NAN;
        assert!(Volume3D::new(d, [1.0; 3], "x").is_err());
        assert!(LabelVolume::new(Array3::from_elem([4, 4, 4], 2u8), [1.0; 3]).is_err());
    }

    #[test]
    fn annotation_intersection_checked() {
        let dims = [6, 5, 7];
        let mut a = Array2::zeros([6, 5]);
        let mut b = Array2::zeros([5, 7]);
        a[[2, 3]] = 1;
        assert!(OrthogonalAnnotation::new(4, 2, a.clone(), b.clone(), dims).is_err());
        b[[3, 4]] = 1;
        let ann = OrthogonalAnnotation::new(4, 2, a, b, dims).unwrap();
        assert!(ann.intersection_consistent());
        assert_eq!(ann.value([2, 3, 4]), Some(1));
        assert_eq!(ann.value([0, 0, 0]), None);
        assert_eq!(ann.labeled_voxel_count(), ann.labeled_mask().iter().filter(|&&b| b).count());
    }

    #[test]
    fn standardized_is_zero_mean_unit_var() {
        let v = Volume3D::new(coord_volume([4, 5, 6]), [1.0; 3], "c").unwrap().standardized();
        let n = v.data().len() as f64;
        let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = v.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
    }
}
