//! Deterministic synthetic phantoms.
//!
//! A phantom is a union of tubes running along axis 2. Each tube has an
//! elliptic cross-section whose centre follows a gently curving path, moving
//! by exactly `drift` voxels per slice, so neighbouring plane-A slices are
//! near-translates of each other. Cross-sections are opened with a 3x3
//! square before use, which makes every plane-A slice of a single tube a
//! fixed point of [`crate::registration::morphology_cleanup`].

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::registration::morphology::open3x3;
use crate::volume::{
    extract_slice, save_label, save_volume, LabelVolume, Manifest, ManifestEntry, OrthogonalAnnotation, Plane,
    Volume3D,
};

pub const MIN_PHANTOM_EXTENT: usize = 16;

const FOREGROUND: f32 = 1.0;
const BACKGROUND: f32 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub n_blobs: usize,
    /// Centre displacement per plane-A slice, in voxels.
    pub drift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(dims: [usize; 3], n_blobs: usize, drift: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            dims,
            n_blobs,
            drift,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < MIN_PHANTOM_EXTENT) {
            return Err(Error::invalid("dims", format!("each extent must be >= {MIN_PHANTOM_EXTENT}")));
        }
        if self.n_blobs == 0 {
            return Err(Error::invalid("n_blobs", "need at least one blob"));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::invalid("drift", "must be finite and >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One tube of the phantom.
#[derive(Debug, Clone)]
struct Tube {
    radius: [f64; 2],
    z_range: (usize, usize),
    /// Centre at slice `z_mid`.
    center: [f64; 2],
    z_mid: f64,
    heading: f64,
    curvature: f64,
    drift: f64,
}

impl Tube {
    fn random(rng: &mut ChaCha8Rng, dims: [usize; 3], drift: f64) -> Tube {
        let [h, w, d] = dims;
        let small = h.min(w) as f64;
        let r_lo = (0.12 * small).max(2.0);
        let r_hi = (0.2 * small).max(r_lo + 0.5);
        let radius = [rng.gen_range(r_lo..r_hi), rng.gen_range(r_lo..r_hi)];
        let len = ((rng.gen_range(0.45..0.7) * d as f64).round() as usize).max(3);
        let start = rng.gen_range(1..(d - len).max(2));
        let z_range = (start, (start + len).min(d - 1));
        let z_mid = (z_range.0 + z_range.1 - 1) as f64 / 2.0;
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let curvature = rng.gen_range(-0.08..0.08);
        // Keep the whole path inside the volume.
        let reach = drift * (len as f64) / 2.0;
        let mut center = [0.0; 2];
        for (axis, extent) in [h, w].into_iter().enumerate() {
            let lo = radius[axis] + reach + 1.0;
            let hi = extent as f64 - 1.0 - radius[axis] - reach - 1.0;
            center[axis] = if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                (extent as f64 - 1.0) / 2.0
            };
        }
        Tube {
            radius,
            z_range,
            center,
            z_mid,
            heading,
            curvature,
            drift,
        }
    }

    /// Centre of the cross-section at slice `z`: integrates a unit-speed
    /// heading that turns by `curvature` per slice.
    fn center_at(&self, z: usize) -> [f64; 2] {
        let mut c = self.center;
        let steps = z as f64 - self.z_mid;
        let n = steps.abs().floor() as usize;
        let dir = steps.signum();
        let mut t = 0.0;
        for _ in 0..n {
            let angle = self.heading + self.curvature * t;
            c[0] += dir * self.drift * angle.cos();
            c[1] += dir * self.drift * angle.sin();
            t += dir;
        }
        let frac = steps - dir * n as f64;
        if frac != 0.0 {
            let angle = self.heading + self.curvature * t;
            c[0] += frac * self.drift * angle.cos();
            c[1] += frac * self.drift * angle.sin();
        }
        c
    }
}

fn rasterize_ellipse(shape: [usize; 2], center: [f64; 2], radius: [f64; 2]) -> Array2<u8> {
    let raw = Array2::from_shape_fn(shape, |(x, y)| {
        let u = (x as f64 - center[0]) / radius[0];
        let v = (y as f64 - center[1]) / radius[1];
        u8::from(u * u + v * v <= 1.0)
    });
    open3x3(&raw)
}

fn add_noise(label: &Array3<u8>, sigma: f64, rng: &mut ChaCha8Rng) -> Array3<f32> {
    label.mapv(|l| {
        let base = if l == 1 { FOREGROUND } else { BACKGROUND };
        let noise: f64 = rng.sample(StandardNormal);
        base + (sigma * noise) as f32
    })
}

/// Volume and dense ground truth for `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3D, LabelVolume)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.dims;
    let tubes: Vec<Tube> = (0..spec.n_blobs).map(|_| Tube::random(&mut rng, dims, spec.drift)).collect();
    let mut label = Array3::<u8>::zeros(dims);
    for tube in &tubes {
        for z in tube.z_range.0..tube.z_range.1 {
            let section = rasterize_ellipse([dims[0], dims[1]], tube.center_at(z), tube.radius);
            for ((x, y), &v) in section.indexed_iter() {
                if v == 1 {
                    label[[x, y, z]] = 1;
                }
            }
        }
    }
    let image = add_noise(&label, spec.noise_sigma, &mut rng);
    let spacing = [1.0; 3];
    Ok((
        Volume3D::new(image, spacing, format!("phantom-{}", spec.seed))?,
        LabelVolume::new(label, spacing)?,
    ))
}

/// A single tube spanning every plane-A slice whose cross-section is an
/// exact translate from one slice to the next: slice `z` holds the slice at
/// `z_mid` shifted by `round(shift * (z - z_mid))`.
pub fn translating_tube(
    dims: [usize; 3],
    radius: f64,
    shift: [f64; 2],
    noise_sigma: f64,
    seed: u64,
) -> Result<(Volume3D, LabelVolume)> {
    if dims.iter().any(|&d| d < MIN_PHANTOM_EXTENT) {
        return Err(Error::invalid("dims", format!("each extent must be >= {MIN_PHANTOM_EXTENT}")));
    }
    let [h, w, d] = dims;
    let z_mid = (d / 2) as f64;
    let center = [(h / 2) as f64, (w / 2) as f64];
    let template = rasterize_ellipse([h, w], center, [radius, radius]);
    let mut label = Array3::<u8>::zeros(dims);
    for z in 0..d {
        let ox = (shift[0] * (z as f64 - z_mid)).round() as isize;
        let oy = (shift[1] * (z as f64 - z_mid)).round() as isize;
        for ((x, y), &v) in template.indexed_iter() {
            if v == 0 {
                continue;
            }
            let (tx, ty) = (x as isize + ox, y as isize + oy);
            if tx >= 0 && ty >= 0 && (tx as usize) < h && (ty as usize) < w {
                label[[tx as usize, ty as usize, z]] = 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = add_noise(&label, noise_sigma, &mut rng);
    Ok((
        Volume3D::new(image, [1.0; 3], format!("tube-{seed}"))?,
        LabelVolume::new(label, [1.0; 3])?,
    ))
}

/// Annotation slice indices: the foreground centroid along each plane's
/// axis, rounded half toward the lower index, moved to the nearest slice
/// containing foreground if the centroid slice is empty.
pub fn select_annotation_slices(label: &LabelVolume) -> Result<(usize, usize)> {
    let dims = label.dims();
    let mut pick = [0usize; 2];
    for (slot, plane) in Plane::BOTH.into_iter().enumerate() {
        let axis = plane.axis();
        let mut counts = vec![0usize; dims[axis]];
        for ((x, y, z), &v) in label.data().indexed_iter() {
            if v == 1 {
                counts[[x, y, z][axis]] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::NoTarget);
        }
        let centroid = counts.iter().enumerate().map(|(i, &c)| (i * c) as f64).sum::<f64>() / total as f64;
        let rounded = (centroid - 0.5).ceil().max(0.0) as usize;
        pick[slot] = (0..dims[axis])
            .filter(|&i| counts[i] > 0)
            .min_by_key(|&i| (i.abs_diff(rounded), i))
            .expect("nonempty");
    }
    Ok((pick[0], pick[1]))
}

/// Keeps only slices `m` (plane A) and `n` (plane B) of `label`.
pub fn make_orthogonal_annotation(label: &LabelVolume, m: usize, n: usize) -> Result<OrthogonalAnnotation> {
    let a = extract_slice(label.data(), Plane::A, m)?;
    let b = extract_slice(label.data(), Plane::B, n)?;
    OrthogonalAnnotation::new(m, n, a, b, label.dims())
}

/// A synthetic train/test split written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub dims: [usize; 3],
    pub n_blobs: usize,
    pub drift: f64,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_annotated: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 48],
            n_blobs: 1,
            drift: 0.5,
            noise_sigma: 0.3,
            n_train: 20,
            n_annotated: 3,
            n_test: 4,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    /// Phantom specs for the training volumes followed by the test volumes.
    pub fn phantom_specs(&self) -> Result<Vec<PhantomSpec>> {
        if self.n_annotated > self.n_train {
            return Err(Error::invalid("n_annotated", "cannot exceed n_train"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_train + self.n_test)
            .map(|_| PhantomSpec::new(self.dims, self.n_blobs, self.drift, self.noise_sigma, rng.gen()))
            .collect()
    }
}

/// Paths of a dataset written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Writes every phantom in the simple format plus `train.json` and
/// `test.json` manifests. Annotated entries carry their selected `(m, n)`.
pub fn write_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetPaths> {
    let specs = spec.phantom_specs()?;
    let vol_dir = out.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, ps) in specs.iter().enumerate() {
        let (vol, lab) = generate_phantom(ps)?;
        let name = format!("case_{i:03}");
        save_volume(&vol, vol_dir.join(format!("{name}_img")))?;
        save_label(&lab, vol_dir.join(format!("{name}_lab")))?;
        let annotated = i < spec.n_annotated;
        let (m, n) = if annotated {
            let (m, n) = select_annotation_slices(&lab)?;
            (Some(m), Some(n))
        } else {
            (None, None)
        };
        let entry = ManifestEntry {
            volume_path: format!("volumes/{name}_img.json"),
            label_path: Some(format!("volumes/{name}_lab.json")),
            annotated,
            m,
            n,
        };
        if i < spec.n_train {
            train.push(entry);
        } else {
            test.push(entry);
        }
    }
    let provenance = Provenance::new("synth", spec, spec.seed);
    let paths = DatasetPaths {
        train_manifest: out.join("train.json"),
        test_manifest: out.join("test.json"),
    };
    for (entries, path) in [(train, &paths.train_manifest), (test, &paths.test_manifest)] {
        let mut manifest = Manifest::new(entries);
        manifest.provenance = Some(provenance.clone());
        manifest.save(path)?;
    }
    Ok(paths)
}
