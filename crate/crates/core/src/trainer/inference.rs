use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmodel::SegNet;
use crate::volume::{dims_of, LabelVolume, Volume3D};

/// Anything that maps an image patch to per-voxel foreground probabilities.
pub trait PatchPredictor {
    fn predict_patch(&self, patch: &Array3<f32>) -> Result<Array3<f32>>;
}

impl PatchPredictor for SegNet {
    fn predict_patch(&self, patch: &Array3<f32>) -> Result<Array3<f32>> {
        self.forward(patch, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub patch: [usize; 3],
    pub strides: [usize; 3],
    /// Average both networks; otherwise only the first is used.
    pub ensemble: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            patch: [16, 16, 16],
            strides: [8, 8, 8],
            ensemble: true,
        }
    }
}

/// Window start positions along one axis. The last window is moved back to
/// end exactly at the border, so every index is covered.
pub fn window_starts(extent: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 || patch > extent || stride > patch {
        return Err(Error::invalid(
            "window",
            format!("patch {patch} and stride {stride} do not tile extent {extent}"),
        ));
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|s| s + patch <= extent).collect();
    if *starts.last().expect("patch <= extent") + patch < extent {
        starts.push(extent - patch);
    }
    Ok(starts)
}

/// Number of windows covering each voxel.
pub fn coverage(dims: [usize; 3], patch: [usize; 3], strides: [usize; 3]) -> Result<Array3<u32>> {
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(dims[a], patch[a], strides[a])).collect::<Result<_>>()?;
    let mut count = Array3::<u32>::zeros(dims);
    for &x in &starts[0] {
        for &y in &starts[1] {
            for &z in &starts[2] {
                count.slice_mut(s![x..x + patch[0], y..y + patch[1], z..z + patch[2]]).mapv_inplace(|c| c + 1);
            }
        }
    }
    Ok(count)
}

/// Per-voxel mean of overlapping patch predictions, averaged over `models`.
pub fn sliding_window_predict<P: PatchPredictor + ?Sized>(models: &[&P], volume: &Array3<f32>, patch: [usize; 3], strides: [usize; 3]) -> Result<Array3<f32>> {
    if models.is_empty() {
        return Err(Error::invalid("models", "need at least one model"));
    }
    let dims = dims_of(volume);
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(dims[a], patch[a], strides[a])).collect::<Result<_>>()?;
    let count = coverage(dims, patch, strides)?;
    let mut total = Array3::<f32>::zeros(dims);
    for model in models {
        let mut acc = Array3::<f32>::zeros(dims);
        for &x in &starts[0] {
            for &y in &starts[1] {
                for &z in &starts[2] {
                    let window = s![x..x + patch[0], y..y + patch[1], z..z + patch[2]];
                    let p = model.predict_patch(&volume.slice(window).to_owned())?;
                    let mut dst = acc.slice_mut(window);
                    dst += &p;
                }
            }
        }
        acc.zip_mut_with(&count, |a, &c| *a /= c as f32);
        total += &acc;
    }
    total /= models.len() as f32;
    Ok(total)
}

/// Standardises `volume` and predicts it with one or both models.
pub fn predict_volume(models: [&SegNet; 2], volume: &Volume3D, cfg: &InferenceConfig) -> Result<Array3<f32>> {
    let image = volume.standardized().into_data();
    let used: &[&SegNet] = if cfg.ensemble { &models } else { &models[..1] };
    sliding_window_predict(used, &image, cfg.patch, cfg.strides)
}

pub fn threshold(prob: &Array3<f32>, volume: &Volume3D) -> Result<LabelVolume> {
    LabelVolume::from_probabilities(prob, 0.5, volume.spacing())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Constant(f32);

    impl PatchPredictor for Constant {
        fn predict_patch(&self, patch: &Array3<f32>) -> Result<Array3<f32>> {
            Ok(Array3::from_elem(patch.raw_dim(), self.0))
        }
    }

    /// Predicts the mean intensity of the patch everywhere, so overlaps matter.
    struct PatchMean;

    impl PatchPredictor for PatchMean {
        fn predict_patch(&self, patch: &Array3<f32>) -> Result<Array3<f32>> {
            Ok(Array3::from_elem(patch.raw_dim(), patch.mean().unwrap()))
        }
    }

    #[test]
    fn non_overlapping_constant_model() {
        let v = Array3::<f32>::zeros((8, 8, 4));
        let p = sliding_window_predict(&[&Constant(0.3)], &v, [4, 4, 4], [4, 4, 4]).unwrap();
        assert!(p.iter().all(|&x| x == 0.3));
    }

    #[test]
    fn ensemble_averages_models() {
        let v = Array3::<f32>::zeros((8, 8, 8));
        let models: [&dyn PatchPredictor; 2] = [&Constant(0.2), &Constant(0.6)];
        let p = sliding_window_predict(&models, &v, [4, 4, 4], [2, 2, 2]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.4).abs() < 1e-6));
    }

    #[test]
    fn starts_reach_the_border() {
        assert_eq!(window_starts(10, 4, 4).unwrap(), vec![0, 4, 6]);
        assert_eq!(window_starts(8, 4, 4).unwrap(), vec![0, 4]);
        assert_eq!(window_starts(4, 4, 1).unwrap(), vec![0]);
        assert!(window_starts(3, 4, 1).is_err());
        assert!(window_starts(10, 2, 3).is_err());
    }

    #[test]
    fn stub_model_golden_output() {
        // Intensity = x, 6×1×1 volume, windows of 4 with stride 2 start at 0 and 2.
        let v = Array3::from_shape_fn((6, 1, 1), |(x, _, _)| x as f32);
        let p = sliding_window_predict(&[&PatchMean], &v, [4, 1, 1], [2, 1, 1]).unwrap();
        let got: Vec<f32> = p.iter().cloned().collect();
        assert_eq!(got, vec![1.5, 1.5, 2.5, 2.5, 3.5, 3.5]);
    }

    proptest! {
        #[test]
        fn every_voxel_is_covered((e, p, st) in (1usize..40).prop_flat_map(|e| (Just(e), 1..=e)).prop_flat_map(|(e, p)| (Just(e), Just(p), 1..=p))) {
            let c = coverage([e, 1, 1], [p, 1, 1], [st, 1, 1]).unwrap();
            prop_assert!(c.iter().all(|&n| n >= 1));
        }
    }
}
