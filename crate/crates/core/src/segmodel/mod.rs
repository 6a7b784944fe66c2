//! Segmentation network, optimiser, checkpoints and MC-dropout uncertainty.

mod checkpoint;
mod layers;
mod net;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use net::{DropoutMask, ModelConfig, SegNet, Trunk};
pub use optim::{Sgd, SgdConfig};

use std::f32::consts::LN_2;

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::EPS;
use crate::schedules::{gaussian_rampup, ScheduleConfig};

/// Binary entropy in nats, with the probability clamped away from 0 and 1.
pub fn binary_entropy(p: f32) -> f32 {
    let p = (p as f64).clamp(EPS, 1.0 - EPS);
    (-(p * p.ln() + (1.0 - p) * (1.0 - p).ln())) as f32
}

/// Mean probability over `t` dropout passes that share one trunk evaluation,
/// and the entropy of that mean.
pub fn uncertainty_from_trunk(model: &SegNet, trunk: &Trunk, t: usize, rng: &mut ChaCha8Rng) -> Result<(Array3<f32>, Array3<f32>)> {
    if t < 2 {
        return Err(Error::invalid("mc_passes", format!("need at least 2 passes, got {t}")));
    }
    // Accumulating in f64 keeps the mean of identical passes exact.
    let mut sum = Array3::<f64>::zeros(trunk.dims());
    for _ in 0..t {
        let mask = model.sample_dropout(trunk, rng);
        sum.zip_mut_with(&model.head(trunk, mask.as_ref()), |s, &p| *s += f64::from(p));
    }
    let mean = sum.mapv(|s| (s / t as f64) as f32);
    let entropy = mean.mapv(binary_entropy);
    Ok((mean, entropy))
}

pub fn uncertainty(model: &SegNet, patch: &Array3<f32>, t: usize, rng: &mut ChaCha8Rng) -> Result<(Array3<f32>, Array3<f32>)> {
    let trunk = model.trunk(patch)?;
    uncertainty_from_trunk(model, &trunk, t, rng)
}

/// Entropy threshold at `iter`: rises from `0.75 ln 2` towards `ln 2`.
pub fn entropy_threshold(iter: usize, sched: &ScheduleConfig) -> f32 {
    LN_2 * (0.75 + 0.25 * gaussian_rampup(sched.progress(iter)) as f32)
}

/// 1 where the entropy is below the threshold for `iter`.
pub fn uncertainty_mask(entropy: &Array3<f32>, iter: usize, sched: &ScheduleConfig) -> Array3<u8> {
    let thr = entropy_threshold(iter, sched);
    entropy.mapv(|u| u8::from(u < thr))
}
