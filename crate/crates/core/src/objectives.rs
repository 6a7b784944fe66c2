//! Weighted segmentation losses on foreground probabilities and their
//! analytic gradients with respect to those probabilities.
//!
//! All losses take `p` (foreground probability per voxel), a binary target
//! and a non-negative per-voxel weight. Probabilities are clamped to
//! `[EPS, 1 - EPS]` before any logarithm.

use ndarray::{Array3, ArrayView3, Zip};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-7;

/// A loss value plus a flag raised when the value came from a degenerate
/// convention (empty Dice denominator, empty cross-supervision mask).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlaggedLoss {
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Dice,
    /// Mean of cross-entropy and Dice.
    Supervised,
}

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

fn check_shapes(p: &ArrayView3<f64>, y: &ArrayView3<u8>, w: &ArrayView3<f64>) -> Result<()> {
    for other in [y.shape(), w.shape()] {
        if other != p.shape() {
            return Err(Error::ShapeMismatch {
                expected: p.shape().to_vec(),
                got: other.to_vec(),
            });
        }
    }
    Ok(())
}

/// Weighted Bernoulli cross-entropy, normalised by the weight sum.
pub fn weighted_cross_entropy(p: ArrayView3<f64>, y: ArrayView3<u8>, w: ArrayView3<f64>) -> Result<f64> {
    check_shapes(&p, &y, &w)?;
    let mut num = 0.0;
    let mut den = 0.0;
    Zip::from(&p).and(&y).and(&w).for_each(|&p, &y, &w| {
        if w != 0.0 {
            let p = clamp(p);
            let ll = if y == 1 { p.ln() } else { (1.0 - p).ln() };
            num -= w * ll;
            den += w;
        }
    });
    if den <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(num / den)
}

fn dice_sums(p: &ArrayView3<f64>, y: &ArrayView3<u8>, w: &ArrayView3<f64>) -> (f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    Zip::from(p).and(y).and(w).for_each(|&p, &y, &w| {
        let y = y as f64;
        a += w * p * y;
        b += w * (p * p + y * y);
    });
    (a, b)
}

/// `1 - 2 Σ w p y / Σ w (p² + y²)`; a zero denominator gives 0, flagged.
pub fn weighted_dice(p: ArrayView3<f64>, y: ArrayView3<u8>, w: ArrayView3<f64>) -> Result<FlaggedLoss> {
    check_shapes(&p, &y, &w)?;
    let (a, b) = dice_sums(&p, &y, &w);
    Ok(if b > 0.0 {
        FlaggedLoss {
            value: 1.0 - 2.0 * a / b,
            degenerate: false,
        }
    } else {
        FlaggedLoss {
            value: 0.0,
            degenerate: true,
        }
    })
}

pub fn supervised_loss(p: ArrayView3<f64>, y: ArrayView3<u8>, w: ArrayView3<f64>) -> Result<f64> {
    let ce = weighted_cross_entropy(p, y, w)?;
    let dice = weighted_dice(p, y, w)?;
    Ok(0.5 * ce + 0.5 * dice.value)
}

/// Cross-entropy against a hard target, restricted to voxels where `mask` is 1.
/// An empty mask gives 0, flagged.
pub fn cross_supervision_loss(p: ArrayView3<f64>, y_hat: ArrayView3<u8>, mask: ArrayView3<u8>) -> Result<FlaggedLoss> {
    let w = mask.mapv(f64::from);
    if w.sum() == 0.0 {
        check_shapes(&p, &y_hat, &w.view())?;
        return Ok(FlaggedLoss {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(FlaggedLoss {
        value: weighted_cross_entropy(p, y_hat, w.view())?,
        degenerate: false,
    })
}

/// `(1 - λ) sup + λ cross`.
pub fn total_loss(sup: f64, cross: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * sup + lambda * cross
}

/// Analytic `∂loss/∂p` for the requested loss.
pub fn loss_gradients(p: ArrayView3<f64>, y: ArrayView3<u8>, w: ArrayView3<f64>, which: LossKind) -> Result<Array3<f64>> {
    check_shapes(&p, &y, &w)?;
    match which {
        LossKind::CrossEntropy => ce_gradient(&p, &y, &w),
        LossKind::Dice => Ok(dice_gradient(&p, &y, &w)),
        LossKind::Supervised => {
            let mut g = ce_gradient(&p, &y, &w)?;
            g.zip_mut_with(&dice_gradient(&p, &y, &w), |a, &b| *a = 0.5 * *a + 0.5 * b);
            Ok(g)
        }
    }
}

fn ce_gradient(p: &ArrayView3<f64>, y: &ArrayView3<u8>, w: &ArrayView3<f64>) -> Result<Array3<f64>> {
    let den = w.sum();
    if den <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mut g = Array3::zeros(p.raw_dim());
    Zip::from(&mut g).and(p).and(y).and(w).for_each(|g, &p, &y, &w| {
        if w != 0.0 {
            let p = clamp(p);
            *g = if y == 1 { -w / (p * den) } else { w / ((1.0 - p) * den) };
        }
    });
    Ok(g)
}

fn dice_gradient(p: &ArrayView3<f64>, y: &ArrayView3<u8>, w: &ArrayView3<f64>) -> Array3<f64> {
    let (a, b) = dice_sums(p, y, w);
    let mut g = Array3::zeros(p.raw_dim());
    if b > 0.0 {
        Zip::from(&mut g).and(p).and(y).and(w).for_each(|g, &p, &y, &w| {
            *g = -2.0 * (w * y as f64 * b - a * 2.0 * w * p) / (b * b);
        });
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr3, Array3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(p: f64, y: u8, w: f64) -> (Array3<f64>, Array3<u8>, Array3<f64>) {
        (arr3(&[[[p]]]), arr3(&[[[y]]]), arr3(&[[[w]]]))
    }

    #[test]
    fn single_voxel_values() {
        let (p, y, w) = one(0.5, 1, 1.0);
        let ce = weighted_cross_entropy(p.view(), y.view(), w.view()).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
        let d = weighted_dice(p.view(), y.view(), w.view()).unwrap();
        assert!((d.value - 0.2).abs() < 1e-12);
        let s = supervised_loss(p.view(), y.view(), w.view()).unwrap();
        assert!((s - 0.5 * (ce + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_are_near_zero() {
        let y = Array3::from_shape_fn((3, 3, 3), |(x, y, z)| ((x + y + z) % 2) as u8);
        let p = y.mapv(f64::from);
        let w = Array3::from_shape_fn((3, 3, 3), |(x, _, _)| 0.2 + x as f64);
        assert!(weighted_cross_entropy(p.view(), y.view(), w.view()).unwrap() <= 1e-5);
        assert!(weighted_dice(p.view(), y.view(), w.view()).unwrap().value.abs() < 1e-15);
        assert!(supervised_loss(p.view(), y.view(), w.view()).unwrap() <= 1e-5);
    }

    #[test]
    fn uniform_weights_match_plain_mean() {
        let p = arr3(&[[[0.2, 0.7, 0.9]]]);
        let y = arr3(&[[[0u8, 1, 0]]]);
        let w = Array3::from_elem((1, 1, 3), 3.5);
        let plain = -((0.8f64).ln() + (0.7f64).ln() + (0.1f64).ln()) / 3.0;
        let ce = weighted_cross_entropy(p.view(), y.view(), w.view()).unwrap();
        assert!((ce - plain).abs() < 1e-12);
    }

    #[test]
    fn zero_weights() {
        let (p, y, _) = one(0.3, 1, 0.0);
        let w = Array3::zeros((1, 1, 1));
        assert!(matches!(
            weighted_cross_entropy(p.view(), y.view(), w.view()),
            Err(Error::DegenerateWeights)
        ));
        let empty = arr3(&[[[0.0]]]);
        let y0 = arr3(&[[[0u8]]]);
        let d = weighted_dice(empty.view(), y0.view(), Array3::ones((1, 1, 1)).view()).unwrap();
        assert_eq!(d, FlaggedLoss { value: 0.0, degenerate: true });
    }

    #[test]
    fn cross_supervision_conventions() {
        let p = arr3(&[[[0.9, 0.2, 0.6]]]);
        let y_hat = arr3(&[[[1u8, 0, 0]]]);
        let none = cross_supervision_loss(p.view(), y_hat.view(), Array3::zeros((1, 1, 3)).view()).unwrap();
        assert_eq!(none, FlaggedLoss { value: 0.0, degenerate: true });
        let all = cross_supervision_loss(p.view(), y_hat.view(), Array3::ones((1, 1, 3)).view()).unwrap();
        // Hand oracle: the third voxel disagrees (p=0.6 vs target 0).
        let full = -((0.9f64).ln() + (0.8f64).ln() + (0.4f64).ln()) / 3.0;
        assert!((all.value - full).abs() < 1e-12);
        let masked = cross_supervision_loss(p.view(), y_hat.view(), arr3(&[[[1u8, 1, 0]]]).view()).unwrap();
        let kept = -((0.9f64).ln() + (0.8f64).ln()) / 2.0;
        assert!((masked.value - kept).abs() < 1e-12);
        assert!(masked.value < all.value);
    }

    #[test]
    fn total_loss_is_affine() {
        assert_eq!(total_loss(0.3, 0.9, 0.0), 0.3);
        assert_eq!(total_loss(0.3, 0.9, 1.0), 0.9);
        assert!((total_loss(0.5, 0.25, 0.8) - (0.2 * 0.5 + 0.8 * 0.25)).abs() < 1e-15);
    }

    fn finite_difference(p: &Array3<f64>, y: &Array3<u8>, w: &Array3<f64>, kind: LossKind) -> Array3<f64> {
        let f = |q: &Array3<f64>| match kind {
            LossKind::CrossEntropy => weighted_cross_entropy(q.view(), y.view(), w.view()).unwrap(),
            LossKind::Dice => weighted_dice(q.view(), y.view(), w.view()).unwrap().value,
            LossKind::Supervised => supervised_loss(q.view(), y.view(), w.view()).unwrap(),
        };
        let h = 1e-5;
        let mut g = Array3::zeros(p.raw_dim());
        for (idx, gv) in g.indexed_iter_mut() {
            let mut hi = p.clone();
            hi[idx] += h;
            let mut lo = p.clone();
            lo[idx] -= h;
            *gv = (f(&hi) - f(&lo)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = Array3::from_shape_fn((4, 4, 4), |_| rng.gen_range(0.05..0.95));
            let y = Array3::from_shape_fn((4, 4, 4), |_| u8::from(rng.gen_bool(0.4)));
            let w = Array3::from_shape_fn((4, 4, 4), |_| rng.gen_range(0.0..1.0));
            for kind in [LossKind::CrossEntropy, LossKind::Dice, LossKind::Supervised] {
                let a = loss_gradients(p.view(), y.view(), w.view(), kind).unwrap();
                let n = finite_difference(&p, &y, &w, kind);
                for (x, y) in a.iter().zip(n.iter()) {
                    let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
                    assert!(rel < 1e-4, "{kind:?}: {x} vs {y}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn weight_scaling_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(0.0..1.0));
            let y = Array3::from_shape_fn((3, 3, 3), |_| u8::from(rng.gen_bool(0.5)));
            let w = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(0.01..1.0));
            let ws = w.mapv(|v| v * scale);
            let ce = weighted_cross_entropy(p.view(), y.view(), w.view()).unwrap();
            let ces = weighted_cross_entropy(p.view(), y.view(), ws.view()).unwrap();
            prop_assert!((ce - ces).abs() <= 1e-9 * ce.abs().max(1.0));
            let d = weighted_dice(p.view(), y.view(), w.view()).unwrap().value;
            let ds = weighted_dice(p.view(), y.view(), ws.view()).unwrap().value;
            prop_assert!((d - ds).abs() <= 1e-9);
            prop_assert!(ce >= 0.0);
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn zero_weight_voxel_has_zero_gradient(seed in 0u64..1000, i in 0usize..27) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(0.0..1.0));
            let y = Array3::from_shape_fn((3, 3, 3), |_| u8::from(rng.gen_bool(0.5)));
            let mut w = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(0.01..1.0));
            let idx = (i / 9, (i / 3) % 3, i % 3);
            w[idx] = 0.0;
            let g = loss_gradients(p.view(), y.view(), w.view(), LossKind::Supervised).unwrap();
            prop_assert_eq!(g[idx], 0.0);
        }

        #[test]
        fn total_is_between_parts(a in 0.0f64..5.0, b in 0.0f64..5.0, l in 0.0f64..=1.0) {
            let t = total_loss(a, b, l);
            prop_assert!(t >= a.min(b) - 1e-12 && t <= a.max(b) + 1e-12);
        }
    }
}
