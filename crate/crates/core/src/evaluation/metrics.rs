use ndarray::{Array, Array3, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Spacing};

fn check_same(pred: &LabelVolume, gt: &LabelVolume) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            expected: gt.dims().to_vec(),
            got: pred.dims().to_vec(),
        });
    }
    Ok(())
}

fn overlap<D: Dimension>(a: &Array<u8, D>, b: &Array<u8, D>) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        na += usize::from(x == 1);
        nb += usize::from(y == 1);
        inter += usize::from(x == 1 && y == 1);
    }
    (inter, na, nb)
}

/// Dice overlap of two binary arrays of any rank; two empty masks score 1.
pub fn dice_mask<D: Dimension>(a: &Array<u8, D>, b: &Array<u8, D>) -> f64 {
    let (inter, na, nb) = overlap(a, b);
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Dice of two 2D slices.
pub fn dice_slices(a: &ndarray::Array2<u8>, b: &ndarray::Array2<u8>) -> f64 {
    dice_mask(a, b)
}

pub fn dice(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    check_same(pred, gt)?;
    Ok(dice_mask(pred.data(), gt.data()))
}

/// Intersection over union; two empty masks score 1.
pub fn jaccard(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    check_same(pred, gt)?;
    let (inter, na, nb) = overlap(pred.data(), gt.data());
    let union = na + nb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground voxels with at least one background 6-neighbour (outside the
/// grid counts as background).
pub fn boundary(mask: &Array3<u8>) -> Array3<u8> {
    let (h, w, d) = mask.dim();
    Array3::from_shape_fn((h, w, d), |(x, y, z)| {
        if mask[[x, y, z]] != 1 {
            return 0;
        }
        let bg = |dx: isize, dy: isize, dz: isize| {
            let (a, b, c) = (x as isize + dx, y as isize + dy, z as isize + dz);
            a < 0 || b < 0 || c < 0 || a >= h as isize || b >= w as isize || c >= d as isize || mask[[a as usize, b as usize, c as usize]] != 1
        };
        u8::from(bg(-1, 0, 0) || bg(1, 0, 0) || bg(0, -1, 0) || bg(0, 1, 0) || bg(0, 0, -1) || bg(0, 0, 1))
    })
}

/// 1D squared distance transform of sampled function `f` at positions
/// `i * step` (lower envelope of parabolas). Infinite entries are not
/// sites; a line without sites stays infinite.
fn edt_1d(f: &[f64], step: f64, out: &mut [f64]) {
    let n = f.len();
    let pos = |i: usize| i as f64 * step;
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every voxel to the nearest voxel where `sites`
/// is 1, with physical `spacing`.
pub fn distance_transform(sites: &Array3<u8>, spacing: Spacing) -> Array3<f64> {
    let mut g = sites.mapv(|v| if v == 1 { 0.0 } else { f64::INFINITY });
    let (h, w, d) = g.dim();
    let lens = [h, w, d];
    for axis in 0..3 {
        let n = lens[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for mut lane in g.lanes_mut(ndarray::Axis(axis)) {
            for (l, v) in line.iter_mut().zip(lane.iter()) {
                *l = *v;
            }
            edt_1d(&line, spacing[axis], &mut out);
            for (v, o) in lane.iter_mut().zip(&out) {
                *v = *o;
            }
        }
    }
    g.mapv_inplace(f64::sqrt);
    g
}

/// Distances from each boundary voxel of `pred` to the boundary of `gt`,
/// followed by those from `gt` to `pred`.
pub fn surface_distances(pred: &LabelVolume, gt: &LabelVolume, spacing: Spacing) -> Result<Vec<f64>> {
    check_same(pred, gt)?;
    if pred.foreground_count() == 0 || gt.foreground_count() == 0 {
        return Err(Error::UndefinedMetric("surface distance"));
    }
    let bp = boundary(pred.data());
    let bg = boundary(gt.data());
    let to_gt = distance_transform(&bg, spacing);
    let to_pred = distance_transform(&bp, spacing);
    let mut out: Vec<f64> = bp
        .iter()
        .zip(to_gt.iter())
        .filter(|(&b, _)| b == 1)
        .map(|(_, &d)| d)
        .collect();
    out.extend(bg.iter().zip(to_pred.iter()).filter(|(&b, _)| b == 1).map(|(_, &d)| d));
    Ok(out)
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

pub fn hd95(pred: &LabelVolume, gt: &LabelVolume, spacing: Spacing) -> Result<f64> {
    Ok(percentile(&surface_distances(pred, gt, spacing)?, 95.0))
}

pub fn asd(pred: &LabelVolume, gt: &LabelVolume, spacing: Spacing) -> Result<f64> {
    let d = surface_distances(pred, gt, spacing)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// All four metrics for one prediction. Distances are NaN when a mask is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub dice: f64,
    pub jaccard: f64,
    pub hd95: f64,
    pub asd: f64,
}

pub fn compute_metrics(pred: &LabelVolume, gt: &LabelVolume, spacing: Spacing) -> Result<SegmentationMetrics> {
    let (hd, sd) = match surface_distances(pred, gt, spacing) {
        Ok(d) => (percentile(&d, 95.0), d.iter().sum::<f64>() / d.len() as f64),
        Err(Error::UndefinedMetric(_)) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(SegmentationMetrics {
        dice: dice(pred, gt)?,
        jaccard: jaccard(pred, gt)?,
        hd95: hd,
        asd: sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(data: Array3<u8>) -> LabelVolume {
        LabelVolume::new(data, [1.0; 3]).unwrap()
    }

    fn cube(dims: [usize; 3], lo: [usize; 3], size: usize) -> LabelVolume {
        lv(Array3::from_shape_fn(dims, |(x, y, z)| {
            u8::from((lo[0]..lo[0] + size).contains(&x) && (lo[1]..lo[1] + size).contains(&y) && (lo[2]..lo[2] + size).contains(&z))
        }))
    }

    #[test]
    fn overlap_examples() {
        let a = cube([6, 6, 6], [1, 1, 1], 2);
        let b = cube([6, 6, 6], [2, 1, 1], 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let far = cube([6, 6, 6], [4, 4, 4], 2);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        let empty = lv(Array3::zeros((6, 6, 6)));
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let a = cube([8, 8, 8], [2, 2, 2], 3);
        assert_eq!(hd95(&a, &a, [1.0; 3]).unwrap(), 0.0);
        assert_eq!(asd(&a, &a, [1.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_distances_are_undefined() {
        let a = cube([8, 8, 8], [2, 2, 2], 3);
        let e = lv(Array3::zeros((8, 8, 8)));
        assert!(matches!(hd95(&a, &e, [1.0; 3]), Err(Error::UndefinedMetric(_))));
        let m = compute_metrics(&e, &a, [1.0; 3]).unwrap();
        assert!(m.hd95.is_nan() && m.asd.is_nan());
        assert_eq!(m.dice, 0.0);
    }

    #[test]
    fn single_voxel_distance_uses_spacing() {
        let mut a = Array3::zeros((5, 5, 5));
        a[[0, 0, 0]] = 1;
        let mut b = Array3::zeros((5, 5, 5));
        b[[3, 4, 0]] = 1;
        let d = surface_distances(&lv(a), &lv(b), [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(d, vec![(36.0f64 + 16.0).sqrt(); 2]);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0, 4.0], 50.0), 2.5);
        assert_eq!(percentile(&[5.0], 95.0), 5.0);
        assert!((percentile(&(0..=100).map(f64::from).collect::<Vec<_>>(), 95.0) - 95.0).abs() < 1e-12);
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut sites = Array3::<u8>::zeros((7, 6, 5));
        for p in [[0, 0, 0], [6, 5, 4], [3, 2, 1]] {
            sites[p] = 1;
        }
        let sp = [1.5, 0.7, 2.0];
        let dt = distance_transform(&sites, sp);
        for ((x, y, z), &v) in dt.indexed_iter() {
            let best = sites
                .indexed_iter()
                .filter(|(_, &s)| s == 1)
                .map(|((a, b, c), _)| {
                    (((x as f64 - a as f64) * sp[0]).powi(2) + ((y as f64 - b as f64) * sp[1]).powi(2) + ((z as f64 - c as f64) * sp[2]).powi(2))
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((v - best).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn jaccard_dice_identity_and_symmetry(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = lv(Array3::from_shape_fn((5, 5, 5), |_| u8::from(rng.gen_bool(0.3))));
            let b = lv(Array3::from_shape_fn((5, 5, 5), |_| u8::from(rng.gen_bool(0.3))));
            let d = dice(&a, &b).unwrap();
            let j = jaccard(&a, &b).unwrap();
            prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            if a.foreground_count() > 0 && b.foreground_count() > 0 {
                let h = hd95(&a, &b, [1.0; 3]).unwrap();
                prop_assert!(h >= 0.0 && (h - hd95(&b, &a, [1.0; 3]).unwrap()).abs() < 1e-12);
                let s = surface_distances(&a, &b, [1.0; 3]).unwrap();
                let max = s.iter().cloned().fold(0.0, f64::max);
                prop_assert!(h <= max + 1e-12);
                prop_assert!(asd(&a, &b, [1.0; 3]).unwrap() <= max + 1e-12);
            }
        }
    }
}
