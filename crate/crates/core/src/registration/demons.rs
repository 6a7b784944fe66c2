//! Two-image demons registration on a Gaussian pyramid.
//!
//! Each iteration pushes the displacement along the symmetric intensity
//! gradient by `-(W - F) g / (|g|^2 + (W - F)^2)`, where `W` is the moving
//! image warped by the current field, `F` the fixed image and `g` the mean of
//! both gradients, then regularises the field with a Gaussian of width
//! `sigma`. The best field seen (lowest mean squared error, the zero field
//! included) is returned, so the result never fits worse than no warp.

use ndarray::Array2;

use super::warp::{sample_bilinear, warp_image};
use super::{DeformationField2D, RegistrationConfig};
use crate::error::{Error, Result};

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with edge replication. `sigma <= 0` is a copy.
pub(crate) fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dim();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let rows = Array2::from_shape_fn((h, w), |(x, y)| -> f64 {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * img[[x, clampi(y as isize + i as isize - r, w)]])
            .sum()
    });
    Array2::from_shape_fn((h, w), |(x, y)| -> f64 {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * rows[[clampi(x as isize + i as isize - r, h), y]])
            .sum()
    })
}

fn downsample(img: &Array2<f64>) -> Array2<f64> {
    let blurred = gaussian_blur(img, 1.0);
    let (h, w) = img.dim();
    Array2::from_shape_fn(((h + 1) / 2, (w + 1) / 2), |(x, y)| blurred[[2 * x, 2 * y]])
}

fn upsample_field(field: &DeformationField2D, shape: (usize, usize)) -> DeformationField2D {
    let up = |c: &Array2<f64>| {
        Array2::from_shape_fn(shape, |(x, y)| 2.0 * sample_bilinear(c, x as f64 / 2.0, y as f64 / 2.0))
    };
    DeformationField2D {
        du: up(&field.du),
        dv: up(&field.dv),
    }
}

/// Central differences, one-sided at the borders.
fn gradient(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(x, y)| {
        let (lo, hi) = (x.saturating_sub(1), (x + 1).min(h - 1));
        if hi == lo {
            0.0
        } else {
            (img[[hi, y]] - img[[lo, y]]) / (hi - lo) as f64
        }
    });
    let gy = Array2::from_shape_fn((h, w), |(x, y)| {
        let (lo, hi) = (y.saturating_sub(1), (y + 1).min(w - 1));
        if hi == lo {
            0.0
        } else {
            (img[[x, hi]] - img[[x, lo]]) / (hi - lo) as f64
        }
    });
    (gx, gy)
}

pub(crate) fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

pub(crate) fn demons(moving: &Array2<f64>, fixed: &Array2<f64>, cfg: &RegistrationConfig) -> Result<DeformationField2D> {
    let levels = cfg.levels.max(1);
    let mut pyramid = vec![(moving.clone(), fixed.clone())];
    for _ in 1..levels {
        let (m, f) = pyramid.last().expect("nonempty");
        if m.dim().0 < 8 || m.dim().1 < 8 {
            break;
        }
        let next = (downsample(m), downsample(f));
        pyramid.push(next);
    }

    let mut field: Option<DeformationField2D> = None;
    let mut total_iters = 0;
    for (level, (m, f)) in pyramid.iter().enumerate().rev() {
        let shape = m.dim();
        let mut u = match field.take() {
            Some(coarse) => upsample_field(&coarse, shape),
            None => DeformationField2D::zeros(shape),
        };
        let (fgx, fgy) = gradient(f);
        let zero_err = mse(m, f);
        let mut best = (zero_err, DeformationField2D::zeros(shape));
        for _ in 0..cfg.iterations {
            total_iters += 1;
            let warped = warp_image(m, &u)?;
            let err = mse(&warped, f);
            if err < best.0 {
                best = (err, u.clone());
            }
            let (wgx, wgy) = gradient(&warped);
            let mut step = DeformationField2D::zeros(shape);
            for ((x, y), &fv) in f.indexed_iter() {
                let diff = warped[[x, y]] - fv;
                let gx = 0.5 * (fgx[[x, y]] + wgx[[x, y]]);
                let gy = 0.5 * (fgy[[x, y]] + wgy[[x, y]]);
                let denom = gx * gx + gy * gy + diff * diff;
                if denom > 1e-12 {
                    step.du[[x, y]] = -diff * gx / denom;
                    step.dv[[x, y]] = -diff * gy / denom;
                }
            }
            u.du = gaussian_blur(&(&u.du + &step.du), cfg.sigma);
            u.dv = gaussian_blur(&(&u.dv + &step.dv), cfg.sigma);
            u.clamp_magnitude(cfg.field_cap / (1 << level) as f64);
            if !u.is_finite() {
                return Err(Error::Registration {
                    slice: None,
                    iterations: total_iters,
                    msg: format!("non-finite displacement at pyramid level {level}"),
                });
            }
        }
        let err = mse(&warp_image(m, &u)?, f);
        if err < best.0 {
            best = (err, u);
        }
        field = Some(best.1);
    }
    Ok(field.expect("at least one level"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised() {
        let k = gaussian_kernel(1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 11);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Array2::from_elem((6, 9), 2.5);
        let b = gaussian_blur(&img, 2.0);
        assert!(b.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn gradient_of_ramp() {
        let img = Array2::from_shape_fn((5, 6), |(x, y)| 3.0 * x as f64 - y as f64);
        let (gx, gy) = gradient(&img);
        assert!(gx.iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(gy.iter().all(|v| (v + 1.0).abs() < 1e-12));
    }
}
