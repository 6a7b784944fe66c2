use ndarray::Array2;

use super::DeformationField2D;
use crate::error::{Error, Result};

fn check(shape: (usize, usize), field: &DeformationField2D) -> Result<()> {
    if field.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: vec![shape.0, shape.1],
            got: vec![field.shape().0, field.shape().1],
        });
    }
    Ok(())
}

/// Nearest-neighbour label resampling; samples outside the slice are background.
pub fn warp_label(label: &Array2<u8>, field: &DeformationField2D) -> Result<Array2<u8>> {
    let (h, w) = label.dim();
    check((h, w), field)?;
    Ok(Array2::from_shape_fn((h, w), |(x, y)| {
        let sx = (x as f64 + field.du[[x, y]]).round();
        let sy = (y as f64 + field.dv[[x, y]]).round();
        if sx < 0.0 || sy < 0.0 || sx >= h as f64 || sy >= w as f64 {
            0
        } else {
            label[[sx as usize, sy as usize]]
        }
    }))
}

/// Bilinear sample with edge replication.
pub(crate) fn sample_bilinear(img: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x = x.clamp(0.0, (h - 1) as f64);
    let y = y.clamp(0.0, (w - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(h - 1);
    let y1 = (y0 + 1).min(w - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[[x0, y0]] * (1.0 - fy) + img[[x0, y1]] * fy;
    let bottom = img[[x1, y0]] * (1.0 - fy) + img[[x1, y1]] * fy;
    top * (1.0 - fx) + bottom * fx
}

/// Bilinear image resampling with edge replication.
pub fn warp_image(img: &Array2<f64>, field: &DeformationField2D) -> Result<Array2<f64>> {
    let (h, w) = img.dim();
    check((h, w), field)?;
    Ok(Array2::from_shape_fn((h, w), |(x, y)| {
        sample_bilinear(img, x as f64 + field.du[[x, y]], y as f64 + field.dv[[x, y]])
    }))
}
