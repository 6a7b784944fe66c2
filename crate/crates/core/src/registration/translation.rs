use ndarray::Array2;

use super::DeformationField2D;

/// Mean squared difference between `fixed(x)` and `moving(x + s)` over the overlap.
fn shifted_cost(moving: &Array2<f64>, fixed: &Array2<f64>, s: (isize, isize)) -> f64 {
    let (h, w) = fixed.dim();
    let (h, w) = (h as isize, w as isize);
    let x_range = 0.max(-s.0)..h.min(h - s.0);
    let y_range = 0.max(-s.1)..w.min(w - s.1);
    let mut total = 0.0;
    let mut count = 0usize;
    for x in x_range {
        for y in y_range.clone() {
            let d = moving[[(x + s.0) as usize, (y + s.1) as usize]] - fixed[[x as usize, y as usize]];
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        f64::INFINITY
    } else {
        total / count as f64
    }
}

/// Vertex offset of the parabola through `(-1, lo), (0, mid), (1, hi)`.
fn parabolic_offset(lo: f64, mid: f64, hi: f64) -> f64 {
    let curvature = lo - 2.0 * mid + hi;
    if !lo.is_finite() || !hi.is_finite() || curvature <= 1e-12 {
        0.0
    } else {
        (0.5 * (lo - hi) / curvature).clamp(-0.5, 0.5)
    }
}

/// Exhaustive integer shift search within `cap`, refined to sub-pixel by
/// parabolic interpolation of the cost along each axis.
pub(crate) fn translation_search(moving: &Array2<f64>, fixed: &Array2<f64>, cap: f64) -> DeformationField2D {
    let (h, w) = fixed.dim();
    let reach = (cap.floor() as isize).min(h as isize / 4).min(w as isize / 4).max(1);
    let mut best = ((0isize, 0isize), shifted_cost(moving, fixed, (0, 0)));
    for sx in -reach..=reach {
        for sy in -reach..=reach {
            let c = shifted_cost(moving, fixed, (sx, sy));
            // Prefer the smaller shift on ties so identical images give zero.
            let closer = sx.abs() + sy.abs() < best.0 .0.abs() + best.0 .1.abs();
            if c < best.1 || (c == best.1 && closer) {
                best = ((sx, sy), c);
            }
        }
    }
    let ((sx, sy), mid) = best;
    let ox = parabolic_offset(
        shifted_cost(moving, fixed, (sx - 1, sy)),
        mid,
        shifted_cost(moving, fixed, (sx + 1, sy)),
    );
    let oy = parabolic_offset(
        shifted_cost(moving, fixed, (sx, sy - 1)),
        mid,
        shifted_cost(moving, fixed, (sx, sy + 1)),
    );
    DeformationField2D::uniform((h, w), sx as f64 + ox, sy as f64 + oy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_vertex() {
        // y = (t - 0.25)^2
        let f = |t: f64| (t - 0.25) * (t - 0.25);
        assert!((parabolic_offset(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_images_give_zero_shift() {
        let img = Array2::from_shape_fn((16, 16), |(x, y)| ((x as f64) * 0.7).sin() + (y as f64 * 0.3).cos());
        let f = translation_search(&img, &img, 5.0);
        assert!(f.max_displacement() < 1e-9);
    }
}
