use std::collections::VecDeque;

use ndarray::Array2;

/// Largest 8-connected foreground component. Ties keep the component met
/// first in row-major scan order.
pub fn largest_component(label: &Array2<u8>) -> Array2<u8> {
    let (h, w) = label.dim();
    let mut comp = Array2::<u32>::zeros((h, w));
    let mut best = (0u32, 0usize);
    let mut next = 1u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        let (sx, sy) = (start / w, start % w);
        if label[[sx, sy]] == 0 || comp[[sx, sy]] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        comp[[sx, sy]] = id;
        queue.push_back((sx, sy));
        let mut size = 0usize;
        while let Some((x, y)) = queue.pop_front() {
            size += 1;
            for nx in x.saturating_sub(1)..=(x + 1).min(h - 1) {
                for ny in y.saturating_sub(1)..=(y + 1).min(w - 1) {
                    if label[[nx, ny]] != 0 && comp[[nx, ny]] == 0 {
                        comp[[nx, ny]] = id;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
        if size > best.1 {
            best = (id, size);
        }
    }
    comp.mapv(|c| u8::from(c != 0 && c == best.0))
}

fn erode3x3(label: &Array2<u8>) -> Array2<u8> {
    let (h, w) = label.dim();
    Array2::from_shape_fn((h, w), |(x, y)| {
        if x == 0 || y == 0 || x + 1 == h || y + 1 == w {
            return 0;
        }
        let all = (x - 1..=x + 1).all(|i| (y - 1..=y + 1).all(|j| label[[i, j]] != 0));
        u8::from(all)
    })
}

fn dilate3x3(label: &Array2<u8>) -> Array2<u8> {
    let (h, w) = label.dim();
    Array2::from_shape_fn((h, w), |(x, y)| {
        let any = (x.saturating_sub(1)..=(x + 1).min(h - 1))
            .any(|i| (y.saturating_sub(1)..=(y + 1).min(w - 1)).any(|j| label[[i, j]] != 0));
        u8::from(any)
    })
}

/// Binary opening with a 3x3 square; pixels outside the slice count as background.
pub fn open3x3(label: &Array2<u8>) -> Array2<u8> {
    dilate3x3(&erode3x3(label))
}

/// Keeps the largest 8-connected component, then opens it with a 3x3 square.
pub fn morphology_cleanup(label: &Array2<u8>) -> Array2<u8> {
    open3x3(&largest_component(label))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, x0: usize, y0: usize, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((h, w), |(x, y)| u8::from((x0..x0 + size).contains(&x) && (y0..y0 + size).contains(&y)))
    }

    #[test]
    fn speckle_is_removed() {
        let mut l = square(20, 20, 4, 4, 8);
        l[[17, 17]] = 1;
        let c = morphology_cleanup(&l);
        assert_eq!(c[[17, 17]], 0);
        assert_eq!(c, square(20, 20, 4, 4, 8));
    }

    #[test]
    fn empty_stays_empty() {
        let l = Array2::<u8>::zeros((9, 7));
        assert_eq!(morphology_cleanup(&l), l);
    }

    #[test]
    fn diagonal_neighbours_are_connected() {
        let mut l = Array2::<u8>::zeros((5, 5));
        l[[0, 0]] = 1;
        l[[1, 1]] = 1;
        l[[4, 4]] = 1;
        let c = largest_component(&l);
        assert_eq!(c.sum(), 2);
        assert_eq!(c[[1, 1]], 1);
    }

    #[test]
    fn opening_removes_thin_lines() {
        let mut l = square(16, 16, 2, 2, 6);
        for y in 8..14 {
            l[[4, y]] = 1;
        }
        let c = morphology_cleanup(&l);
        assert_eq!(c, square(16, 16, 2, 2, 6));
    }

    #[test]
    fn opening_is_idempotent() {
        let l = Array2::from_shape_fn((12, 12), |(x, y)| u8::from((x * 7 + y * 3) % 5 < 3));
        let once = open3x3(&l);
        assert_eq!(open3x3(&once), once);
    }
}
