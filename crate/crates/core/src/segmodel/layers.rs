//! Layer kernels on feature maps stored as `(channels, voxels)` matrices,
//! with voxels in row-major `(x, y, z)` order.

use ndarray::{s, Array2, ArrayView2, Axis};

#[derive(Debug, Clone)]
pub(crate) struct Feat {
    pub data: Array2<f32>,
    pub dims: [usize; 3],
}

impl Feat {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }
}

/// Unfolds 3×3×3 zero-padded neighbourhoods: row `c * 27 + k`, column = voxel.
pub(crate) fn im2col3(input: &Feat) -> Array2<f32> {
    let [h, w, d] = input.dims;
    let c = input.channels();
    let n = h * w * d;
    let mut cols = Array2::<f32>::zeros((c * 27, n));
    for ci in 0..c {
        let src = input.data.row(ci);
        let src = src.as_slice().expect("standard layout");
        for k in 0..27 {
            let (dx, dy, dz) = (k / 9, (k / 3) % 3, k % 3);
            let mut row = cols.row_mut(ci * 27 + k);
            let dst = row.as_slice_mut().expect("standard layout");
            let (z_lo, z_hi) = (1usize.saturating_sub(dz), (d + 1 - dz).min(d));
            for x in 0..h {
                let sx = x + dx;
                if sx < 1 || sx > h {
                    continue;
                }
                for y in 0..w {
                    let sy = y + dy;
                    if sy < 1 || sy > w {
                        continue;
                    }
                    let out = (x * w + y) * d;
                    let inp = ((sx - 1) * w + (sy - 1)) * d;
                    for z in z_lo..z_hi {
                        dst[out + z] = src[inp + z + dz - 1];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`].
pub(crate) fn col2im3(cols: &Array2<f32>, channels: usize, dims: [usize; 3]) -> Feat {
    let [h, w, d] = dims;
    let mut data = Array2::<f32>::zeros((channels, h * w * d));
    for ci in 0..channels {
        let mut row = data.row_mut(ci);
        let dst = row.as_slice_mut().expect("standard layout");
        for k in 0..27 {
            let (dx, dy, dz) = (k / 9, (k / 3) % 3, k % 3);
            let src = cols.row(ci * 27 + k);
            let src = src.as_slice().expect("standard layout");
            let (z_lo, z_hi) = (1usize.saturating_sub(dz), (d + 1 - dz).min(d));
            for x in 0..h {
                let sx = x + dx;
                if sx < 1 || sx > h {
                    continue;
                }
                for y in 0..w {
                    let sy = y + dy;
                    if sy < 1 || sy > w {
                        continue;
                    }
                    let out = (x * w + y) * d;
                    let inp = ((sx - 1) * w + (sy - 1)) * d;
                    for z in z_lo..z_hi {
                        dst[inp + z + dz - 1] += src[out + z];
                    }
                }
            }
        }
    }
    Feat { data, dims }
}

/// `weights · cols + bias`, bias broadcast along voxels.
pub(crate) fn affine(weights: ArrayView2<f32>, bias: &[f32], cols: &Array2<f32>) -> Array2<f32> {
    let mut out = weights.dot(cols);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(bias) {
        row.mapv_inplace(|v| v + b);
    }
    out
}

pub(crate) fn relu_inplace(a: &mut Array2<f32>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` wherever the (post-activation) output was not positive.
pub(crate) fn relu_backward(grad: &mut Array2<f32>, out: &Array2<f32>) {
    grad.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
}

/// 2×2×2 max pooling. Returns the pooled map and, per output element, the
/// flat input index of its maximum.
pub(crate) fn maxpool2(input: &Feat) -> (Feat, Vec<u32>) {
    let [h, w, d] = input.dims;
    let od = [h / 2, w / 2, d / 2];
    let on = od[0] * od[1] * od[2];
    let c = input.channels();
    let mut out = Array2::<f32>::zeros((c, on));
    let mut arg = vec![0u32; c * on];
    for ci in 0..c {
        let src = input.data.row(ci);
        let src = src.as_slice().expect("standard layout");
        for x in 0..od[0] {
            for y in 0..od[1] {
                for z in 0..od[2] {
                    let o = (x * od[1] + y) * od[2] + z;
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for k in 0..8 {
                        let i = ((2 * x + k / 4) * w + 2 * y + (k / 2) % 2) * d + 2 * z + k % 2;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                    out[[ci, o]] = best;
                    arg[ci * on + o] = best_i as u32;
                }
            }
        }
    }
    (Feat { data: out, dims: od }, arg)
}

pub(crate) fn maxpool2_backward(grad: &Array2<f32>, arg: &[u32], in_dims: [usize; 3]) -> Array2<f32> {
    let n = in_dims.iter().product::<usize>();
    let on = grad.ncols();
    let mut out = Array2::<f32>::zeros((grad.nrows(), n));
    for (ci, row) in grad.axis_iter(Axis(0)).enumerate() {
        for (o, &g) in row.iter().enumerate() {
            out[[ci, arg[ci * on + o] as usize]] += g;
        }
    }
    out
}

/// Source taps for doubling an axis of length `n` with half-pixel centres.
fn linear_taps(n: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Views `data` as `[outer][n][inner]` and doubles the middle axis.
fn upsample_axis(data: &[f32], outer: usize, n: usize, inner: usize) -> Vec<f32> {
    let taps = linear_taps(n);
    let mut out = vec![0.0f32; outer * 2 * n * inner];
    for o in 0..outer {
        for (i, &(i0, i1, f)) in taps.iter().enumerate() {
            let dst = &mut out[(o * 2 * n + i) * inner..][..inner];
            let a = &data[(o * n + i0) * inner..][..inner];
            let b = &data[(o * n + i1) * inner..][..inner];
            for ((d, &a), &b) in dst.iter_mut().zip(a).zip(b) {
                *d = a * (1.0 - f) + b * f;
            }
        }
    }
    out
}

fn upsample_axis_adjoint(grad: &[f32], outer: usize, n: usize, inner: usize) -> Vec<f32> {
    let taps = linear_taps(n);
    let mut out = vec![0.0f32; outer * n * inner];
    for o in 0..outer {
        for (i, &(i0, i1, f)) in taps.iter().enumerate() {
            let g = &grad[(o * 2 * n + i) * inner..][..inner];
            for (j, &gv) in g.iter().enumerate() {
                out[(o * n + i0) * inner + j] += gv * (1.0 - f);
                out[(o * n + i1) * inner + j] += gv * f;
            }
        }
    }
    out
}

/// Separable trilinear ×2 upsampling.
pub(crate) fn upsample2(input: &Feat) -> Feat {
    let c = input.channels();
    let [h, w, d] = input.dims;
    let v = input.data.as_slice().expect("standard layout");
    let v = upsample_axis(v, c * h * w, d, 1);
    let v = upsample_axis(&v, c * h, w, 2 * d);
    let v = upsample_axis(&v, c, h, 4 * w * d);
    let dims = [2 * h, 2 * w, 2 * d];
    Feat {
        data: Array2::from_shape_vec((c, dims.iter().product()), v).expect("sized above"),
        dims,
    }
}

pub(crate) fn upsample2_backward(grad: &Array2<f32>, in_dims: [usize; 3]) -> Array2<f32> {
    let c = grad.nrows();
    let [h, w, d] = in_dims;
    let g = grad.as_standard_layout();
    let v = g.as_slice().expect("standard layout");
    let v = upsample_axis_adjoint(v, c, h, 4 * w * d);
    let v = upsample_axis_adjoint(&v, c * h, w, 2 * d);
    let v = upsample_axis_adjoint(&v, c * h * w, d, 1);
    Array2::from_shape_vec((c, h * w * d), v).expect("sized above")
}

pub(crate) fn concat(a: &Feat, b: &Feat) -> Feat {
    debug_assert_eq!(a.dims, b.dims);
    let data = ndarray::concatenate(Axis(0), &[a.data.view(), b.data.view()]).expect("same voxel count");
    Feat { data, dims: a.dims }
}

pub(crate) fn split_rows(g: &Array2<f32>, first: usize) -> (Array2<f32>, Array2<f32>) {
    (g.slice(s![..first, ..]).to_owned(), g.slice(s![first.., ..]).to_owned())
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}
