use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Plane, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// Gaussian kernel with bandwidth set to the median pairwise distance.
    Rbf,
}

fn sq_dists(x: &ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

fn gram(x: &ArrayView2<f64>, kernel: Kernel) -> Array2<f64> {
    match kernel {
        Kernel::Linear => x.dot(&x.t()),
        Kernel::Rbf => {
            let d2 = sq_dists(x);
            let n = x.nrows();
            let mut pair: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d2[[i, j]].sqrt()).collect();
            pair.sort_by(f64::total_cmp);
            let median = if pair.is_empty() {
                0.0
            } else if pair.len() % 2 == 1 {
                pair[pair.len() / 2]
            } else {
                0.5 * (pair[pair.len() / 2 - 1] + pair[pair.len() / 2])
            };
            let sigma = if median > 0.0 { median } else { 1.0 };
            d2.mapv(|v| (-v / (2.0 * sigma * sigma)).exp())
        }
    }
}

fn double_center(k: &mut Array2<f64>) {
    let n = k.nrows() as f64;
    let row_means: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / n).collect();
    let total = row_means.iter().sum::<f64>() / n;
    for ((i, j), v) in k.indexed_iter_mut() {
        // The kernel matrix is symmetric, so column means equal row means.
        *v += total - row_means[i] - row_means[j];
    }
}

/// Biased empirical HSIC, `trace(K H L H) / (n - 1)²`, between paired samples
/// (rows) of `x` and `y`.
pub fn hsic(x: ArrayView2<f64>, y: ArrayView2<f64>, kernel: Kernel) -> Result<f64> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![n],
            got: vec![y.nrows()],
        });
    }
    if n < 2 {
        return Err(Error::invalid("samples", "HSIC needs at least two samples"));
    }
    let mut k = gram(&x, kernel);
    double_center(&mut k);
    let l = gram(&y, kernel);
    let t: f64 = k.iter().zip(l.iter()).map(|(a, b)| a * b).sum();
    Ok(t / ((n - 1) * (n - 1)) as f64)
}

/// Two slices whose rows along the shared axis 1 are paired as samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlicePair {
    /// Plane-A slices `first` and `second`.
    Parallel { first: usize, second: usize },
    /// Plane-A slice `a` against plane-B slice `b`.
    Orthogonal { a: usize, b: usize },
}

/// HSIC between two slices of `volume`, treating each index along axis 1 as
/// one sample whose features are the slice's values along the other axis.
pub fn slice_pair_hsic(volume: &Volume3D, pair: SlicePair, kernel: Kernel) -> Result<f64> {
    let (first, second) = match pair {
        SlicePair::Parallel { first, second } => (volume.slice(Plane::A, first)?, volume.slice(Plane::A, second)?),
        SlicePair::Orthogonal { a, b } => (volume.slice(Plane::A, a)?, volume.slice(Plane::B, b)?),
    };
    // Plane-A slices are (x, y): samples are columns. Plane-B slices are (y, z): samples are rows.
    let x = first.t().mapv(f64::from);
    let y = match pair {
        SlicePair::Parallel { .. } => second.t().mapv(f64::from),
        SlicePair::Orthogonal { .. } => second.mapv(f64::from),
    };
    hsic(x.view(), y.view(), kernel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsicComparison {
    pub kernel: Kernel,
    pub pairs: usize,
    pub parallel_mean: f64,
    pub orthogonal_mean: f64,
}

/// Random parallel pairs (gap 1 to `max_gap` slices) and random orthogonal
/// pairs, `pairs` of each, averaged per kind.
pub fn compare_slice_pairs(volume: &Volume3D, pairs: usize, max_gap: usize, kernel: Kernel, seed: u64) -> Result<(HsicComparison, Vec<(SlicePair, f64)>)> {
    let [h, _, d] = volume.dims();
    if pairs == 0 || max_gap == 0 || max_gap >= d {
        return Err(Error::invalid("pairs", "need pairs >= 1 and 1 <= max_gap < depth"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let gap = rng.gen_range(1..=max_gap);
        let first = rng.gen_range(0..d - gap);
        let p = SlicePair::Parallel { first, second: first + gap };
        rows.push((p, slice_pair_hsic(volume, p, kernel)?));
    }
    for _ in 0..pairs {
        let p = SlicePair::Orthogonal {
            a: rng.gen_range(0..d),
            b: rng.gen_range(0..h),
        };
        rows.push((p, slice_pair_hsic(volume, p, kernel)?));
    }
    let mean = |parallel: bool| {
        rows.iter()
            .filter(|(p, _)| matches!(p, SlicePair::Parallel { .. }) == parallel)
            .map(|(_, v)| v)
            .sum::<f64>()
            / pairs as f64
    };
    Ok((
        HsicComparison {
            kernel,
            pairs,
            parallel_mean: mean(true),
            orthogonal_mean: mean(false),
        },
        rows,
    ))
}
