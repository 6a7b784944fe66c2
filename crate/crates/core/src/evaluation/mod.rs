//! Overlap and surface-distance metrics, run reports, and the HSIC
//! dependence measure between slices.

mod hsic;
mod metrics;
mod report;

pub use hsic::{compare_slice_pairs, hsic, slice_pair_hsic, HsicComparison, Kernel, SlicePair};
pub use metrics::{
    asd, boundary, compute_metrics, dice, dice_mask, dice_slices, distance_transform, hd95, jaccard, percentile, surface_distances,
    SegmentationMetrics,
};
pub use report::{evaluate_run, EvalReport, MeanStd, VolumeReport};
