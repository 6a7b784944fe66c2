//! Barely-supervised 3D segmentation from two orthogonal annotated slices
//! per labelled volume.
//!
//! The pipeline: [`synthetic`] phantoms or real volumes ([`volume`]) are
//! annotated on one slice per plane, [`registration`] propagates each slice
//! through its volume, [`labels`] mixes the result with the annotation and
//! weighs every voxel by its distance from the annotated slice, and
//! [`trainer`] co-trains two [`segmodel`] networks with the [`objectives`]
//! under the [`schedules`]. [`evaluation`] scores the result.

pub mod error;
pub mod evaluation;
pub mod labels;
pub mod objectives;
pub mod provenance;
pub mod registration;
pub mod schedules;
pub mod segmodel;
pub mod synthetic;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/labels.md")]
    mod labels {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
