use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use desco::evaluation::{compare_slice_pairs, Kernel, SlicePair};
use desco::volume::{load_volume, Manifest};
use serde::{Deserialize, Serialize};

use super::override_path;
use crate::config::{echo_config, load_config, require, CliResult};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub manifest: Option<PathBuf>,
    /// Slice pairs of each kind per volume.
    pub pairs: usize,
    /// Largest slice gap of a parallel pair.
    pub max_gap: usize,
    pub kernels: Vec<Kernel>,
    /// Only the first this many volumes are used (0 = all).
    pub max_volumes: usize,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            pairs: 50,
            max_gap: 4,
            kernels: vec![Kernel::Linear, Kernel::Rbf],
            max_volumes: 0,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long)]
    max_volumes: Option<usize>,
}

pub fn run(common: &Common, args: AnalyzeArgs) -> CliResult<()> {
    let mut cfg: AnalyzeConfig = load_config(common.config.as_deref())?;
    override_path(&mut cfg.manifest, args.manifest);
    if let Some(v) = args.pairs {
        cfg.pairs = v;
    }
    if let Some(v) = args.max_gap {
        cfg.max_gap = v;
    }
    if let Some(v) = args.max_volumes {
        cfg.max_volumes = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    let manifest_path = require(cfg.manifest.clone(), "--manifest")?;
    echo_config(&common.out, "analyze", &cfg, cfg.seed)?;
    let manifest = Manifest::load(&manifest_path)?;
    let take = if cfg.max_volumes == 0 { usize::MAX } else { cfg.max_volumes };

    let pairs_path = common.out.join("hsic_pairs.csv");
    let file = File::create(&pairs_path).map_err(|e| desco::Error::io(&pairs_path, e))?;
    let mut pairs = csv::Writer::from_writer(file);
    pairs.write_record(["volume", "kernel", "kind", "first", "second", "hsic"])?;
    // Per kernel: sums of per-volume means and the volume count.
    let mut totals = vec![(0.0, 0.0, 0usize); cfg.kernels.len()];
    for (vi, entry) in manifest.entries.iter().take(take).enumerate() {
        let volume = load_volume(manifest.resolve(&entry.volume_path))?;
        for (ki, &kernel) in cfg.kernels.iter().enumerate() {
            let (cmp, rows) = compare_slice_pairs(&volume, cfg.pairs, cfg.max_gap, kernel, cfg.seed.wrapping_add(vi as u64))?;
            for (pair, value) in rows {
                let (kind, first, second) = match pair {
                    SlicePair::Parallel { first, second } => ("parallel", first, second),
                    SlicePair::Orthogonal { a, b } => ("orthogonal", a, b),
                };
                pairs.write_record([
                    entry.volume_path.clone(),
                    kernel_name(kernel).to_string(),
                    kind.to_string(),
                    first.to_string(),
                    second.to_string(),
                    value.to_string(),
                ])?;
            }
            totals[ki].0 += cmp.parallel_mean;
            totals[ki].1 += cmp.orthogonal_mean;
            totals[ki].2 += 1;
        }
    }
    pairs.flush().map_err(|e| desco::Error::io(&pairs_path, e))?;

    let summary_path = common.out.join("hsic.csv");
    let file = File::create(&summary_path).map_err(|e| desco::Error::io(&summary_path, e))?;
    let mut summary = csv::Writer::from_writer(file);
    summary.write_record(["kernel", "volumes", "pairs", "parallel_mean", "orthogonal_mean"])?;
    for (&kernel, &(p, o, n)) in cfg.kernels.iter().zip(&totals) {
        let (p, o) = (p / n as f64, o / n as f64);
        summary.write_record([
            kernel_name(kernel).to_string(),
            n.to_string(),
            cfg.pairs.to_string(),
            p.to_string(),
            o.to_string(),
        ])?;
        println!("{:<6} parallel {p:.5e}  orthogonal {o:.5e}", kernel_name(kernel));
    }
    summary.flush().map_err(|e| desco::Error::io(&summary_path, e))?;
    Ok(())
}

fn kernel_name(k: Kernel) -> &'static str {
    match k {
        Kernel::Linear => "linear",
        Kernel::Rbf => "rbf",
    }
}
