use std::path::PathBuf;

use clap::Args;
use desco::evaluation::evaluate_run;
use desco::segmodel::load_checkpoint;
use desco::trainer::InferenceConfig;
use desco::volume::Manifest;
use serde::{Deserialize, Serialize};

use super::{override_path, parse_triple};
use crate::config::{echo_config, load_config, require, CliResult};
use crate::Common;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Directory holding `model_a` and `model_b` checkpoints.
    pub checkpoints: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub inference: InferenceConfig,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Test manifest with dense labels.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Sliding-window stride as `sx,sy,sz`.
    #[arg(long, value_parser = parse_triple)]
    strides: Option<[usize; 3]>,
    /// Use only the first network instead of the ensemble.
    #[arg(long)]
    single: bool,
}

pub fn run(common: &Common, args: EvalArgs) -> CliResult<()> {
    let mut cfg: EvalConfig = load_config(common.config.as_deref())?;
    override_path(&mut cfg.checkpoints, args.checkpoints);
    override_path(&mut cfg.manifest, args.manifest);
    if let Some(v) = args.strides {
        cfg.inference.strides = v;
    }
    if args.single {
        cfg.inference.ensemble = false;
    }
    let dir = require(cfg.checkpoints.clone(), "--checkpoints")?;
    let manifest_path = require(cfg.manifest.clone(), "--manifest")?;
    let provenance = echo_config(&common.out, "eval", &cfg, common.seed.unwrap_or(0))?;
    let a = load_checkpoint(dir.join("model_a"))?;
    let b = load_checkpoint(dir.join("model_b"))?;
    let test = Manifest::load(&manifest_path)?;
    let mut report = evaluate_run([&a, &b], &test, &cfg.inference)?;
    report.provenance = Some(provenance);
    report.write(&common.out)?;
    println!(
        "dice {:.4} ± {:.4}  jaccard {:.4}  hd95 {:.3}  asd {:.3}  ({} volumes)",
        report.dice.mean,
        report.dice.std,
        report.jaccard.mean,
        report.hd95.mean,
        report.asd.mean,
        report.volumes.len()
    );
    Ok(())
}
