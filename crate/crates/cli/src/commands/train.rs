use std::path::PathBuf;

use clap::Args;
use desco::trainer::{train_desco, TrainConfig, TrainingData, Variant};
use desco::volume::Manifest;
use serde::{Deserialize, Serialize};

use super::override_path;
use super::propagate::PseudoIndex;
use crate::config::{echo_config, load_config, require, CliError, CliResult};
use crate::Common;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommandConfig {
    pub manifest: Option<PathBuf>,
    /// Labelled volumes scored during training.
    pub val_manifest: Option<PathBuf>,
    /// Output directory of a `propagate` run. Without it, labels are
    /// propagated on the fly.
    pub pseudo: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long)]
    pseudo: Option<PathBuf>,
    /// desco, sparse_only or static_dense.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Total training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Iterations per decay-rate block.
    #[arg(long)]
    alpha_update_every: Option<usize>,
    #[arg(long)]
    lambda_oc: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown variant {s:?}; use desco, sparse_only or static_dense"))
}

pub fn run(common: &Common, args: TrainArgs) -> CliResult<()> {
    let mut cfg: TrainCommandConfig = load_config(common.config.as_deref())?;
    override_path(&mut cfg.manifest, args.manifest);
    override_path(&mut cfg.val_manifest, args.val_manifest);
    override_path(&mut cfg.pseudo, args.pseudo);
    let t = &mut cfg.train;
    if let Some(v) = args.variant {
        t.variant = v;
    }
    if let Some(v) = args.iters {
        t.schedule.total_iters = v;
    }
    if let Some(v) = args.alpha_update_every {
        t.schedule.alpha_update_every = v;
    }
    if let Some(v) = args.lambda_oc {
        t.schedule.lambda_oc = v;
    }
    if let Some(v) = args.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = common.seed {
        t.seed = v;
    }
    cfg.train.validate()?;
    let manifest_path = require(cfg.manifest.clone(), "--manifest")?;
    echo_config(&common.out, "train", &cfg, cfg.train.seed)?;

    let train = Manifest::load(&manifest_path)?;
    let val = cfg.val_manifest.as_ref().map(Manifest::load).transpose()?;
    let pseudo = match &cfg.pseudo {
        Some(dir) => {
            let (index, labels) = PseudoIndex::load_labels(dir)?;
            let expected: Vec<&str> = train.labeled().map(|e| e.volume_path.as_str()).collect();
            let got: Vec<&str> = index.entries.iter().map(|e| e.volume_path.as_str()).collect();
            if expected != got {
                return Err(CliError::Core(desco::Error::format(
                    dir.join("pseudo.json"),
                    "entries",
                    "pseudo labels do not match the manifest's annotated volumes",
                )));
            }
            Some(labels)
        }
        None => None,
    };
    let data = TrainingData::from_manifests(&train, val.as_ref(), &cfg.train.registration, pseudo.as_deref())?;
    let outcome = train_desco(&data, &cfg.train, Some(&common.out), |row| {
        if row.has_validation() {
            eprintln!("iter {:>6}  val dice a {:.4}  b {:.4}  ensemble {:.4}", row.iter + 1, row.val_dice_a, row.val_dice_b, row.val_dice_ens);
        }
    })?;
    println!("history: {} rows in {}", outcome.history.len(), common.out.join("history.csv").display());
    Ok(())
}
