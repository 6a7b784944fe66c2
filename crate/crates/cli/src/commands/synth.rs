use clap::Args;
use desco::synthetic::{write_dataset, DatasetSpec};

use super::parse_triple;
use crate::config::{echo_config, load_config, CliResult};
use crate::Common;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Volume size as `H,W,D`.
    #[arg(long, value_parser = parse_triple)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    n_blobs: Option<usize>,
    /// Centre drift per slice, in voxels.
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    /// How many training volumes carry orthogonal annotations.
    #[arg(long)]
    n_annotated: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

pub fn run(common: &Common, args: SynthArgs) -> CliResult<()> {
    let mut spec: DatasetSpec = load_config(common.config.as_deref())?;
    if let Some(v) = args.dims {
        spec.dims = v;
    }
    if let Some(v) = args.n_blobs {
        spec.n_blobs = v;
    }
    if let Some(v) = args.drift {
        spec.drift = v;
    }
    if let Some(v) = args.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.n_train {
        spec.n_train = v;
    }
    if let Some(v) = args.n_annotated {
        spec.n_annotated = v;
    }
    if let Some(v) = args.n_test {
        spec.n_test = v;
    }
    if let Some(v) = common.seed {
        spec.seed = v;
    }
    echo_config(&common.out, "synth", &spec, spec.seed)?;
    let paths = write_dataset(&spec, &common.out)?;
    println!("train manifest: {}", paths.train_manifest.display());
    println!("test manifest: {}", paths.test_manifest.display());
    Ok(())
}
