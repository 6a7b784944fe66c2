use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use desco::registration::{propagate_with_report, Backend, PseudoLabelVolume, RegistrationConfig};
use desco::synthetic::select_annotation_slices;
use desco::volume::{load_label, load_volume, save_label, LabelVolume, Manifest, Plane};
use serde::{Deserialize, Serialize};

use super::override_path;
use crate::config::{create_dir, echo_config, load_config, require, write_file, CliResult};
use crate::Common;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagateConfig {
    pub manifest: Option<PathBuf>,
    pub registration: RegistrationConfig,
}

#[derive(Args, Debug)]
pub struct PropagateArgs {
    /// Training manifest; its annotated entries are propagated.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    /// Registration iterations per pyramid level.
    #[arg(long)]
    iterations: Option<usize>,
    /// Field smoothing width, in voxels.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown backend {s:?}; use builtin_demons, translation_only or external_command"))
}

/// `pseudo.json`: one entry per annotated volume, in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoIndex {
    pub provenance: desco::provenance::Provenance,
    pub entries: Vec<PseudoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    /// As written in the source manifest.
    pub volume_path: String,
    /// Relative to the directory holding `pseudo.json`.
    pub pseudo_a: String,
    pub pseudo_b: String,
    pub m: usize,
    pub n: usize,
}

impl PseudoIndex {
    /// Reads `dir/pseudo.json` and the pseudo labels it lists.
    pub fn load_labels(dir: &Path) -> CliResult<(Self, Vec<(PseudoLabelVolume, PseudoLabelVolume)>)> {
        let path = dir.join("pseudo.json");
        let text = std::fs::read_to_string(&path).map_err(|e| desco::Error::io(&path, e))?;
        let index: PseudoIndex =
            serde_json::from_str(&text).map_err(|e| desco::Error::format(&path, "pseudo index", e.to_string()))?;
        let mut labels = Vec::new();
        for e in &index.entries {
            let a = load_label(dir.join(&e.pseudo_a))?.into_data();
            let b = load_label(dir.join(&e.pseudo_b))?.into_data();
            labels.push((
                PseudoLabelVolume { data: a, source_plane: Plane::A, source_index: e.m },
                PseudoLabelVolume { data: b, source_plane: Plane::B, source_index: e.n },
            ));
        }
        Ok((index, labels))
    }
}

pub fn run(common: &Common, args: PropagateArgs) -> CliResult<()> {
    let mut cfg: PropagateConfig = load_config(common.config.as_deref())?;
    override_path(&mut cfg.manifest, args.manifest);
    let reg = &mut cfg.registration;
    if let Some(v) = args.backend {
        reg.backend = v;
    }
    if let Some(v) = args.iterations {
        reg.iterations = v;
    }
    if let Some(v) = args.sigma {
        reg.sigma = v;
    }
    if let Some(v) = args.levels {
        reg.levels = v;
    }
    cfg.registration.validate()?;
    let manifest_path = require(cfg.manifest.clone(), "--manifest")?;
    let seed = common.seed.unwrap_or(0);
    let provenance = echo_config(&common.out, "propagate", &cfg, seed)?;
    let manifest = Manifest::load(&manifest_path)?;

    let label_dir = common.out.join("pseudo");
    create_dir(&label_dir)?;
    let quality_path = common.out.join("quality.csv");
    let file = File::create(&quality_path).map_err(|e| desco::Error::io(&quality_path, e))?;
    let mut quality = csv::Writer::from_writer(file);
    quality.write_record(["volume", "plane", "slice", "d", "fg_area"])?;
    let mut entries = Vec::new();
    for entry in manifest.labeled() {
        let volume = load_volume(manifest.resolve(&entry.volume_path))?;
        let label_path = entry.label_path.as_deref().expect("annotated entries carry labels");
        let label = load_label(manifest.resolve(label_path))?;
        let (m, n) = match (entry.m, entry.n) {
            (Some(m), Some(n)) => (m, n),
            _ => select_annotation_slices(&label)?,
        };
        let stem = Path::new(&entry.volume_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("volume_{}", entries.len()));
        let mut names = Vec::new();
        for (plane, index) in [(Plane::A, m), (Plane::B, n)] {
            let source = label.slice(plane, index)?;
            let (pseudo, report) = propagate_with_report(&volume, &source, plane, index, &cfg.registration)?;
            let name = format!("{stem}_{}", plane.name().to_lowercase());
            save_label(&LabelVolume::new(pseudo.data, volume.spacing())?, label_dir.join(&name))?;
            for r in report {
                quality.write_record([
                    stem.clone(),
                    plane.name().to_string(),
                    r.slice.to_string(),
                    r.d.to_string(),
                    r.fg_area.to_string(),
                ])?;
            }
            names.push(format!("pseudo/{name}.json"));
        }
        eprintln!("propagated {stem} (m={m}, n={n})");
        entries.push(PseudoEntry {
            volume_path: entry.volume_path.clone(),
            pseudo_a: names[0].clone(),
            pseudo_b: names[1].clone(),
            m,
            n,
        });
    }
    quality.flush().map_err(|e| desco::Error::io(&quality_path, e))?;
    let index = PseudoIndex { provenance, entries };
    write_file(&common.out.join("pseudo.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    println!("pseudo labels: {}", common.out.join("pseudo.json").display());
    Ok(())
}
