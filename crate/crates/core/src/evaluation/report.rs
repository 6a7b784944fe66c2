use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, SegmentationMetrics};
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::segmodel::SegNet;
use crate::trainer::{predict_volume, threshold, InferenceConfig};
use crate::volume::{load_label, load_volume, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub id: String,
    pub metrics: SegmentationMetrics,
    /// Set when a mask was empty and the distance metrics are NaN.
    pub undefined_distances: bool,
}

/// Mean and population standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            n: v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub volumes: Vec<VolumeReport>,
    pub dice: MeanStd,
    pub jaccard: MeanStd,
    pub hd95: MeanStd,
    pub asd: MeanStd,
}

impl EvalReport {
    pub fn from_volumes(volumes: Vec<VolumeReport>) -> Self {
        let col = |f: fn(&SegmentationMetrics) -> f64| MeanStd::of(volumes.iter().map(|v| f(&v.metrics)));
        Self {
            provenance: None,
            dice: col(|m| m.dice),
            jaccard: col(|m| m.jaccard),
            hd95: col(|m| m.hd95),
            asd: col(|m| m.asd),
            volumes,
        }
    }

    /// Writes `report.json` and `report.csv` (one row per volume, then
    /// `mean` and `std` rows) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("report.csv");
        let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["id", "dice", "jaccard", "hd95", "asd"])?;
        for v in &self.volumes {
            let m = v.metrics;
            w.write_record([v.id.clone(), m.dice.to_string(), m.jaccard.to_string(), m.hd95.to_string(), m.asd.to_string()])?;
        }
        let stats = [self.dice, self.jaccard, self.hd95, self.asd];
        w.write_record(std::iter::once("mean".to_string()).chain(stats.iter().map(|s| s.mean.to_string())))?;
        w.write_record(std::iter::once("std".to_string()).chain(stats.iter().map(|s| s.std.to_string())))?;
        w.into_inner()
            .map_err(|e| Error::io(&csv_path, e.into_error()))?
            .flush()
            .map_err(|e| Error::io(&csv_path, e))
    }
}

/// Predicts every labelled volume of `test` and scores it. Distances are in
/// voxel units.
pub fn evaluate_run(models: [&SegNet; 2], test: &Manifest, cfg: &InferenceConfig) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for entry in &test.entries {
        let Some(label_path) = entry.label_path.as_deref() else {
            continue;
        };
        let volume = load_volume(test.resolve(&entry.volume_path))?;
        let gt = load_label(test.resolve(label_path))?;
        let pred = threshold(&predict_volume(models, &volume, cfg)?, &volume)?;
        let metrics = compute_metrics(&pred, &gt, [1.0; 3])?;
        rows.push(VolumeReport {
            id: if volume.id().is_empty() { entry.volume_path.clone() } else { volume.id().to_string() },
            undefined_distances: metrics.hd95.is_nan(),
            metrics,
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("manifest", "no labelled test volumes"));
    }
    Ok(EvalReport::from_volumes(rows))
}
