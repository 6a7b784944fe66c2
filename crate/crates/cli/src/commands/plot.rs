use std::path::{Path, PathBuf};

use clap::Args;
use desco::trainer::{read_history_csv, HistoryRow};
use serde::{Deserialize, Serialize};

use crate::config::{echo_config, load_config, CliError, CliResult};
use crate::plot::{bar_chart, line_chart, Bar, Series};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    pub histories: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    /// Moving-average window for loss curves, in iterations.
    pub smooth: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            histories: Vec::new(),
            reports: Vec::new(),
            smooth: 50,
        }
    }
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// A `history.csv`; repeat to overlay runs.
    #[arg(long = "history")]
    histories: Vec<PathBuf>,
    /// A `report.json`; repeat to compare runs.
    #[arg(long = "report")]
    reports: Vec<PathBuf>,
    #[arg(long)]
    smooth: Option<usize>,
}

/// Run name: the directory holding the file.
fn run_name(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn moving_average(rows: &[HistoryRow], column: fn(&HistoryRow) -> f64, window: usize) -> Vec<(f64, f64)> {
    let window = window.max(1);
    rows.chunks(window)
        .filter_map(|chunk| {
            let vals: Vec<f64> = chunk.iter().map(column).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                return None;
            }
            let x = chunk.iter().map(|r| r.iter as f64).sum::<f64>() / chunk.len() as f64;
            Some((x, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

pub fn run(common: &Common, args: PlotArgs) -> CliResult<()> {
    let mut cfg: PlotConfig = load_config(common.config.as_deref())?;
    if !args.histories.is_empty() {
        cfg.histories = args.histories;
    }
    if !args.reports.is_empty() {
        cfg.reports = args.reports;
    }
    if let Some(v) = args.smooth {
        cfg.smooth = v;
    }
    if cfg.histories.is_empty() && cfg.reports.is_empty() {
        return Err(CliError::Usage("nothing to plot: pass --history and/or --report".into()));
    }
    echo_config(&common.out, "plot", &cfg, common.seed.unwrap_or(0))?;
    let mut written = Vec::new();

    let histories: Vec<(String, Vec<HistoryRow>)> = cfg
        .histories
        .iter()
        .map(|p| Ok((run_name(p), read_history_csv(p)?)))
        .collect::<CliResult<_>>()?;
    if !histories.is_empty() {
        let val = |f: fn(&HistoryRow) -> f64, rows: &[HistoryRow]| -> Vec<(f64, f64)> {
            rows.iter().filter(|r| r.has_validation()).map(|r| ((r.iter + 1) as f64, f(r))).collect()
        };
        let mut series = Vec::new();
        if let [(name, rows)] = histories.as_slice() {
            series.push(Series { name: format!("{name}: network a"), points: val(|r| r.val_dice_a, rows) });
            series.push(Series { name: format!("{name}: network b"), points: val(|r| r.val_dice_b, rows) });
            series.push(Series { name: format!("{name}: ensemble"), points: val(|r| r.val_dice_ens, rows) });
        } else {
            for (name, rows) in &histories {
                series.push(Series { name: name.clone(), points: val(|r| r.val_dice_ens, rows) });
            }
        }
        let path = common.out.join("validation.svg");
        line_chart(&path, "Validation Dice", "iteration", "Dice", &series)?;
        written.push(path);

        let mut losses = Vec::new();
        for (name, rows) in &histories {
            losses.push(Series { name: format!("{name}: supervised"), points: moving_average(rows, |r| 0.5 * (r.loss_sup_a + r.loss_sup_b), cfg.smooth) });
            losses.push(Series { name: format!("{name}: cross"), points: moving_average(rows, |r| 0.5 * (r.loss_cross_a + r.loss_cross_b), cfg.smooth) });
        }
        let path = common.out.join("losses.svg");
        line_chart(&path, "Training losses (moving average)", "iteration", "loss", &losses)?;
        written.push(path);

        let (name, rows) = &histories[0];
        let lr0 = rows.first().map_or(1.0, |r| r.lr);
        let pick = |f: &dyn Fn(&HistoryRow) -> f64| -> Vec<(f64, f64)> { rows.iter().map(|r| (r.iter as f64, f(r))).collect() };
        let schedules = [
            Series { name: "alpha".into(), points: pick(&|r| r.alpha) },
            Series { name: "lambda".into(), points: pick(&|r| r.lambda) },
            Series { name: "lr / lr(0)".into(), points: pick(&|r| r.lr / lr0) },
            Series { name: "confident fraction".into(), points: moving_average(rows, |r| r.mask_frac, cfg.smooth) },
        ];
        let path = common.out.join("schedules.svg");
        line_chart(&path, &format!("Schedules ({name})"), "iteration", "value", &schedules)?;
        written.push(path);
    }

    if !cfg.reports.is_empty() {
        let mut overlap = Vec::new();
        let mut distance = Vec::new();
        for p in &cfg.reports {
            let text = std::fs::read_to_string(p).map_err(|e| desco::Error::io(p, e))?;
            // Undefined (NaN) statistics are stored as JSON null.
            let report: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| desco::Error::format(p, "report", e.to_string()))?;
            let label = run_name(p);
            for (group, is_distance) in [("dice", false), ("jaccard", false), ("hd95", true), ("asd", true)] {
                let stat = |key: &str| report[group][key].as_f64().unwrap_or(f64::NAN);
                if report.get(group).is_none() {
                    return Err(desco::Error::format(p, group, "missing statistic").into());
                }
                let bar = Bar { group: group.into(), label: label.clone(), mean: stat("mean"), std: stat("std") };
                if is_distance {
                    distance.push(bar);
                } else {
                    overlap.push(bar);
                }
            }
        }
        let path = common.out.join("overlap.svg");
        bar_chart(&path, "Overlap metrics (mean ± std)", "score", &overlap)?;
        written.push(path);
        let path = common.out.join("distance.svg");
        bar_chart(&path, "Surface distances (mean ± std)", "voxels", &distance)?;
        written.push(path);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
