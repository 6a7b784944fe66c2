use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training iteration. Columns that were not computed hold NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub lr: f64,
    pub loss_sup_a: f64,
    pub loss_sup_b: f64,
    pub loss_cross_a: f64,
    pub loss_cross_b: f64,
    pub mask_frac: f64,
    pub val_dice_a: f64,
    pub val_dice_b: f64,
    pub val_dice_ens: f64,
}

pub const HISTORY_COLUMNS: [&str; 12] = [
    "iter",
    "alpha",
    "lambda",
    "lr",
    "loss_sup_a",
    "loss_sup_b",
    "loss_cross_a",
    "loss_cross_b",
    "mask_frac",
    "val_dice_a",
    "val_dice_b",
    "val_dice_ens",
];

impl HistoryRow {
    pub fn has_validation(&self) -> bool {
        !self.val_dice_ens.is_nan()
    }

    fn fields(&self) -> [String; 12] {
        let f = |v: f64| format!("{v}");
        [
            self.iter.to_string(),
            f(self.alpha),
            f(self.lambda),
            f(self.lr),
            f(self.loss_sup_a),
            f(self.loss_sup_b),
            f(self.loss_cross_a),
            f(self.loss_cross_b),
            f(self.mask_frac),
            f(self.val_dice_a),
            f(self.val_dice_b),
            f(self.val_dice_ens),
        ]
    }
}

pub fn write_history_csv(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(HISTORY_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(HISTORY_COLUMNS.iter().copied()) {
        return Err(Error::format(path, "header", format!("expected columns {}", HISTORY_COLUMNS.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Validation rows only, as `(iter, dice)` for the chosen column.
pub fn validation_series(rows: &[HistoryRow], column: fn(&HistoryRow) -> f64) -> Vec<(usize, f64)> {
    rows.iter().filter(|r| r.has_validation()).map(|r| (r.iter, column(r))).collect()
}
