pub mod analyze;
pub mod eval;
pub mod plot;
pub mod propagate;
pub mod synth;
pub mod train;

use std::path::PathBuf;

/// Parses `a,b,c` into three sizes.
pub fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("not a non-negative integer: {p:?}"))?;
    }
    Ok(out)
}

/// Paths given on the command line replace the config value only when set.
pub fn override_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}
