use std::fs;
use std::path::Path;

use desco::provenance::Provenance;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Core(desco::Error),
    Plot(String),
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Plot(_) => "plot",
            CliError::Usage(_) => "usage",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Plot(m) | CliError::Usage(m) => m.clone(),
        }
    }

    /// `error: kind=<kind> msg="<escaped message>"` on a single line.
    pub fn line(&self) -> String {
        format!("error: kind={} msg={:?}", self.kind(), self.message())
    }
}

impl From<desco::Error> for CliError {
    fn from(e: desco::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// The config file's contents, or defaults without one. Missing keys take
/// their default values.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|e| desco::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| desco::Error::format(path, "config", e.to_string()).into())
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| desco::Error::io(dir, e).into())
}

/// Writes `<out>/<command>.config.json` holding the provenance block and the
/// effective configuration, and returns the provenance.
pub fn echo_config<C: Serialize>(out: &Path, command: &str, cfg: &C, seed: u64) -> CliResult<Provenance> {
    create_dir(out)?;
    let provenance = Provenance::new(command, cfg, seed);
    let doc = serde_json::json!({ "provenance": provenance, "config": cfg });
    let path = out.join(format!("{command}.config.json"));
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| desco::Error::io(&path, e))?;
    Ok(provenance)
}

pub fn require<T>(value: Option<T>, what: &'static str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing {what} (flag or config key)")))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| desco::Error::io(path, e).into())
}
