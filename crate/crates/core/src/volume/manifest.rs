use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::Provenance;

/// One volume in a dataset manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub volume_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
    #[serde(default)]
    pub annotated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OnDisk {
    Object {
        #[serde(default)]
        provenance: Option<Provenance>,
        entries: Vec<ManifestEntry>,
    },
    List(Vec<ManifestEntry>),
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            provenance: None,
            entries,
            base_dir: PathBuf::new(),
        }
    }

    /// Reads a manifest; both `{"entries": [...]}` and a bare list are accepted.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: OnDisk =
            serde_json::from_str(&text).map_err(|e| Error::format(path, "manifest", e.to_string()))?;
        let (provenance, entries) = match parsed {
            OnDisk::Object { provenance, entries } => (provenance, entries),
            OnDisk::List(entries) => (None, entries),
        };
        let manifest = Self {
            provenance,
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate(path)?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.annotated && e.label_path.is_none() {
                return Err(Error::format(
                    path,
                    format!("entries[{i}].label_path"),
                    "annotated entries need a label",
                ));
            }
            if e.m.is_some() != e.n.is_some() {
                return Err(Error::format(path, format!("entries[{i}].m"), "m and n must be given together"));
            }
        }
        Ok(())
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The labelled set, in manifest order.
    pub fn labeled(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.annotated)
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| !e.annotated)
    }
}
