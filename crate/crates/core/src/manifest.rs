//! JSON dataset manifests.
//!
//! A manifest is an array of entries:
//! `{"image": "...", "mask": "...", "caption": "...", "labels": [...], "split": "train"}`.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{primary_label, CategoryLabel, KeywordDictionary, LabelSet};
use crate::raster::{read_mask, read_raster, AmplitudeImage, SceneMask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image.as_str()) {
                return Err(Error::Duplicate(e.image.clone()));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text =
            serde_json::to_string_pretty(&self.entries).map_err(|e| Error::json("manifest", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks every explicit label against `labels`.
    pub fn validate_labels(&self, labels: &LabelSet) -> Result<()> {
        for e in &self.entries {
            for l in e.labels.iter().flatten() {
                labels.label(l)?;
            }
        }
        Ok(())
    }

    pub fn read_image(&self, entry: &ManifestEntry) -> Result<AmplitudeImage> {
        let mut img = read_raster(self.resolve(&entry.image))?;
        img.set_source_id(entry.image.clone());
        Ok(img)
    }

    pub fn read_mask(&self, entry: &ManifestEntry) -> Result<Option<SceneMask>> {
        entry
            .mask
            .as_deref()
            .map(|m| read_mask(self.resolve(m)))
            .transpose()
    }
}

impl ManifestEntry {
    pub fn new(image: impl Into<String>) -> Self {
        Self {
            image: image.into(),
            mask: None,
            caption: None,
            labels: None,
            split: Split::default(),
        }
    }

    /// Explicit labels if present, else labels derived from the caption.
    pub fn label_set(
        &self,
        labels: &LabelSet,
        dictionary: &KeywordDictionary,
    ) -> Result<BTreeSet<CategoryLabel>> {
        match (&self.labels, &self.caption) {
            (Some(names), _) => names.iter().map(|n| labels.label(n)).collect(),
            (None, Some(caption)) => Ok(dictionary.label_caption(caption)),
            (None, None) => Ok(BTreeSet::new()),
        }
    }

    pub fn primary_label(
        &self,
        labels: &LabelSet,
        dictionary: &KeywordDictionary,
        priority: &[CategoryLabel],
    ) -> Result<Option<CategoryLabel>> {
        Ok(primary_label(&self.label_set(labels, dictionary)?, priority))
    }
}
