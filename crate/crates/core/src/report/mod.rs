//! End-to-end evaluation: configuration, report assembly and emission.
//!
//! A run compares one real reference set against any number of generated
//! sets ("models"). Every (model, category) pair gets a [`ReportRow`]; metric
//! families that could not be computed for a cell are listed in its `absent`
//! field instead of being filled with placeholder numbers.

mod emit;
mod eval;
mod svg;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amp_stats::DEFAULT_BINS;
use crate::alignment::DEFAULT_BATCH;
use crate::error::{Error, ErrorKind, Result};
use crate::labels::{KeywordDictionary, LabelSet};
use crate::preprocess::DEFAULT_SIGMA_MULTIPLIER;
use crate::texture::{TextureConfig, TextureRow};

pub use emit::{
    emit, round_json, round_sig, write_outputs, Format, OutputOptions, CSV_COLUMNS, REPORT_DIGITS,
    TEXTURE_COLUMNS,
};
pub use eval::run_eval;

/// Category name of the pooled row.
pub const POOLED: &str = "all";
pub const DEFAULT_SAMPLES_PER_LABEL: usize = 30;
pub const REAL_TAG: &str = "real";

/// One image set and its optional embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub tag: Option<String>,
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub img_emb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txt_emb: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub kl: bool,
    pub texture: bool,
    pub alignment: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            kl: true,
            texture: true,
            alignment: true,
        }
    }
}

/// Evaluation run description. Relative paths resolve against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub real: DatasetConfig,
    #[serde(default)]
    pub models: Vec<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Vec<String>>,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Sigma multiplier for images that still need normalizing.
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default)]
    pub texture: TextureConfig,
    #[serde(default = "default_samples")]
    pub samples_per_label: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

fn default_k() -> f64 {
    DEFAULT_SIGMA_MULTIPLIER
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_LABEL
}

impl EvalConfig {
    pub fn new(real: DatasetConfig, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            real,
            models: Vec::new(),
            labels: None,
            dictionary: None,
            priority: None,
            metrics: MetricToggles::default(),
            bins: DEFAULT_BINS,
            batch_size: DEFAULT_BATCH,
            k: DEFAULT_SIGMA_MULTIPLIER,
            texture: TextureConfig::default(),
            samples_per_label: DEFAULT_SAMPLES_PER_LABEL,
            seed: 0,
            base_dir: base_dir.into(),
        }
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("eval config: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Real set first, then models in config order.
    pub fn datasets(&self) -> impl Iterator<Item = (String, &DatasetConfig)> {
        std::iter::once((
            self.real.tag.clone().unwrap_or_else(|| REAL_TAG.to_string()),
            &self.real,
        ))
        .chain(self.models.iter().enumerate().map(|(i, m)| {
            (m.tag.clone().unwrap_or_else(|| format!("model{}", i + 1)), m)
        }))
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match &self.labels {
            Some(names) => LabelSet::new(names.iter()),
            None => Ok(LabelSet::default()),
        }
    }

    pub fn keyword_dictionary(&self, labels: &LabelSet) -> Result<KeywordDictionary> {
        match &self.dictionary {
            Some(p) => KeywordDictionary::from_json_file(self.resolve(p), labels),
            None => KeywordDictionary::default_for(labels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let labels = self.label_set()?;
        if labels.contains(POOLED) {
            return Err(Error::Config(format!("`{POOLED}` is reserved for the pooled row")));
        }
        self.keyword_dictionary(&labels)?;
        if let Some(p) = &self.priority {
            let p = p.iter().map(|n| labels.label(n)).collect::<Result<Vec<_>>>()?;
            labels.validate_priority(&p)?;
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::Config(format!("k={} must be finite and >= 0", self.k)));
        }
        self.texture
            .validate()
            .map_err(|e| Error::Config(format!("texture: {e}")))?;
        let mut tags = BTreeSet::new();
        for (tag, ds) in self.datasets() {
            if tag.is_empty() || tag.contains([',', '/', '\\', '"', '\n']) {
                return Err(Error::Config(format!("invalid dataset tag `{tag}`")));
            }
            if !tags.insert(tag.clone()) {
                return Err(Error::Config(format!("duplicate dataset tag `{tag}`")));
            }
            let m = self.resolve(&ds.manifest);
            if !m.is_file() {
                return Err(Error::Config(format!(
                    "manifest for `{tag}` not found: {}",
                    m.display()
                )));
            }
        }
        Ok(())
    }
}

/// Metric families a row can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Kl,
    Texture,
    Alignment,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Kl => "kl",
            Family::Texture => "texture",
            Family::Alignment => "alignment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Absent {
    pub family: Family,
    pub reason: String,
}

/// One (dataset, category) cell of the results table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub category: String,
    pub n_images: usize,
    pub kl_nats: Option<f64>,
    pub saturated_fraction: Option<f64>,
    pub saturation_gap: Option<f64>,
    pub rank_mean: Option<f64>,
    pub rank_median: Option<f64>,
    pub rank_variance: Option<f64>,
    pub rank_variance_about_median: Option<f64>,
    pub n_ranked: usize,
    pub cosine_mean: Option<f64>,
    pub contrast: Option<f64>,
    pub homogeneity: Option<f64>,
    pub entropy: Option<f64>,
    pub correlation: Option<f64>,
    pub absent: Vec<Absent>,
}

impl ReportRow {
    pub fn is_absent(&self, family: Family) -> bool {
        self.absent.iter().any(|a| a.family == family)
    }
}

/// A family that failed on some dataset; the run still produced the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFailure {
    pub model: String,
    pub family: Family,
    pub error: String,
}

/// Amplitude density of one dataset and category, kept for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub model: String,
    pub category: String,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub toolkit: String,
    pub version: String,
    pub config: EvalConfig,
    pub labels: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub texture: Vec<TextureRow>,
    pub warnings: Vec<String>,
    pub failures: Vec<FamilyFailure>,
    #[serde(skip)]
    pub densities: Vec<DensityCurve>,
}

impl EvalReport {
    pub fn row(&self, model: &str, category: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.category == category)
    }

    pub fn models(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.model.as_str()) {
                out.push(&r.model);
            }
        }
        out
    }

    /// Categories in row order, pooled row last.
    pub fn categories(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.category.as_str()) {
                out.push(&r.category);
            }
        }
        out
    }

    /// Error class deciding the CLI exit status, if any family failed.
    pub fn failure_kind(&self) -> Option<ErrorKind> {
        (!self.failures.is_empty()).then_some(ErrorKind::Metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = EvalConfig::from_json(r#"{"real": {"manifest": "r.json"}}"#, "/data").unwrap();
        assert_eq!(cfg.bins, 256);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.samples_per_label, 30);
        assert_eq!(cfg.texture, TextureConfig::default());
        assert_eq!(cfg.resolve(Path::new("r.json")), Path::new("/data/r.json"));
        let tags: Vec<_> = cfg.datasets().map(|(t, _)| t).collect();
        assert_eq!(tags, ["real"]);
    }

    #[test]
    fn unknown_field_is_config_error() {
        let e = EvalConfig::from_json(r#"{"real": {"manifest": "r"}, "binz": 3}"#, ".").unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
    }

    #[test]
    fn validation_catches_missing_manifest_and_duplicate_tags() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("r.json"), "[]").unwrap();
        let ok = EvalConfig::from_json(
            r#"{"real": {"manifest": "r.json"}, "models": [{"tag": "a", "manifest": "r.json"}]}"#,
            dir.path(),
        )
        .unwrap();
        ok.validate().unwrap();

        let dup = EvalConfig::from_json(
            r#"{"real": {"manifest": "r.json"}, "models": [{"tag": "real", "manifest": "r.json"}]}"#,
            dir.path(),
        )
        .unwrap();
        assert!(matches!(dup.validate(), Err(Error::Config(_))));

        let missing = EvalConfig::from_json(r#"{"real": {"manifest": "nope.json"}}"#, dir.path()).unwrap();
        assert!(matches!(missing.validate(), Err(Error::Config(_))));

        let mut bad = ok.clone();
        bad.batch_size = 1;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.priority = Some(vec!["forest".into()]);
        assert!(bad.validate().is_err());
    }
}
