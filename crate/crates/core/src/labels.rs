//! Scene categories and caption labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The evaluation category set.
pub const DEFAULT_LABELS: [&str; 11] = [
    "forest",
    "city",
    "field",
    "port",
    "airport",
    "mountains",
    "structures",
    "seacoast",
    "beach",
    "industrial",
    "residential",
];

/// Rarest-first ordering over the full training class distribution. Only
/// entries present in the active label set are used.
pub const RARITY_ORDER: [&str; 16] = [
    "airport",
    "desert",
    "port",
    "residential",
    "river",
    "roads",
    "city",
    "structures",
    "seacoast",
    "vegetation",
    "field",
    "beach",
    "industrial",
    "mountains",
    "forest",
    "water",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel(String);

impl CategoryLabel {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Configured set of valid category names, kept in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl Default for LabelSet {
    fn default() -> Self {
        Self {
            names: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.is_empty() || !seen.insert(n.as_str()) {
                return Err(Error::Config(format!("invalid or duplicate label `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn label(&self, name: &str) -> Result<CategoryLabel> {
        if self.contains(name) {
            Ok(CategoryLabel(name.to_string()))
        } else {
            Err(Error::UnknownLabel(name.to_string()))
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn labels(&self) -> impl Iterator<Item = CategoryLabel> + '_ {
        self.names.iter().map(|n| CategoryLabel(n.clone()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Rarity-ordered priority restricted to this set. Labels absent from the
    /// rarity table are appended in declaration order.
    pub fn default_priority(&self) -> Vec<CategoryLabel> {
        let mut out: Vec<CategoryLabel> = RARITY_ORDER
            .iter()
            .filter(|n| self.contains(n))
            .map(|n| CategoryLabel(n.to_string()))
            .collect();
        for n in &self.names {
            if !RARITY_ORDER.contains(&n.as_str()) {
                out.push(CategoryLabel(n.clone()));
            }
        }
        out
    }

    /// Checks that `priority` is a permutation of this set.
    pub fn validate_priority(&self, priority: &[CategoryLabel]) -> Result<()> {
        let given: BTreeSet<&str> = priority.iter().map(|l| l.as_str()).collect();
        let want: BTreeSet<&str> = self.names.iter().map(String::as_str).collect();
        if given != want || priority.len() != self.names.len() {
            return Err(Error::Config(
                "priority must list every configured label exactly once".into(),
            ));
        }
        Ok(())
    }
}

/// Label → keywords, compiled into whole-word case-insensitive matchers.
#[derive(Debug, Clone)]
pub struct KeywordDictionary {
    entries: BTreeMap<CategoryLabel, Vec<String>>,
    matchers: Vec<(CategoryLabel, Regex)>,
}

impl KeywordDictionary {
    pub fn new(map: BTreeMap<String, Vec<String>>, labels: &LabelSet) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut matchers = Vec::new();
        for (name, keywords) in map {
            let label = labels
                .label(&name)
                .map_err(|_| Error::Config(format!("dictionary references unknown label `{name}`")))?;
            let keywords: Vec<String> = keywords
                .into_iter()
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            if keywords.is_empty() {
                return Err(Error::Config(format!("label `{name}` has no keywords")));
            }
            let alternation = keywords
                .iter()
                .map(|k| regex::escape(k))
                .collect::<Vec<_>>()
                .join("|");
            let re = Regex::new(&format!(r"(?i)\b(?:{alternation})\b"))
                .map_err(|e| Error::Config(format!("keyword pattern for `{name}`: {e}")))?;
            matchers.push((label.clone(), re));
            entries.insert(label, keywords);
        }
        Ok(Self { entries, matchers })
    }

    /// Placeholder dictionary over the default label set. Meant to be replaced
    /// by a curated one.
    pub fn default_for(labels: &LabelSet) -> Result<Self> {
        let defaults: [(&str, &[&str]); 11] = [
            ("forest", &["forest", "forests", "woods", "woodland", "trees"]),
            ("city", &["city", "urban", "town", "downtown"]),
            ("field", &["field", "fields", "farmland", "cropland", "agricultural"]),
            ("port", &["port", "harbor", "harbour", "dock", "docks", "marina"]),
            ("airport", &["airport", "runway", "runways", "airfield", "terminal"]),
            ("mountains", &["mountain", "mountains", "mountainous", "peaks", "ridge"]),
            ("structures", &["structure", "structures", "bridge", "tower", "dam"]),
            ("seacoast", &["seacoast", "coast", "coastline", "coastal", "shoreline"]),
            ("beach", &["beach", "beaches", "sand", "sandy"]),
            ("industrial", &["industrial", "factory", "factories", "warehouse", "warehouses"]),
            ("residential", &["residential", "houses", "neighborhood", "suburb", "suburban"]),
        ];
        let map = defaults
            .iter()
            .filter(|(l, _)| labels.contains(l))
            .map(|(l, ks)| (l.to_string(), ks.iter().map(|k| k.to_string()).collect()))
            .collect();
        Self::new(map, labels)
    }

    pub fn from_json_file(path: impl AsRef<Path>, labels: &LabelSet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        Self::new(map, labels)
    }

    pub fn entries(&self) -> &BTreeMap<CategoryLabel, Vec<String>> {
        &self.entries
    }

    /// Every label with at least one keyword occurring as a whole word.
    pub fn label_caption(&self, caption: &str) -> BTreeSet<CategoryLabel> {
        self.matchers
            .iter()
            .filter(|(_, re)| re.is_match(caption))
            .map(|(l, _)| l.clone())
            .collect()
    }
}

/// Earliest member of `labels` in `priority` order.
pub fn primary_label(
    labels: &BTreeSet<CategoryLabel>,
    priority: &[CategoryLabel],
) -> Option<CategoryLabel> {
    priority.iter().find(|l| labels.contains(*l)).cloned()
}
