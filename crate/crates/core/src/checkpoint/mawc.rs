//! Mean absolute weight change between two checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::archive::TensorArchive;
use crate::error::{Error, Result};

/// Changes smaller than this are below checkpoint resolution.
pub const DEFAULT_THRESHOLD: f64 = 5e-4;

pub const UNGROUPED: &str = "ungrouped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDelta {
    pub layer_name: String,
    pub mawc: f64,
    pub param_count: usize,
    /// Fraction of weights with `|Δw| > threshold`.
    pub changed_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MawcReport {
    pub deltas: Vec<WeightDelta>,
    pub only_before: Vec<String>,
    pub only_after: Vec<String>,
}

/// MAWC of two equally shaped weight vectors; `|Δ| < threshold` counts as 0.
pub fn layer_delta(name: &str, before: &[f32], after: &[f32], threshold: f64) -> Result<WeightDelta> {
    if before.len() != after.len() {
        return Err(Error::ShapeMismatch {
            name: name.to_string(),
            before: vec![before.len()],
            after: vec![after.len()],
        });
    }
    let mut total = 0.0;
    let mut changed = 0usize;
    for (b, a) in before.iter().zip(after) {
        let d = (*a as f64 - *b as f64).abs();
        if d >= threshold {
            total += d;
        }
        if d > threshold {
            changed += 1;
        }
    }
    let n = before.len();
    Ok(WeightDelta {
        layer_name: name.to_string(),
        mawc: if n == 0 { 0.0 } else { total / n as f64 },
        param_count: n,
        changed_fraction: if n == 0 { 0.0 } else { changed as f64 / n as f64 },
    })
}

/// Per-tensor MAWC over names present in both archives, ordered by name.
pub fn mawc(before: &TensorArchive, after: &TensorArchive, threshold: f64) -> Result<MawcReport> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} must be >= 0")));
    }
    let shared: Vec<&str> = before.names().filter(|n| after.info(n).is_some()).collect();
    let deltas = shared
        .par_iter()
        .map(|&name| {
            let (bi, ai) = (before.info(name).unwrap(), after.info(name).unwrap());
            if bi.shape != ai.shape {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    before: bi.shape.clone(),
                    after: ai.shape.clone(),
                });
            }
            layer_delta(name, &before.tensor_f32(name)?, &after.tensor_f32(name)?, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MawcReport {
        deltas,
        only_before: before
            .names()
            .filter(|n| after.info(n).is_none())
            .map(String::from)
            .collect(),
        only_after: after
            .names()
            .filter(|n| before.info(n).is_none())
            .map(String::from)
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub enum Pattern {
    Prefix(String),
    Regex(Regex),
}

/// Maps matching layer names to a (block, sub-block). With a regex pattern,
/// `$1`-style references in the names expand from the captures.
#[derive(Debug, Clone)]
pub struct GroupRule {
    pub pattern: Pattern,
    pub block: String,
    pub sub_block: String,
}

#[derive(Deserialize)]
struct RawRule {
    #[serde(default)]
    prefix: Option<String>,
    #[serde(default)]
    regex: Option<String>,
    block: String,
    sub_block: String,
}

impl GroupRule {
    pub fn prefix(prefix: impl Into<String>, block: impl Into<String>, sub_block: impl Into<String>) -> Self {
        Self {
            pattern: Pattern::Prefix(prefix.into()),
            block: block.into(),
            sub_block: sub_block.into(),
        }
    }

    pub fn regex(re: &str, block: impl Into<String>, sub_block: impl Into<String>) -> Result<Self> {
        Ok(Self {
            pattern: Pattern::Regex(
                Regex::new(re).map_err(|e| Error::Config(format!("group regex `{re}`: {e}")))?,
            ),
            block: block.into(),
            sub_block: sub_block.into(),
        })
    }

    fn classify(&self, layer: &str) -> Option<(String, String)> {
        match &self.pattern {
            Pattern::Prefix(p) => layer
                .starts_with(p.as_str())
                .then(|| (self.block.clone(), self.sub_block.clone())),
            Pattern::Regex(re) => re.captures(layer).map(|c| {
                let mut block = String::new();
                let mut sub = String::new();
                c.expand(&self.block, &mut block);
                c.expand(&self.sub_block, &mut sub);
                (block, sub)
            }),
        }
    }
}

/// Reads `[{"prefix"|"regex": ..., "block": ..., "sub_block": ...}, ...]`.
pub fn load_group_rules(path: impl AsRef<Path>) -> Result<Vec<GroupRule>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<RawRule> =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    raw.into_iter()
        .map(|r| match (r.prefix, r.regex) {
            (Some(p), None) => Ok(GroupRule::prefix(p, r.block, r.sub_block)),
            (None, Some(re)) => GroupRule::regex(&re, r.block, r.sub_block),
            _ => Err(Error::Config(
                "each group rule needs exactly one of `prefix` or `regex`".into(),
            )),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: String,
    pub sub_block: String,
    pub mean_mawc: f64,
    pub layer_count: usize,
    pub param_count: usize,
}

/// First matching rule wins; unmatched layers go to `ungrouped`. The mean is
/// over layers, or over parameters when `weighted`.
pub fn block_aggregate(deltas: &[WeightDelta], rules: &[GroupRule], weighted: bool) -> Vec<BlockSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&WeightDelta>> = BTreeMap::new();
    for d in deltas {
        let key = rules
            .iter()
            .find_map(|r| r.classify(&d.layer_name))
            .unwrap_or_else(|| (UNGROUPED.to_string(), UNGROUPED.to_string()));
        groups.entry(key).or_default().push(d);
    }
    groups
        .into_iter()
        .map(|((block, sub_block), members)| {
            let params: usize = members.iter().map(|d| d.param_count).sum();
            let mean_mawc = if weighted {
                if params == 0 {
                    0.0
                } else {
                    members.iter().map(|d| d.mawc * d.param_count as f64).sum::<f64>() / params as f64
                }
            } else {
                members.iter().map(|d| d.mawc).sum::<f64>() / members.len() as f64
            };
            BlockSummary {
                block,
                sub_block,
                mean_mawc,
                layer_count: members.len(),
                param_count: params,
            }
        })
        .collect()
}
