use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    Absent, DatasetConfig, DensityCurve, EvalConfig, EvalReport, Family, FamilyFailure, ReportRow,
    POOLED,
};
use crate::alignment::{embedding_ranks, paired_cosines, summarize_ranks, EmbeddingKind, EmbeddingSet};
use crate::amp_stats::{kl_by_category, CategoryKl};
use crate::error::{Error, Result};
use crate::labels::{CategoryLabel, LabelSet};
use crate::manifest::Manifest;
use crate::preprocess::normalize_image;
use crate::raster::{AmplitudeImage, SceneMask};
use crate::texture::{texture_profile, Feature, TextureProfile, TextureSample};

type Labeled = Vec<(Option<CategoryLabel>, AmplitudeImage)>;

struct Dataset<'c> {
    tag: String,
    cfg: &'c DatasetConfig,
    manifest: Manifest,
    labels: Vec<Option<CategoryLabel>>,
    /// Normalized images with masks, or the reason they could not be read.
    images: std::result::Result<Vec<(AmplitudeImage, Option<SceneMask>)>, String>,
}

impl Dataset<'_> {
    fn labeled(&self) -> Option<Labeled> {
        let imgs = self.images.as_ref().ok()?;
        Some(
            self.labels
                .iter()
                .cloned()
                .zip(imgs.iter().map(|(i, _)| i.clone()))
                .collect(),
        )
    }

    fn count(&self, category: Option<&CategoryLabel>) -> usize {
        match category {
            Some(c) => self.labels.iter().filter(|l| l.as_ref() == Some(c)).count(),
            None => self.labels.len(),
        }
    }
}

fn load_images(
    manifest: &Manifest,
    k: f64,
) -> Result<Vec<(AmplitudeImage, Option<SceneMask>)>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let img = manifest.read_image(e)?;
            let img = if img.is_normalized() {
                img
            } else {
                let mut n = normalize_image(&img, k)?.0;
                n.set_source_id(e.image.clone());
                n
            };
            let mask = manifest.read_mask(e)?;
            if let Some(m) = &mask {
                if !m.matches(&img) {
                    return Err(Error::DimensionMismatch(format!(
                        "mask for {} is {}x{}, image is {}x{}",
                        e.image,
                        m.width(),
                        m.height(),
                        img.width(),
                        img.height()
                    )));
                }
            }
            Ok((img, mask))
        })
        .collect()
}

/// Rank and cosine statistics of one dataset, keyed by category.
struct Alignment {
    ranks: Vec<Option<usize>>,
    cosines: Vec<f64>,
}

fn load_embeddings(ds: &Dataset, cfg: &EvalConfig) -> Result<Option<(EmbeddingSet, EmbeddingSet)>> {
    let (Some(ip), Some(tp)) = (&ds.cfg.img_emb, &ds.cfg.txt_emb) else {
        return Ok(None);
    };
    let img = EmbeddingSet::read(cfg.resolve(ip))?;
    let txt = EmbeddingSet::read(cfg.resolve(tp))?;
    if img.kind() != EmbeddingKind::Image || txt.kind() != EmbeddingKind::Text {
        return Err(Error::Config(format!(
            "`{}`: expected image and text embeddings, got {:?} and {:?}",
            ds.tag,
            img.kind(),
            txt.kind()
        )));
    }
    let ids: Vec<&str> = ds.manifest.entries.iter().map(|e| e.image.as_str()).collect();
    Ok(Some((img.select(&ids)?, txt.select(&ids)?)))
}

/// Pairs are shuffled with the run seed, cut into consecutive batches and
/// ranked within each batch. A trailing single pair stays unranked.
fn align(img: &EmbeddingSet, txt: &EmbeddingSet, batch: usize, seed: u64) -> Result<Alignment> {
    let n = img.count();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let ids: Vec<&str> = order.iter().map(|&i| img.ids()[i].as_str()).collect();
    let shuffled = embedding_ranks(&img.select(&ids)?, &txt.select(&ids)?, batch)?;
    let mut ranks = vec![None; n];
    for (&i, r) in order.iter().zip(shuffled) {
        ranks[i] = Some(r);
    }
    let cosines = paired_cosines(img, txt)?;
    Ok(Alignment { ranks, cosines })
}

fn pooled_label() -> (LabelSet, CategoryLabel) {
    let set = LabelSet::new([POOLED]).expect("single label");
    let label = set.label(POOLED).expect("member");
    (set, label)
}

fn fill_texture(row: &mut ReportRow, profile: &TextureProfile, set: &str, label: &str) {
    row.contrast = profile.sweep_mean(set, label, Feature::Contrast);
    row.homogeneity = profile.sweep_mean(set, label, Feature::Homogeneity);
    row.entropy = profile.sweep_mean(set, label, Feature::Entropy);
    row.correlation = profile.sweep_mean(set, label, Feature::Correlation);
    if row.contrast.is_none() {
        row.absent.push(Absent {
            family: Family::Texture,
            reason: "no patches".into(),
        });
    }
}

pub fn run_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let labels = cfg.label_set()?;
    let dictionary = cfg.keyword_dictionary(&labels)?;
    let priority = match &cfg.priority {
        Some(p) => p.iter().map(|n| labels.label(n)).collect::<Result<Vec<_>>>()?,
        None => labels.default_priority(),
    };

    let mut failures = Vec::new();
    let mut datasets = Vec::new();
    for (tag, dc) in cfg.datasets() {
        let manifest = Manifest::load(cfg.resolve(&dc.manifest))?;
        let entry_labels = manifest
            .entries
            .iter()
            .map(|e| e.primary_label(&labels, &dictionary, &priority))
            .collect::<Result<Vec<_>>>()?;
        let images = if cfg.metrics.kl || cfg.metrics.texture {
            load_images(&manifest, cfg.k).map_err(|e| e.to_string())
        } else {
            Ok(Vec::new())
        };
        if let Err(e) = &images {
            for (on, family) in [(cfg.metrics.kl, Family::Kl), (cfg.metrics.texture, Family::Texture)] {
                if on {
                    failures.push(FamilyFailure {
                        model: tag.clone(),
                        family,
                        error: e.clone(),
                    });
                }
            }
        }
        datasets.push(Dataset {
            tag,
            cfg: dc,
            manifest,
            labels: entry_labels,
            images,
        });
    }

    let mut warnings = Vec::new();
    for ds in &datasets {
        let unlabeled = ds.labels.iter().filter(|l| l.is_none()).count();
        if unlabeled > 0 {
            warnings.push(format!(
                "{}: {unlabeled} image(s) match no category and only enter the pooled row",
                ds.tag
            ));
        }
        for label in labels.labels() {
            let n = ds.count(Some(&label));
            if n < cfg.samples_per_label {
                warnings.push(format!(
                    "{}: category {label} has {n} image(s), fewer than {}",
                    ds.tag, cfg.samples_per_label
                ));
            }
        }
    }

    // KL of every model against the real set; the real set against itself
    // only supplies its own histograms.
    let real = &datasets[0];
    let real_imgs = real.labeled();
    let mut kl: BTreeMap<usize, std::result::Result<Vec<CategoryKl>, String>> = BTreeMap::new();
    if cfg.metrics.kl {
        for (i, ds) in datasets.iter().enumerate() {
            let res = match (&real_imgs, ds.labeled()) {
                (Some(r), Some(g)) => {
                    kl_by_category(r, if i == 0 { r } else { &g }, &labels, cfg.bins)
                        .map_err(|e| e.to_string())
                }
                (None, _) => Err(format!("real images unavailable for `{}`", ds.tag)),
                (_, None) => Err("images unavailable".to_string()),
            };
            if let (Err(e), true) = (&res, i > 0 && real_imgs.is_some() && ds.images.is_ok()) {
                failures.push(FamilyFailure {
                    model: ds.tag.clone(),
                    family: Family::Kl,
                    error: e.clone(),
                });
            }
            kl.insert(i, res);
        }
    }

    let texture = if cfg.metrics.texture {
        let samples: Vec<TextureSample> = datasets
            .iter()
            .filter_map(|ds| ds.images.as_ref().ok().map(|imgs| (ds, imgs)))
            .flat_map(|(ds, imgs)| {
                imgs.iter().zip(&ds.labels).map(|((img, mask), l)| TextureSample {
                    set: ds.tag.clone(),
                    label: l.clone(),
                    image: img.clone(),
                    mask: mask.clone(),
                })
            })
            .collect();
        let (pool_set, pool_label) = pooled_label();
        let pooled: Vec<TextureSample> = samples
            .iter()
            .map(|s| TextureSample {
                label: Some(pool_label.clone()),
                ..s.clone()
            })
            .collect();
        match (
            texture_profile(&samples, &labels, &cfg.texture),
            texture_profile(&pooled, &pool_set, &cfg.texture),
        ) {
            (Ok(per), Ok(pool)) => Ok((per, pool)),
            (Err(e), _) | (_, Err(e)) => {
                failures.push(FamilyFailure {
                    model: "*".into(),
                    family: Family::Texture,
                    error: e.to_string(),
                });
                Err(e.to_string())
            }
        }
    } else {
        Err("disabled".into())
    };

    let mut alignments = Vec::new();
    for ds in &datasets {
        let res = if !cfg.metrics.alignment {
            Err("disabled".to_string())
        } else {
            match load_embeddings(ds, cfg)
                .and_then(|e| e.map(|(i, t)| align(&i, &t, cfg.batch_size, cfg.seed)).transpose())
            {
                Ok(Some(a)) => Ok(a),
                Ok(None) => Err("no embeddings configured".to_string()),
                Err(e) => {
                    failures.push(FamilyFailure {
                        model: ds.tag.clone(),
                        family: Family::Alignment,
                        error: e.to_string(),
                    });
                    Err(e.to_string())
                }
            }
        };
        alignments.push(res);
    }

    let mut rows = Vec::new();
    let mut densities = Vec::new();
    let categories: Vec<Option<CategoryLabel>> =
        labels.labels().map(Some).chain(std::iter::once(None)).collect();
    for (di, ds) in datasets.iter().enumerate() {
        for (ci, cat) in categories.iter().enumerate() {
            let name = cat.as_ref().map_or(POOLED, |c| c.as_str()).to_string();
            let mut row = ReportRow {
                model: ds.tag.clone(),
                category: name.clone(),
                n_images: ds.count(cat.as_ref()),
                ..Default::default()
            };

            match kl.get(&di) {
                Some(Ok(reports)) => {
                    let c = &reports[ci];
                    let hist = if di == 0 { &c.real } else { &c.generated };
                    if let Some(h) = hist {
                        row.saturated_fraction = Some(h.saturated_fraction());
                        densities.push(DensityCurve {
                            model: ds.tag.clone(),
                            category: name.clone(),
                            centers: h.bin_centers(),
                            density: h.density().to_vec(),
                        });
                    }
                    if di == 0 {
                        row.absent.push(Absent {
                            family: Family::Kl,
                            reason: "reference set".into(),
                        });
                    } else if let Some(reason) = &c.report.absent_reason {
                        row.absent.push(Absent {
                            family: Family::Kl,
                            reason: reason.clone(),
                        });
                    } else {
                        row.kl_nats = c.report.kl_nats;
                        row.saturation_gap = c.report.saturation_gap;
                    }
                }
                Some(Err(e)) => row.absent.push(Absent {
                    family: Family::Kl,
                    reason: e.clone(),
                }),
                None => row.absent.push(Absent {
                    family: Family::Kl,
                    reason: "disabled".into(),
                }),
            }

            match &texture {
                Ok((per, pool)) => match cat {
                    Some(c) => fill_texture(&mut row, per, &ds.tag, c.as_str()),
                    None => fill_texture(&mut row, pool, &ds.tag, POOLED),
                },
                Err(e) => row.absent.push(Absent {
                    family: Family::Texture,
                    reason: e.clone(),
                }),
            }

            match &alignments[di] {
                Ok(a) => {
                    let member = |i: &usize| cat.is_none() || ds.labels[*i] == *cat;
                    let ranks: Vec<usize> = (0..a.ranks.len())
                        .filter(member)
                        .filter_map(|i| a.ranks[i])
                        .collect();
                    let cos: Vec<f64> = (0..a.cosines.len())
                        .filter(member)
                        .map(|i| a.cosines[i])
                        .collect();
                    row.n_ranked = ranks.len();
                    if !cos.is_empty() {
                        row.cosine_mean = Some(cos.iter().sum::<f64>() / cos.len() as f64);
                    }
                    if ranks.is_empty() {
                        row.absent.push(Absent {
                            family: Family::Alignment,
                            reason: "no ranked pairs".into(),
                        });
                    } else {
                        let s = summarize_ranks(&ranks, cfg.batch_size);
                        row.rank_mean = Some(s.mean);
                        row.rank_median = Some(s.median);
                        row.rank_variance = Some(s.variance);
                        row.rank_variance_about_median = Some(s.variance_about_median);
                    }
                }
                Err(e) => row.absent.push(Absent {
                    family: Family::Alignment,
                    reason: e.clone(),
                }),
            }
            rows.push(row);
        }
    }

    Ok(EvalReport {
        toolkit: "sarval".into(),
        version: crate::VERSION.into(),
        config: cfg.clone(),
        labels: labels.names().to_vec(),
        rows,
        texture: texture.map(|(per, pool)| [per.rows, pool.rows].concat()).unwrap_or_default(),
        warnings,
        failures,
        densities,
    })
}
