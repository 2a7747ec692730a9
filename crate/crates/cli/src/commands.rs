use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use sarval_core::alignment::{embedding_ranks, paired_cosines, per_label_cosine, summarize_ranks, EmbeddingSet};
use sarval_core::amp_stats::{kl_by_category, CategoryKl};
use sarval_core::checkpoint::{block_aggregate, load_group_rules, mawc as mawc_report, merge_archive, TensorArchive};
use sarval_core::diffusion::noise_check as run_noise_check;
use sarval_core::preprocess::{compute_norm_params, normalize_clip, normalize_image, SaturationReport, DEFAULT_SIGMA_MULTIPLIER};
use sarval_core::raster::{write_mask_png, write_sidecar};
use sarval_core::report::{round_json, round_sig, run_eval, write_outputs, EvalConfig, OutputOptions, POOLED, REPORT_DIGITS};
use sarval_core::texture::{texture_profile, TextureConfig, TextureSample};
use sarval_core::{
    write_raster, AmplitudeImage, CategoryLabel, Error, KeywordDictionary, LabelSet, Manifest, ManifestEntry,
    SceneMask,
};
use serde_json::{json, Value};

use crate::{
    AlignArgs, GlcmArgs, HistoArgs, KlArgs, LabelArgs, LoraMergeArgs, MawcArgs, NoiseCheckArgs, NormalizeArgs,
    ReportArgs, Status, TileArgs,
};

fn num(v: f64) -> String {
    if v.is_finite() {
        serde_json::to_string(&round_sig(v, REPORT_DIGITS)).unwrap_or_default()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_csv(out: Option<&Path>, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    emit_bytes(out, &w.into_inner()?)
}

fn write_json(out: Option<&Path>, mut v: Value, round: bool) -> Result<()> {
    if round {
        round_json(&mut v);
    }
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    emit_bytes(out, &bytes)
}

fn emit_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

/// Output location mirroring `rel` under `dir`. Absolute or escaping paths
/// collapse to their file name.
fn mirror(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    let nested = p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if nested {
        dir.join(p)
    } else {
        dir.join(p.file_name().unwrap_or(p.as_os_str()))
    }
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

fn rel_string(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn check_unique(paths: &[PathBuf]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in paths {
        if !seen.insert(p) {
            return Err(Error::Duplicate(format!("two inputs map to output {}", p.display())).into());
        }
    }
    Ok(())
}

pub fn normalize(a: NormalizeArgs) -> Result<Status> {
    let m = Manifest::load(&a.input)?;
    let targets: Vec<PathBuf> = m
        .entries
        .iter()
        .map(|e| mirror(&a.out, &e.image).with_extension("ras"))
        .collect();
    check_unique(&targets)?;
    let results = m
        .entries
        .par_iter()
        .zip(&targets)
        .map(|(e, dst)| -> Result<(ManifestEntry, Value, SaturationReport)> {
            let img = m.read_image(e)?;
            let params = compute_norm_params(&img, a.k)?;
            let (norm, rep) = normalize_clip(&img, &params)?;
            create_parent(dst)?;
            write_raster(&norm, dst)?;
            write_sidecar(&norm, dst)?;
            let mut entry = e.clone();
            entry.image = rel_string(&a.out, dst);
            if let Some(mask) = &e.mask {
                let mdst = mirror(&a.out, mask);
                create_parent(&mdst)?;
                fs::copy(m.resolve(mask), &mdst).with_context(|| format!("copying mask {mask}"))?;
                entry.mask = Some(rel_string(&a.out, &mdst));
            }
            let info = json!({
                "image": e.image,
                "mu": params.mu,
                "sigma": params.sigma,
                "saturated_fraction": rep.fraction,
            });
            Ok((entry, info, rep))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = SaturationReport::new(0, 0);
    let mut entries = Vec::new();
    let mut per_image = Vec::new();
    for (e, info, rep) in results {
        total = total.merge(&rep);
        entries.push(e);
        per_image.push(info);
    }
    Manifest::new(entries, &a.out)?.save(a.out.join("manifest.json"))?;
    write_json(
        None,
        json!({
            "k": a.k,
            "images": per_image.len(),
            "total_pixels": total.total_pixels,
            "saturated_pixels": total.saturated_pixels,
            "saturated_fraction": total.fraction,
            "per_image": per_image,
        }),
        true,
    )?;
    Ok(Status::Ok)
}

fn crop_mask(mask: &SceneMask, x: usize, y: usize, size: usize) -> Result<SceneMask> {
    let data = (y..y + size)
        .flat_map(|r| mask.data()[r * mask.width() + x..r * mask.width() + x + size].iter().copied())
        .collect();
    Ok(SceneMask::new(size, size, data)?)
}

pub fn tile(a: TileArgs) -> Result<Status> {
    let m = Manifest::load(&a.input)?;
    let mut entries = Vec::new();
    let mut written = 0usize;
    for e in &m.entries {
        let img = m.read_image(e)?;
        let mask = m.read_mask(e)?;
        let tiles = sarval_core::preprocess::tile(&img, a.size, a.stride)?;
        if tiles.is_empty() {
            eprintln!(
                "warning: {} ({}x{}) is smaller than one {} tile, skipped",
                e.image,
                img.width(),
                img.height(),
                a.size
            );
            continue;
        }
        let offsets: Vec<(usize, usize)> = (0..=img.height() - a.size)
            .step_by(a.stride)
            .flat_map(|y| (0..=img.width() - a.size).step_by(a.stride).map(move |x| (x, y)))
            .collect();
        let base = mirror(&a.out, &e.image);
        let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (t, &(x, y)) in tiles.iter().zip(&offsets) {
            let dst = base.with_file_name(format!("{stem}_x{x}_y{y}.ras"));
            create_parent(&dst)?;
            write_raster(t, &dst)?;
            write_sidecar(t, &dst)?;
            let mut entry = e.clone();
            entry.image = rel_string(&a.out, &dst);
            entry.mask = None;
            if let Some(mk) = &mask {
                let mdst = base.with_file_name(format!("{stem}_x{x}_y{y}_mask.png"));
                write_mask_png(&crop_mask(mk, x, y, a.size)?, &mdst)?;
                entry.mask = Some(rel_string(&a.out, &mdst));
            }
            entries.push(entry);
            written += 1;
        }
    }
    Manifest::new(entries, &a.out)?.save(a.out.join("manifest.json"))?;
    eprintln!("{written} tiles written to {}", a.out.display());
    Ok(Status::Ok)
}

struct Labeling {
    labels: LabelSet,
    dictionary: KeywordDictionary,
    priority: Vec<CategoryLabel>,
}

fn labeling(a: &LabelArgs) -> Result<Labeling> {
    let labels = match &a.labels {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let names: Vec<String> = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            LabelSet::new(names)?
        }
        None => LabelSet::default(),
    };
    let dictionary = match &a.dictionary {
        Some(p) => KeywordDictionary::from_json_file(p, &labels)?,
        None => KeywordDictionary::default_for(&labels)?,
    };
    let priority = labels.default_priority();
    Ok(Labeling {
        labels,
        dictionary,
        priority,
    })
}

struct Loaded {
    items: Vec<(Option<CategoryLabel>, AmplitudeImage)>,
    masks: Vec<Option<SceneMask>>,
}

/// Reads and labels every image; images not yet flagged as normalized are
/// normalized with k = 3.
fn load(path: &Path, l: &Labeling, masks: bool) -> Result<Loaded> {
    let manifest = Manifest::load(path)?;
    let loaded = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<_> {
            let label = e.primary_label(&l.labels, &l.dictionary, &l.priority)?;
            let img = manifest.read_image(e)?;
            let img = if img.is_normalized() {
                img
            } else {
                normalize_image(&img, DEFAULT_SIGMA_MULTIPLIER)?.0
            };
            let mask = if masks { manifest.read_mask(e)? } else { None };
            Ok(((label, img), mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let (items, masks) = loaded.into_iter().unzip();
    Ok(Loaded { items, masks })
}

fn category_name(c: &CategoryKl) -> String {
    c.report
        .category
        .as_ref()
        .map_or(POOLED.to_string(), |l| l.to_string())
}

fn wanted(c: &CategoryKl, per_category: bool) -> bool {
    per_category || c.report.category.is_none()
}

pub fn histo(a: HistoArgs) -> Result<Status> {
    let l = labeling(&a.labels)?;
    let set = load(&a.manifest, &l, false)?;
    let cats = kl_by_category(&set.items, &set.items, &l.labels, a.bins)?;
    let mut rows = Vec::new();
    for c in cats.iter().filter(|c| wanted(c, a.per_category)) {
        let Some(h) = &c.real else { continue };
        for (center, d) in h.bin_centers().iter().zip(h.density()) {
            rows.push(vec![
                category_name(c),
                c.report.n_real.to_string(),
                num(h.saturated_fraction()),
                num(*center),
                num(*d),
            ]);
        }
    }
    write_csv(
        a.out.as_deref(),
        &["category", "n_images", "saturated_fraction", "bin_center", "density"],
        rows,
    )?;
    Ok(Status::Ok)
}

pub fn kl(a: KlArgs) -> Result<Status> {
    let l = labeling(&a.labels)?;
    let real = load(&a.real, &l, false)?;
    let gen = load(&a.gen, &l, false)?;
    let cats: Vec<CategoryKl> = kl_by_category(&real.items, &gen.items, &l.labels, a.bins)?
        .into_iter()
        .filter(|c| wanted(c, a.per_category))
        .collect();
    let reports: Vec<Value> = cats
        .iter()
        .map(|c| {
            let mut v = serde_json::to_value(&c.report).unwrap_or(Value::Null);
            v["category"] = Value::String(category_name(c));
            v
        })
        .collect();
    write_json(
        a.out.as_deref(),
        json!({ "bins": a.bins, "toolkit_version": sarval_core::VERSION, "reports": reports }),
        true,
    )?;
    if let Some(p) = &a.csv {
        let rows = cats
            .iter()
            .map(|c| {
                let r = &c.report;
                vec![
                    category_name(c),
                    opt(r.kl_nats),
                    r.n_real.to_string(),
                    r.n_gen.to_string(),
                    opt(r.saturated_real),
                    opt(r.saturated_gen),
                    opt(r.saturation_gap),
                    r.absent_reason.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            Some(p),
            &["category", "kl_nats", "n_real", "n_gen", "saturated_real", "saturated_gen", "saturation_gap", "absent"],
            rows,
        )?;
    }
    if let Some(p) = &a.hist_csv {
        let mut rows = Vec::new();
        for c in &cats {
            for (set, h) in [("real", &c.real), ("gen", &c.generated)] {
                let Some(h) = h else { continue };
                for (center, d) in h.bin_centers().iter().zip(h.density()) {
                    rows.push(vec![set.to_string(), category_name(c), num(*center), num(*d)]);
                }
            }
        }
        write_csv(Some(p), &["set", "category", "bin_center", "density"], rows)?;
    }
    Ok(Status::Ok)
}

pub fn glcm(a: GlcmArgs) -> Result<Status> {
    let cfg = TextureConfig {
        levels: a.levels,
        distances: a.distances.clone(),
        angles: a.angles.clone(),
        patch: a.patch,
        stride: a.stride,
        symmetric: a.symmetric,
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let l = labeling(&a.labels)?;
    let set = load(&a.manifest, &l, true)?;
    let samples: Vec<TextureSample> = set
        .items
        .into_iter()
        .zip(set.masks)
        .map(|((label, image), mask)| TextureSample {
            set: a.set.clone(),
            label,
            image,
            mask,
        })
        .collect();
    let profile = texture_profile(&samples, &l.labels, &cfg)?;
    for ab in &profile.absent {
        eprintln!("warning: {} / {}: no patches", ab.set, ab.label);
    }
    let rows = profile
        .rows
        .iter()
        .map(|r| {
            vec![
                r.set.clone(),
                r.label.to_string(),
                r.feature.name().to_string(),
                r.d.to_string(),
                num(r.theta),
                num(r.mean),
                num(r.std),
                r.n_patches.to_string(),
            ]
        })
        .collect();
    write_csv(
        a.out.as_deref(),
        &["set", "label", "feature", "d", "theta", "mean", "std", "n_patches"],
        rows,
    )?;
    Ok(Status::Ok)
}

pub fn align(a: AlignArgs) -> Result<Status> {
    let mut img = EmbeddingSet::read(&a.img_emb)?;
    let mut txt = EmbeddingSet::read(&a.txt_emb)?;
    let mut labels = None;
    if let Some(mp) = &a.manifest {
        let l = labeling(&a.labels)?;
        let m = Manifest::load(mp)?;
        let ids: Vec<&str> = m.entries.iter().map(|e| e.image.as_str()).collect();
        img = img.select(&ids)?;
        txt = txt.select(&ids)?;
        let per: Vec<Option<CategoryLabel>> = m
            .entries
            .iter()
            .map(|e| e.primary_label(&l.labels, &l.dictionary, &l.priority))
            .collect::<sarval_core::Result<_>>()?;
        labels = Some((l, per));
    } else if img.ids() != txt.ids() {
        return Err(Error::DimensionMismatch(
            "image and text embedding ids differ; pass --manifest to pair them".into(),
        )
        .into());
    }
    let ranks = embedding_ranks(&img, &txt, a.batch)?;
    let stats = summarize_ranks(&ranks, a.batch);
    let cos = paired_cosines(&img, &txt)?;
    let mut out = json!({
        "batch_size": a.batch,
        "rank": stats,
        "cosine_mean": cos.iter().sum::<f64>() / cos.len() as f64,
    });
    if let (true, Some((l, per))) = (a.per_label, &labels) {
        let cells = per_label_cosine(&img, &txt, per, &l.labels)?;
        out["per_label"] = serde_json::to_value(cells)?;
    }
    write_json(a.out.as_deref(), out, true)?;
    Ok(Status::Ok)
}

pub fn noise_check(a: NoiseCheckArgs) -> Result<Status> {
    let r = run_noise_check(a.gamma, a.samples, a.plane_size, a.seed)?;
    write_json(None, serde_json::to_value(r)?, false)?;
    Ok(Status::Ok)
}

pub fn mawc(a: MawcArgs) -> Result<Status> {
    let before = TensorArchive::read(&a.before)?;
    let after = TensorArchive::read(&a.after)?;
    let report = mawc_report(&before, &after, a.threshold)?;
    for n in &report.only_before {
        eprintln!("warning: `{n}` only in {}", a.before.display());
    }
    for n in &report.only_after {
        eprintln!("warning: `{n}` only in {}", a.after.display());
    }
    let layer_rows: Vec<Vec<String>> = report
        .deltas
        .iter()
        .map(|d| {
            vec![
                d.layer_name.clone(),
                num(d.mawc),
                d.param_count.to_string(),
                num(d.changed_fraction),
            ]
        })
        .collect();
    let layer_header = ["layer_name", "mawc", "param_count", "changed_fraction"];
    match &a.groups {
        Some(g) => {
            let rules = load_group_rules(g)?;
            let rows = block_aggregate(&report.deltas, &rules, a.weighted)
                .into_iter()
                .map(|b| {
                    vec![
                        b.block,
                        b.sub_block,
                        num(b.mean_mawc),
                        b.layer_count.to_string(),
                        b.param_count.to_string(),
                    ]
                })
                .collect();
            write_csv(
                a.out.as_deref(),
                &["block", "sub_block", "mean_mawc", "layer_count", "param_count"],
                rows,
            )?;
            if let Some(p) = &a.layers {
                write_csv(Some(p), &layer_header, layer_rows)?;
            }
        }
        None => write_csv(a.out.as_deref(), &layer_header, layer_rows)?,
    }
    Ok(Status::Ok)
}

pub fn lora_merge(a: LoraMergeArgs) -> Result<Status> {
    let base = TensorArchive::read(&a.base)?;
    let lora = TensorArchive::read(&a.lora)?;
    let outcome = merge_archive(&base, &lora, a.alpha, a.rank)?;
    if outcome.merged.is_empty() {
        eprintln!("warning: no adapter pairs matched a base tensor");
    }
    outcome.archive.write(&a.out)?;
    write_json(None, json!({ "out": a.out, "merged": outcome.merged }), false)?;
    Ok(Status::Ok)
}

pub fn report(a: ReportArgs) -> Result<Status> {
    if !a.config.is_file() {
        return Err(Error::Config(format!("config {} not found", a.config.display())).into());
    }
    let mut cfg = EvalConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let report = run_eval(&cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_outputs(
        &report,
        &a.out_dir,
        OutputOptions {
            svg: !a.no_svg,
            full_precision: a.full_precision,
        },
    )?;
    if report.failures.is_empty() {
        Ok(Status::Ok)
    } else {
        for f in &report.failures {
            eprintln!("error: {} failed for `{}`: {}", f.family.name(), f.model, f.error);
        }
        Ok(Status::Partial)
    }
}
