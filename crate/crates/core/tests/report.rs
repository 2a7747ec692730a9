use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sarval_core::alignment::{EmbeddingKind, EmbeddingSet};
use sarval_core::raster::write_png;
use sarval_core::report::{run_eval, write_outputs, EvalConfig, Family, OutputOptions, POOLED};
use sarval_core::{AmplitudeImage, ErrorKind, Manifest, ManifestEntry};

const CATS: [&str; 3] = ["forest", "city", "port"];

/// Three categories with three 48x48 images each, plus identity embeddings.
fn dataset(dir: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (ci, cat) in CATS.iter().enumerate() {
        for k in 0..3 {
            let name = format!("{cat}_{k}.png");
            let data: Vec<f32> = (0..48 * 48)
                .map(|_| (rng.gen::<f32>() * (0.3 + 0.2 * ci as f32)).min(1.0))
                .collect();
            let img = AmplitudeImage::new(48, 48, data).unwrap();
            write_png(&img, dir.join(&name), 8).unwrap();
            let mut e = ManifestEntry::new(name);
            e.caption = Some(format!("A SAR image of a {cat}"));
            entries.push(e);
        }
    }
    let ids: Vec<String> = entries.iter().map(|e| e.image.clone()).collect();
    Manifest::new(entries, dir).unwrap().save(dir.join("manifest.json")).unwrap();

    let n = ids.len();
    let mut eye = vec![0.0f32; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    EmbeddingSet::new(n, ids.clone(), eye.clone(), EmbeddingKind::Image)
        .unwrap()
        .write(dir.join("img.emb"))
        .unwrap();
    EmbeddingSet::new(n, ids, eye, EmbeddingKind::Text)
        .unwrap()
        .write(dir.join("txt.emb"))
        .unwrap();
}

fn config(dir: &Path, extra: &str) -> EvalConfig {
    let text = format!(
        r#"{{
            "real": {{"manifest": "manifest.json", "img_emb": "img.emb", "txt_emb": "txt.emb"}},
            "models": [{{"tag": "same", "manifest": "manifest.json", "img_emb": "img.emb", "txt_emb": "txt.emb"}}],
            "labels": ["forest", "city", "port"],
            "bins": 32,
            "batch_size": 4,
            "texture": {{"levels": 16, "distances": [1, 2], "angles": [0, 90], "patch": 16, "stride": 16}},
            "samples_per_label": 3
            {extra}
        }}"#
    );
    EvalConfig::from_json(&text, dir).unwrap()
}

#[test]
fn identical_sets_give_zero_kl_and_unit_rank() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 1);
    let report = run_eval(&config(dir.path(), "")).unwrap();

    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    assert_eq!(report.rows.len(), 2 * (CATS.len() + 1));
    for cat in CATS.iter().copied().chain([POOLED]) {
        let row = report.row("same", cat).unwrap();
        // 8-bit images leave empty bins, each adding the smoothing constant
        assert!(row.kl_nats.unwrap().abs() < 1e-10, "{cat}: {:?}", row.kl_nats);
        assert_eq!(row.saturation_gap, Some(0.0));
        assert_eq!(row.rank_mean, Some(1.0));
        assert_eq!(row.rank_variance, Some(0.0));
        assert!((row.cosine_mean.unwrap() - 1.0).abs() < 1e-12);
        assert!(row.contrast.is_some() && row.entropy.is_some());
        let real = report.row("real", cat).unwrap();
        assert!(real.kl_nats.is_none() && real.is_absent(Family::Kl));
        assert_eq!(real.contrast, row.contrast);
    }
}

#[test]
fn missing_embeddings_only_drop_alignment() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 2);
    let mut cfg = config(dir.path(), "");
    cfg.models[0].img_emb = None;
    cfg.models[0].txt_emb = Some("absent.emb".into());
    cfg.real.txt_emb = Some("nowhere.emb".into());
    let report = run_eval(&cfg).unwrap();

    let row = report.row("same", "forest").unwrap();
    assert!(row.is_absent(Family::Alignment));
    assert!(row.rank_mean.is_none() && row.cosine_mean.is_none());
    assert!(row.kl_nats.is_some() && row.contrast.is_some());
    // unconfigured is not a failure, an unreadable file is
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].model, "real");
    assert_eq!(report.failures[0].family, Family::Alignment);
}

#[test]
fn shortfall_warning_and_toggles() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 3);
    let mut cfg = config(
        dir.path(),
        r#", "metrics": {"kl": true, "texture": false, "alignment": false}"#,
    );
    cfg.samples_per_label = 30;
    let report = run_eval(&cfg).unwrap();
    assert_eq!(report.warnings.len(), 2 * CATS.len());
    assert!(report.warnings[0].contains("fewer than 30"));
    let row = report.row("same", "city").unwrap();
    assert!(row.is_absent(Family::Texture) && row.is_absent(Family::Alignment));
    assert!(row.kl_nats.is_some());
    assert!(report.texture.is_empty());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 4);
    let cfg = config(dir.path(), r#", "seed": 9"#);
    let opts = OutputOptions {
        svg: true,
        full_precision: true,
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let fa = write_outputs(&run_eval(&cfg).unwrap(), &a, opts).unwrap();
    let fb = write_outputs(&run_eval(&cfg).unwrap(), &b, opts).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 9);
    assert_eq!(json["toolkit"], "sarval");
    let echoed = EvalConfig::from_json(&json["config"].to_string(), dir.path()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn unknown_manifest_label_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 5);
    let mut m = Manifest::load(dir.path().join("manifest.json")).unwrap();
    m.entries[0].labels = Some(vec!["volcano".into()]);
    m.save(dir.path().join("manifest.json")).unwrap();
    let err = run_eval(&config(dir.path(), "")).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
}
