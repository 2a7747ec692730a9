//! Regenerates the synthetic mini-dataset under `tests/fixtures/mini` and its
//! frozen golden report.
//!
//!     cargo run -p sarval-cli --example make_minidata [-- <out-dir>]
//!
//! Everything is seeded, so rerunning produces identical files. Only rerun it
//! when the report format changes on purpose.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sarval_core::alignment::{EmbeddingKind, EmbeddingSet};
use sarval_core::checkpoint::ArchiveBuilder;
use sarval_core::labels::DEFAULT_LABELS;
use sarval_core::preprocess::normalize_image;
use sarval_core::raster::{write_mask_png, write_png};
use sarval_core::report::{run_eval, write_outputs, EvalConfig, OutputOptions};
use sarval_core::{AmplitudeImage, Manifest, ManifestEntry, SceneMask};

const SIZE: usize = 128;
const PER_LABEL: usize = 4;
const EMB_DIM: usize = 32;

fn phrase(label: &str) -> &'static str {
    match label {
        "forest" => "a dense forest canopy",
        "city" => "a city with dense blocks",
        "field" => "agricultural field parcels",
        "port" => "a port with several docks",
        "airport" => "an airport with two runways",
        "mountains" => "a mountain ridge casting layover",
        "structures" => "a long bridge over a river",
        "seacoast" => "a rocky coastline",
        "beach" => "a wide sandy beach",
        "industrial" => "industrial warehouses and tanks",
        "residential" => "residential houses along streets",
        _ => unreachable!("unknown label {label}"),
    }
}

/// FNV-1a; stable across platforms and toolchains.
fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(seed: u64, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal)).collect()
}

/// Rayleigh(1) by inverse CDF.
fn rayleigh(rng: &mut ChaCha8Rng) -> f64 {
    (-2.0 * (1.0 - rng.gen::<f64>()).ln()).sqrt()
}

/// Speckled scene: Rayleigh speckle on a category-dependent backscatter map.
/// `generated` smooths the speckle and bends the amplitude curve.
fn scene(ci: usize, k: usize, generated: bool) -> AmplitudeImage {
    let seed = (ci * 100 + k) as u64 + if generated { 50_000 } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 6.0 + 3.0 * ci as f64;
    let contrast = 0.2 + 0.05 * ci as f64;
    let scatterers: Vec<(usize, usize)> = (0..(ci % 4) * 6)
        .map(|_| (rng.gen_range(0..SIZE), rng.gen_range(0..SIZE)))
        .collect();
    let mut data = vec![0f64; SIZE * SIZE];
    for y in 0..SIZE {
        for x in 0..SIZE {
            let field = 1.0
                + contrast * (2.0 * PI * x as f64 / period).sin() * (2.0 * PI * y as f64 / (period * 1.5)).cos();
            data[y * SIZE + x] = field * rayleigh(&mut rng);
        }
    }
    for &(sx, sy) in &scatterers {
        data[sy * SIZE + sx] *= 8.0;
    }
    if generated {
        let src = data.clone();
        for y in 0..SIZE {
            for x in 0..SIZE {
                let (x1, y1) = ((x + 1).min(SIZE - 1), (y + 1).min(SIZE - 1));
                let m = (src[y * SIZE + x] + src[y * SIZE + x1] + src[y1 * SIZE + x] + src[y1 * SIZE + x1]) / 4.0;
                data[y * SIZE + x] = (0.5 * m + 0.5 * src[y * SIZE + x]).powf(0.9);
            }
        }
    }
    let raw = AmplitudeImage::new(SIZE, SIZE, data.into_iter().map(|v| v as f32).collect()).unwrap();
    normalize_image(&raw, 3.0).unwrap().0
}

/// Two regions split at a seeded column; the left one is the larger.
fn mask(ci: usize, k: usize) -> SceneMask {
    let split = 72 + (ci * 7 + k * 5) % 24;
    let data = (0..SIZE * SIZE)
        .map(|i| if i % SIZE < split { 1 } else { 2 })
        .collect();
    SceneMask::new(SIZE, SIZE, data).unwrap()
}

fn write_set(root: &Path, set: &str, generated: bool) -> Vec<ManifestEntry> {
    let dir = root.join(set);
    fs::create_dir_all(&dir).unwrap();
    let mut entries = Vec::new();
    for (ci, label) in DEFAULT_LABELS.iter().enumerate() {
        for k in 0..PER_LABEL {
            let name = format!("{label}_{k}.png");
            write_png(&scene(ci, k, generated), dir.join(&name), 8).unwrap();
            let mut e = ManifestEntry::new(name);
            if !generated {
                let mask_name = format!("{label}_{k}_mask.png");
                write_mask_png(&mask(ci, k), dir.join(&mask_name)).unwrap();
                e.mask = Some(mask_name);
            }
            e.caption = Some(format!("SAR amplitude image, scene {k}: {}", phrase(label)));
            entries.push(e);
        }
    }
    Manifest::new(entries.clone(), &dir)
        .unwrap()
        .save(dir.join("manifest.json"))
        .unwrap();
    entries
}

/// Hash-seeded stand-in for a vision-language encoder: captions map to a
/// fixed direction, images to a noisy copy of their caption's direction.
fn write_embeddings(root: &Path, set: &str, entries: &[ManifestEntry], noise: f32) {
    let ids: Vec<String> = entries.iter().map(|e| e.image.clone()).collect();
    let mut txt = Vec::new();
    let mut img = Vec::new();
    for e in entries {
        let caption = e.caption.as_deref().unwrap();
        let t = unit(gaussian(fnv(caption), EMB_DIM));
        let n = gaussian(fnv(&format!("{set}/{}", e.image)), EMB_DIM);
        img.extend(unit(t.iter().zip(&n).map(|(a, b)| a + noise * b).collect()));
        txt.extend(t);
    }
    let dir = root.join(set);
    EmbeddingSet::new(EMB_DIM, ids.clone(), img, EmbeddingKind::Image)
        .unwrap()
        .write(dir.join("img.emb"))
        .unwrap();
    EmbeddingSet::new(EMB_DIM, ids, txt, EmbeddingKind::Text)
        .unwrap()
        .write(dir.join("txt.emb"))
        .unwrap();
}

fn write_checkpoints(root: &Path) {
    let dir = root.join("ckpt");
    fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let tensors: [(&str, Vec<usize>); 5] = [
        ("down.0.resnets.0.conv.weight", vec![8, 8]),
        ("down.0.attentions.0.to_q.weight", vec![8, 8]),
        ("mid.attentions.0.to_k.weight", vec![4, 4]),
        ("up.0.resnets.0.conv.weight", vec![8, 8]),
        ("up.0.norm.weight", vec![8]),
    ];
    let mut before = ArchiveBuilder::new().metadata("format", "pt");
    let mut after = ArchiveBuilder::new().metadata("format", "pt");
    for (i, (name, shape)) in tensors.iter().enumerate() {
        let n: usize = shape.iter().product();
        let w: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
        // later layers move more; the norm layer stays below the threshold
        let scale = match i {
            4 => 1e-4,
            _ => 1e-3 * (i + 1) as f64,
        };
        let w2: Vec<f32> = w
            .iter()
            .map(|v| v + (scale * rng.sample::<f64, _>(rand_distr::StandardNormal)) as f32)
            .collect();
        if i == 4 {
            before.add_f16(*name, shape.clone(), &w).unwrap();
            after.add_f16(*name, shape.clone(), &w2).unwrap();
        } else {
            before.add_f32(*name, shape.clone(), &w).unwrap();
            after.add_f32(*name, shape.clone(), &w2).unwrap();
        }
    }
    before.write(dir.join("before.ckpt")).unwrap();
    after.write(dir.join("after.ckpt")).unwrap();

    let mut lora = ArchiveBuilder::new();
    let a: Vec<f32> = (0..16).map(|_| normal.sample(&mut rng) as f32).collect();
    let b: Vec<f32> = (0..16).map(|_| normal.sample(&mut rng) as f32).collect();
    lora.add_f32("down.0.attentions.0.to_q.weight.lora_A", vec![8, 2], &a).unwrap();
    lora.add_f32("down.0.attentions.0.to_q.weight.lora_B", vec![2, 8], &b).unwrap();
    lora.write(dir.join("lora.ckpt")).unwrap();

    fs::write(
        dir.join("groups.json"),
        r#"[
  {"regex": "^(down|mid|up)\\.(?:\\d+\\.)?resnets", "block": "$1", "sub_block": "resnet"},
  {"regex": "^(down|mid|up)\\.(?:\\d+\\.)?attentions", "block": "$1", "sub_block": "attention"}
]
"#,
    )
    .unwrap();
}

const CONFIG: &str = r#"{
  "real": {"tag": "real", "manifest": "real/manifest.json", "img_emb": "real/img.emb", "txt_emb": "real/txt.emb"},
  "models": [
    {"tag": "gen", "manifest": "gen/manifest.json", "img_emb": "gen/img.emb", "txt_emb": "gen/txt.emb"}
  ],
  "bins": 256,
  "batch_size": 16,
  "samples_per_label": 4,
  "texture": {"levels": 64, "distances": [1, 2, 4, 8], "angles": [0, 45, 90, 135], "patch": 64, "stride": 32},
  "seed": 20240601
}
"#;

fn main() {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini"));
    fs::create_dir_all(&root).unwrap();

    let real = write_set(&root, "real", false);
    let gen = write_set(&root, "gen", true);
    write_embeddings(&root, "real", &real, 0.6);
    write_embeddings(&root, "gen", &gen, 0.9);
    write_checkpoints(&root);
    fs::write(root.join("eval.json"), CONFIG).unwrap();

    let cfg = EvalConfig::load(root.join("eval.json")).unwrap();
    let report = run_eval(&cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let opts = OutputOptions {
        svg: false,
        full_precision: false,
    };
    for f in write_outputs(&report, root.join("expected"), opts).unwrap() {
        println!("{}", f.display());
    }
}
