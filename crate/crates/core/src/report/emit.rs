use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{svg, EvalReport, ReportRow};
use crate::error::{Error, Result};

/// Significant digits of every float written to JSON/CSV.
pub const REPORT_DIGITS: usize = 6;

pub const CSV_COLUMNS: [&str; 17] = [
    "model",
    "category",
    "n_images",
    "kl_nats",
    "saturated_fraction",
    "saturation_gap",
    "rank_mean",
    "rank_median",
    "rank_variance",
    "rank_variance_about_median",
    "n_ranked",
    "cosine_mean",
    "contrast",
    "homogeneity",
    "entropy",
    "correlation",
    "absent",
];

pub const TEXTURE_COLUMNS: [&str; 8] = ["set", "label", "feature", "d", "theta", "mean", "std", "n_patches"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    /// Unrounded JSON, the full-precision sidecar.
    JsonFull,
    Csv,
    TextureCsv,
    /// One file per category and metric family; `path` is a directory.
    SvgHistograms,
}

pub fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() || digits == 0 {
        return v;
    }
    format!("{:.*e}", digits - 1, v).parse().unwrap_or(v)
}

/// Rounds every non-integer number in `v` to the report precision.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().unwrap_or_default(), REPORT_DIGITS);
            if let Some(m) = serde_json::Number::from_f64(r) {
                *n = m;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn to_json(report: &EvalReport, round: bool) -> Result<Vec<u8>> {
    // serde_json's map is a BTreeMap, so keys come out sorted.
    let mut v = serde_json::to_value(report).map_err(|e| Error::json("report", e))?;
    if round {
        round_json(&mut v);
    }
    let mut out = serde_json::to_vec_pretty(&v).map_err(|e| Error::json("report", e))?;
    out.push(b'\n');
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => {
            serde_json::to_string(&round_sig(x, REPORT_DIGITS)).unwrap_or_default()
        }
        _ => String::new(),
    }
}

fn row_record(r: &ReportRow) -> Vec<String> {
    let absent: Vec<String> = r
        .absent
        .iter()
        .map(|a| format!("{}: {}", a.family.name(), a.reason))
        .collect();
    vec![
        r.model.clone(),
        r.category.clone(),
        r.n_images.to_string(),
        cell(r.kl_nats),
        cell(r.saturated_fraction),
        cell(r.saturation_gap),
        cell(r.rank_mean),
        cell(r.rank_median),
        cell(r.rank_variance),
        cell(r.rank_variance_about_median),
        r.n_ranked.to_string(),
        cell(r.cosine_mean),
        cell(r.contrast),
        cell(r.homogeneity),
        cell(r.entropy),
        cell(r.correlation),
        absent.join("; "),
    ]
}

fn csv_bytes<I>(header: &[&str], records: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::UnsupportedFormat(format!("csv: {e}"));
    w.write_record(header).map_err(wrap)?;
    for r in records {
        w.write_record(&r).map_err(wrap)?;
    }
    w.into_inner()
        .map_err(|e| Error::UnsupportedFormat(format!("csv: {e}")))
}

fn texture_records(report: &EvalReport) -> impl Iterator<Item = Vec<String>> + '_ {
    report.texture.iter().map(|t| {
        vec![
            t.set.clone(),
            t.label.to_string(),
            t.feature.name().to_string(),
            t.d.to_string(),
            cell(Some(t.theta)),
            cell(Some(t.mean)),
            cell(Some(t.std)),
            t.n_patches.to_string(),
        ]
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_stem(category: &str) -> String {
    category
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `report` in one format. Returns the files written.
pub fn emit(report: &EvalReport, format: Format, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    match format {
        Format::Json => write(path, &to_json(report, true)?)?,
        Format::JsonFull => write(path, &to_json(report, false)?)?,
        Format::Csv => write(path, &csv_bytes(&CSV_COLUMNS, report.rows.iter().map(row_record))?)?,
        Format::TextureCsv => write(path, &csv_bytes(&TEXTURE_COLUMNS, texture_records(report))?)?,
        Format::SvgHistograms => {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            let mut written = Vec::new();
            for category in report.categories() {
                let charts = [
                    ("amplitude", svg::amplitude(report, category)),
                    ("texture", svg::texture(report, category)),
                    ("alignment", svg::alignment(report, category)),
                ];
                for (family, doc) in charts {
                    if let Some(doc) = doc {
                        let p = path.join(format!("{}_{family}.svg", file_stem(category)));
                        write(&p, doc.as_bytes())?;
                        written.push(p);
                    }
                }
            }
            return Ok(written);
        }
    }
    Ok(vec![path.to_path_buf()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputOptions {
    pub svg: bool,
    pub full_precision: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            svg: true,
            full_precision: false,
        }
    }
}

/// `report.json`, `report.csv`, `texture.csv`, plus `svg/` and
/// `report.full.json` when requested.
pub fn write_outputs(report: &EvalReport, dir: impl AsRef<Path>, opts: OutputOptions) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    out.extend(emit(report, Format::Json, dir.join("report.json"))?);
    out.extend(emit(report, Format::Csv, dir.join("report.csv"))?);
    out.extend(emit(report, Format::TextureCsv, dir.join("texture.csv"))?);
    if opts.full_precision {
        out.extend(emit(report, Format::JsonFull, dir.join("report.full.json"))?);
    }
    if opts.svg {
        out.extend(emit(report, Format::SvgHistograms, dir.join("svg"))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{Absent, EvalConfig, Family, DatasetConfig, DensityCurve};

    fn empty_report() -> EvalReport {
        let cfg = EvalConfig::new(
            DatasetConfig {
                tag: None,
                manifest: "r.json".into(),
                img_emb: None,
                txt_emb: None,
            },
            ".",
        );
        EvalReport {
            toolkit: "sarval".into(),
            version: "0".into(),
            config: cfg,
            labels: vec![],
            rows: vec![],
            texture: vec![],
            warnings: vec![],
            failures: vec![],
            densities: vec![],
        }
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.17082039226511597, 6), 0.17082);
        assert_eq!(round_sig(1234567.0, 6), 1234570.0);
        assert_eq!(round_sig(-2.0000004, 6), -2.0);
        assert_eq!(round_sig(0.0, 6), 0.0);
        assert!(round_sig(f64::NAN, 6).is_nan());
    }

    #[test]
    fn empty_report_csv_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit(&empty_report(), Format::Csv, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), CSV_COLUMNS.join(",") + "\n");
        let svgs = emit(&empty_report(), Format::SvgHistograms, dir.path().join("svg")).unwrap();
        assert!(svgs.is_empty());
    }

    #[test]
    fn emission_is_repeatable_and_rounded() {
        let mut r = empty_report();
        r.rows.push(ReportRow {
            model: "m".into(),
            category: "forest".into(),
            n_images: 3,
            kl_nats: Some(0.123456789),
            rank_mean: Some(1.5),
            absent: vec![Absent {
                family: Family::Texture,
                reason: "no patches".into(),
            }],
            ..Default::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        emit(&r, Format::Json, &a).unwrap();
        emit(&r, Format::Json, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        assert!(text.contains("0.123457"));
        let csv = dir.path().join("r.csv");
        emit(&r, Format::Csv, &csv).unwrap();
        let line = fs::read_to_string(&csv).unwrap().lines().nth(1).unwrap().to_string();
        assert_eq!(line, "m,forest,3,0.123457,,,1.5,,,,0,,,,,,texture: no patches");
    }

    #[test]
    fn one_category_gives_one_svg_per_family() {
        let mut r = empty_report();
        r.rows.push(ReportRow {
            model: "real".into(),
            category: "forest".into(),
            rank_mean: Some(2.0),
            ..Default::default()
        });
        r.densities.push(DensityCurve {
            model: "real".into(),
            category: "forest".into(),
            centers: vec![0.25, 0.75],
            density: vec![0.4, 0.6],
        });
        r.texture.push(crate::texture::TextureRow {
            set: "real".into(),
            label: crate::LabelSet::default().label("forest").unwrap(),
            feature: crate::texture::Feature::Contrast,
            d: 1,
            theta: 0.0,
            mean: 3.0,
            std: 0.5,
            n_patches: 4,
        });
        let dir = tempfile::tempdir().unwrap();
        let files = emit(&r, Format::SvgHistograms, dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["forest_amplitude.svg", "forest_texture.svg", "forest_alignment.svg"]);
        for f in files {
            assert!(fs::read_to_string(f).unwrap().starts_with("<svg"));
        }
    }
}
