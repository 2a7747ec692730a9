//! Minimal SVG line and bar charts for report overlays.

use std::fmt::Write;

use super::{EvalReport, POOLED};
use crate::texture::Feature;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    series: Vec<(String, Vec<(f64, f64)>)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn num(v: f64) -> String {
    let r = super::round_sig(v, 4);
    serde_json::to_string(&r).unwrap_or_default()
}

fn bounds(series: &[(String, Vec<(f64, f64)>)]) -> Option<(f64, f64, f64, f64)> {
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    b.map(|(x0, x1, y0, y1)| {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        (x0, x1, y0.min(0.0), y1)
    })
}

fn panel(out: &mut String, p: &Panel, ox: f64, oy: f64, w: f64, h: f64) {
    let (l, r, t, b) = (56.0, 12.0, 28.0, 40.0);
    let (pw, ph) = (w - l - r, h - t - b);
    let _ = writeln!(out, r#"<g transform="translate({ox:.2},{oy:.2})">"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        esc(p.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{l:.2}" y="{t:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
        l + pw / 2.0,
        h - 6.0,
        esc(p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 12 {:.2})">{}</text>"#,
        t + ph / 2.0,
        t + ph / 2.0,
        esc(p.y_label)
    );
    if let Some((x0, x1, y0, y1)) = bounds(&p.series) {
        let sx = |x: f64| l + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;
        for (v, anchor, x) in [(x0, "start", l), (x1, "end", l + pw)] {
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="{anchor}" font-size="10">{}</text>"#,
                t + ph + 14.0,
                num(v)
            );
        }
        for (v, y) in [(y0, t + ph), (y1, t + 10.0)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" font-size="10">{}</text>"#,
                l - 4.0,
                num(v)
            );
        }
        for (i, (name, pts)) in p.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = pts
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
            let ly = t + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{ly:.2}" text-anchor="end" font-size="11" fill="{color}">{}</text>"#,
                l + pw - 6.0,
                esc(name)
            );
        }
    }
    out.push_str("</g>\n");
}

fn document(title: &str, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<title>{}</title>\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
        esc(title)
    )
}

/// Amplitude densities of every dataset for one category, overlaid.
pub(super) fn amplitude(report: &EvalReport, category: &str) -> Option<String> {
    let series: Vec<_> = report
        .densities
        .iter()
        .filter(|d| d.category == category)
        .map(|d| {
            let pts = d.centers.iter().copied().zip(d.density.iter().copied()).collect();
            (d.model.clone(), pts)
        })
        .collect();
    if series.is_empty() {
        return None;
    }
    let title = format!("amplitude density: {category}");
    let mut body = String::new();
    panel(
        &mut body,
        &Panel {
            title: &title,
            x_label: "normalized amplitude",
            y_label: "probability",
            series,
        },
        0.0,
        0.0,
        WIDTH,
        HEIGHT,
    );
    Some(document(&title, &body))
}

/// One panel per Haralick feature: mean over angles against distance.
pub(super) fn texture(report: &EvalReport, category: &str) -> Option<String> {
    let rows: Vec<_> = report
        .texture
        .iter()
        .filter(|r| r.label.as_str() == category)
        .collect();
    if rows.is_empty() {
        return None;
    }
    let models = report.models();
    let title = format!("texture: {category}");
    let mut body = String::new();
    for (fi, feature) in Feature::ALL.into_iter().enumerate() {
        let series = models
            .iter()
            .filter_map(|m| {
                let mut by_d: Vec<(usize, f64, usize)> = Vec::new();
                for r in rows.iter().filter(|r| r.set == *m && r.feature == feature) {
                    match by_d.iter_mut().find(|e| e.0 == r.d) {
                        Some(e) => {
                            e.1 += r.mean;
                            e.2 += 1;
                        }
                        None => by_d.push((r.d, r.mean, 1)),
                    }
                }
                (!by_d.is_empty()).then(|| {
                    let pts = by_d.iter().map(|&(d, s, n)| (d as f64, s / n as f64)).collect();
                    (m.to_string(), pts)
                })
            })
            .collect();
        let (w, h) = (WIDTH / 2.0, HEIGHT / 2.0);
        panel(
            &mut body,
            &Panel {
                title: feature.name(),
                x_label: "distance",
                y_label: "mean",
                series,
            },
            (fi % 2) as f64 * w,
            (fi / 2) as f64 * h,
            w,
            h,
        );
    }
    Some(document(&title, &body))
}

/// Mean rank per dataset as bars.
pub(super) fn alignment(report: &EvalReport, category: &str) -> Option<String> {
    let bars: Vec<(&str, f64)> = report
        .rows
        .iter()
        .filter(|r| r.category == category)
        .filter_map(|r| r.rank_mean.map(|m| (r.model.as_str(), m)))
        .collect();
    if bars.is_empty() {
        return None;
    }
    let title = if category == POOLED {
        "mean caption rank: all categories".to_string()
    } else {
        format!("mean caption rank: {category}")
    };
    let top = bars.iter().map(|b| b.1).fold(1.0, f64::max);
    let (l, t, pw, ph) = (56.0, 36.0, WIDTH - 80.0, HEIGHT - 80.0);
    let slot = pw / bars.len() as f64;
    let mut body = format!(
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n\
         <line x1=\"{l:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>\n",
        WIDTH / 2.0,
        esc(&title),
        t + ph,
        l + pw,
        t + ph
    );
    for (i, (name, v)) in bars.iter().enumerate() {
        let bh = v / top * ph;
        let x = l + slot * i as f64 + slot * 0.15;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            body,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{color}"/>"#,
            t + ph - bh,
            slot * 0.7
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(
            body,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            t + ph + 16.0,
            esc(name)
        );
        let _ = writeln!(
            body,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            t + ph - bh - 4.0,
            num(*v)
        );
    }
    Some(document(&title, &body))
}
