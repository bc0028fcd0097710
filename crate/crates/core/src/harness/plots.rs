//! Loss-curve CSV files and hand-written SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::ensure_dir;

use super::{ArchitectureReport, EpochRecord};

/// Heatmap color ramp endpoints: the minimum of a frame set maps to the
/// first color, the maximum to the second, linearly per RGB channel.
pub const HEATMAP_RAMP: [[u8; 3]; 2] = [[0xf7, 0xfb, 0xff], [0x08, 0x30, 0x6b]];

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Target and predicted frames of one entity, drawn on a shared scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub entity_id: String,
    pub period_index: usize,
    pub k: usize,
    /// `(label, row-major k x k values)`.
    pub frames: Vec<(String, Vec<f64>)>,
}

/// `epoch,train_rle,val_rle,test_rle`, one row per epoch.
pub fn curves_csv(epochs: &[EpochRecord]) -> Result<String> {
    if epochs.is_empty() {
        return Err(Error::Data("no epochs to write".into()));
    }
    let mut out = String::from("epoch,train_rle,val_rle,test_rle\n");
    for e in epochs {
        writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.train_rle, e.val_rle, e.test_rle
        )
        .unwrap();
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Line chart of one or more series over a shared integer x axis.
pub fn line_chart_svg(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> Result<String> {
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::Data("line chart needs at least one point".into()));
    }
    let values: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in line chart".into()));
    }
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x = |i: usize| {
        left + if n > 1 {
            pw * i as f64 / (n - 1) as f64
        } else {
            pw / 2.0
        }
    };
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    )
    .unwrap();
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.4}</text>"#,
            left - 6.0,
            y(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">epoch</text>"#,
        left + pw / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (si, (label, vals)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 16.0 * si as f64 + 8.0;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 12.0,
            w - right + 32.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - right + 38.0,
            ly + 4.0,
            escape(label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn ramp(t: f64) -> String {
    let [a, b] = HEATMAP_RAMP;
    let c: Vec<u8> = (0..3)
        .map(|i| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * t).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// One `k x k` panel per frame, all on the set's min→max scale.
pub fn heatmap_svg(set: &FrameSet) -> Result<String> {
    let k = set.k;
    if set.frames.is_empty() {
        return Err(Error::Data("heatmap needs at least one frame".into()));
    }
    if let Some((label, f)) = set.frames.iter().find(|(_, f)| f.len() != k * k) {
        return Err(Error::Data(format!(
            "frame {label:?} has {} cells, expected {}",
            f.len(),
            k * k
        )));
    }
    let all = set.frames.iter().flat_map(|(_, f)| f.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numerical("non-finite value in heatmap".into()));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = 24.0;
    let panel = cell * k as f64;
    let gap = 20.0;
    let top = 50.0;
    let w = gap + set.frames.len() as f64 * (panel + gap);
    let h = top + panel + 40.0;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{gap}" y="20" font-family="sans-serif" font-size="14">{} period {} (scale {lo:.4} to {hi:.4})</text>"#,
        escape(&set.entity_id),
        set.period_index
    )
    .unwrap();
    for (fi, (label, frame)) in set.frames.iter().enumerate() {
        let x0 = gap + fi as f64 * (panel + gap);
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            x0 + panel / 2.0,
            top - 8.0,
            escape(label)
        )
        .unwrap();
        for (i, &v) in frame.iter().enumerate() {
            let (r, c) = (i / k, i % k);
            writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
                x0 + c as f64 * cell,
                top + r as f64 * cell,
                ramp((v - lo) / span)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn write(path: PathBuf, body: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// Writes `curves_<model>.csv` / `.svg` per architecture, a combined test
/// curve chart, and one heatmap per frame set. Returns the written paths.
pub fn emit_plots(
    reports: &[ArchitectureReport],
    frames: &[FrameSet],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut out = Vec::new();
    for r in reports {
        let name = r.architecture.name();
        write(
            dir.join(format!("curves_{name}.csv")),
            &curves_csv(&r.epochs)?,
            &mut out,
        )?;
        let series = vec![
            (
                "train".to_string(),
                r.epochs.iter().map(|e| e.train_rle).collect(),
            ),
            (
                "val".to_string(),
                r.epochs.iter().map(|e| e.val_rle).collect(),
            ),
            (
                "test".to_string(),
                r.epochs.iter().map(|e| e.test_rle).collect(),
            ),
        ];
        let svg = line_chart_svg(&format!("{name} RLE"), "RLE", &series)?;
        write(dir.join(format!("curves_{name}.svg")), &svg, &mut out)?;
    }
    if !reports.is_empty() {
        let series: Vec<(String, Vec<f64>)> = reports
            .iter()
            .map(|r| {
                (
                    r.architecture.to_string(),
                    r.epochs.iter().map(|e| e.test_rle).collect(),
                )
            })
            .collect();
        write(
            dir.join("test_rle.svg"),
            &line_chart_svg("test RLE by epoch", "RLE", &series)?,
            &mut out,
        )?;
    }
    for set in frames {
        let name = format!("heatmap_{}_p{}.svg", set.entity_id, set.period_index);
        write(dir.join(name), &heatmap_svg(set)?, &mut out)?;
    }
    Ok(out)
}
