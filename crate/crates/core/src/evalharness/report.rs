//! Plain-text result tables and an SVG chart of a layer sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::write_atomic;
use super::metrics::{MetricsRow, COLUMNS};
use super::HarnessError;

fn malformed(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_cells(path: &Path, record: &csv::StringRecord) -> Result<MetricsRow, HarnessError> {
    if record.len() != 7 {
        return Err(malformed(path, format!("expected 7 fields, got {}", record.len())));
    }
    let mut cells = [None; 6];
    for (i, cell) in cells.iter_mut().enumerate() {
        let raw = &record[i + 1];
        *cell = if raw == "NA" {
            None
        } else {
            Some(raw.parse().map_err(|_| malformed(path, format!("bad number {raw:?}")))?)
        };
    }
    Ok(MetricsRow { cells })
}

fn read_rows(path: &Path, first: &str) -> Result<Vec<(String, MetricsRow)>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(path, e.to_string()))?.clone();
    let expected: Vec<&str> = std::iter::once(first).chain(COLUMNS).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(malformed(path, format!("header must be {}", expected.join(","))));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| malformed(path, e.to_string()))?;
            Ok((r[0].to_string(), parse_cells(path, &r)?))
        })
        .collect()
}

/// Reads `metrics.csv` as `(stat, row)` pairs.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, MetricsRow)>, HarnessError> {
    read_rows(path, "stat")
}

/// Reads `layersweep.csv` as `(layer, row)` pairs.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(u8, MetricsRow)>, HarnessError> {
    read_rows(path, "layer")?
        .into_iter()
        .map(|(l, row)| {
            let layer = l.parse().map_err(|_| malformed(path, format!("bad layer {l:?}")))?;
            Ok((layer, row))
        })
        .collect()
}

fn read_meta(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Fixed-width table with one row per labelled metrics row.
pub fn render_table(rows: &[(String, MetricsRow)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max("Method".len());
    let mut out = format!("{:<width$}", "Method");
    for c in COLUMNS {
        let _ = write!(out, " {c:>7}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + 8 * COLUMNS.len()));
    out.push('\n');
    for (method, row) in rows {
        let _ = write!(out, "{method:<width$}");
        for cell in row.cells {
            match cell {
                Some(v) => {
                    let _ = write!(out, " {v:>7.2}");
                }
                None => {
                    let _ = write!(out, " {:>7}", "NA");
                }
            }
        }
        out.push('\n');
    }
    out
}

const SERIES_COLOURS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#000000"];

/// Line chart of every metric column against the layer index.
pub fn render_sweep_svg(points: &[(u8, MetricsRow)], title: &str) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 110.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let n = points.len().max(2) as f64;
    let x = |i: usize| left + plot_w * i as f64 / (n - 1.0);
    let y = |v: f64| top + plot_h * (1.0 - v / 100.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#ddd"/><text class="ytick" x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
            left + plot_w,
            left - 6.0,
            ty + 4.0
        );
    }
    for (i, (layer, _)) in points.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="xtick" x="{:.1}" y="{:.1}" text-anchor="middle">L{layer}</text>"#,
            x(i),
            top + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">layer</text>"#,
        left + plot_w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">accuracy (%)</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (c, name) in COLUMNS.iter().enumerate() {
        let colour = SERIES_COLOURS[c];
        let coords: Vec<String> = points
            .iter()
            .enumerate()
            .filter_map(|(i, (_, row))| row.cells[c].map(|v| format!("{:.1},{:.1}", x(i), y(v))))
            .collect();
        let stroke = if *name == "TA" { 2.5 } else { 1.5 };
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{name}" fill="none" stroke="{colour}" stroke-width="{stroke}" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 16.0 * c as f64;
        let lx = left + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="{stroke}"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn method_label(meta: &BTreeMap<String, String>) -> String {
    let get = |k: &str| meta.get(k).map_or("?", String::as_str);
    let mut label = get("classifier").to_uppercase();
    if get("lda_components") != "none" {
        label.push_str(" + LDA");
    }
    match get("fusion") {
        "none" => {}
        f => {
            let _ = write!(label, " {f}");
        }
    }
    let _ = write!(label, " [{}]", get("streams"));
    label
}

/// Rendered report of a run directory.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub svg: Option<PathBuf>,
}

/// Renders `metrics.csv` and/or `layersweep.csv` found in `run_dir` into
/// `report.txt`, plus `layersweep.svg` for sweeps.
pub fn render_report(run_dir: &Path) -> Result<Report, HarnessError> {
    let meta = read_meta(&run_dir.join("run_meta.txt"));
    let metrics_path = run_dir.join("metrics.csv");
    let sweep_path = run_dir.join("layersweep.csv");
    let mut text = String::new();
    let mut svg = None;

    if metrics_path.exists() {
        let rows = read_metrics_csv(&metrics_path)?;
        let label = method_label(&meta);
        let labelled: Vec<(String, MetricsRow)> = rows
            .into_iter()
            .map(|(stat, row)| (if stat == "mean" { label.clone() } else { format!("  ({stat})") }, row))
            .collect();
        text.push_str(&render_table(&labelled));
    }
    if sweep_path.exists() {
        let points = read_sweep_csv(&sweep_path)?;
        let labelled: Vec<(String, MetricsRow)> = points.iter().map(|(l, r)| (format!("L{l}"), *r)).collect();
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&render_table(&labelled));
        let title = format!(
            "Layer sweep: {}{}",
            meta.get("classifier").map_or("?", String::as_str).to_uppercase(),
            if meta.get("lda_components").is_some_and(|v| v != "none") { " + LDA" } else { "" }
        );
        let path = run_dir.join("layersweep.svg");
        write_atomic(&path, &render_sweep_svg(&points, &title))?;
        svg = Some(path);
    }
    if text.is_empty() {
        return Err(malformed(run_dir, "no metrics.csv or layersweep.csv to report"));
    }
    write_atomic(&run_dir.join("report.txt"), &text)?;
    Ok(Report { text, svg })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64) -> MetricsRow {
        MetricsRow {
            cells: [Some(v), Some(v), None, Some(v), Some(v), Some(v)],
        }
    }

    #[test]
    fn table_layout() {
        let t = render_table(&[("GNB + LDA".into(), row(66.591))]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Method"));
        assert!(lines[0].ends_with("TA"));
        assert!(lines[2].contains("66.59") && lines[2].contains("NA"));
    }

    #[test]
    fn svg_has_one_tick_per_layer() {
        let points: Vec<(u8, MetricsRow)> = (1..=13).map(|l| (l, row(5.0 * l as f64))).collect();
        let svg = render_sweep_svg(&points, "sweep");
        assert_eq!(svg.matches(r#"class="xtick""#).count(), 13);
        assert_eq!(svg.matches(r#"class="series""#).count(), 6);
        assert!(svg.contains(">L13<"));
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("layersweep.csv"),
            "layer,R,P,B,I,F,TA\n1,NA,10.0000,10,10,10,20.5\n2,1,1,1,1,1,1\n",
        )
        .unwrap();
        fs::write(dir.path().join("run_meta.txt"), "classifier=gnb\nlda_components=none\n").unwrap();
        let report = render_report(dir.path()).unwrap();
        assert!(report.text.contains("L1") && report.text.contains("20.50"));
        assert!(report.svg.unwrap().exists());
        assert!(dir.path().join("report.txt").exists());

        fs::write(dir.path().join("layersweep.csv"), "layer,R\n1,2\n").unwrap();
        assert!(matches!(render_report(dir.path()), Err(HarnessError::Malformed { .. })));
        let empty = tempfile::tempdir().unwrap();
        assert!(render_report(empty.path()).is_err());
    }
}
